// Command-line front end.  Every numerical knob is a flag whose name equals
// the configuration key, so the same settings work on the command line and in
// an INI file passed with --config.  Exit codes: 0 when every recorded check
// passed, 1 for usage/configuration errors, 2 when a check failed or the
// construction broke down (the summary names the operation and location).

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "smartlab/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for piecewise-polynomial filtrations, "
                 "reweighted measures, and their path statistics"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI file with key=value lines mirroring the flags");
    app.allow_config_extras(CLI::config_extras_mode::error);

    smartlab::RunConfig cfg;
    bool serial = false;

    app.add_option("--dim", cfg.dim, "domain dimension")->capture_default_str();
    app.add_option("--depth", cfg.depth, "partition depth")->capture_default_str();
    app.add_option("--rule", cfg.rule, "split rule: midpoint, fixed, random")
        ->capture_default_str();
    app.add_option("--ratio", cfg.ratio, "cut fraction for the fixed rule")
        ->capture_default_str();
    app.add_option("--ratio_lo", cfg.ratio_lo, "lower cut fraction for the random rule")
        ->capture_default_str();
    app.add_option("--ratio_hi", cfg.ratio_hi, "upper cut fraction for the random rule")
        ->capture_default_str();
    app.add_option("--space", cfg.space, "local space: total (polynomials) or affine (span of g)")
        ->capture_default_str();
    app.add_option("--degree", cfg.degree, "total polynomial degree")->capture_default_str();
    app.add_option("--g_coef", cfg.g_coef,
                   "affine coefficients c0, c1, ... of g(x) = c0 + sum c_i x_i")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--sparsity", cfg.sparsity, "minimum gap minus one between active levels")
        ->capture_default_str();
    app.add_option("--bound_L", cfg.bound_L, "sup-norm budget of each difference")
        ->capture_default_str();
    app.add_option("--diff_rule", cfg.diff_rule,
                   "difference coefficients: rademacher, gaussian, haar")
        ->capture_default_str();
    app.add_option("--first_level", cfg.first_level, "first active level")
        ->capture_default_str();
    app.add_option("--lambda", cfg.lambda, "perturbation size of the reweighting")
        ->capture_default_str();
    app.add_option("--ell", cfg.ell, "refinement depth of the reweighting (-1: automatic)")
        ->capture_default_str();
    app.add_option("--seed", cfg.seed, "master seed; every work item derives its own stream")
        ->capture_default_str();
    app.add_option("--n_paths", cfg.n_paths, "random-walk paths for the tail experiment")
        ->capture_default_str();
    app.add_option("--horizon", cfg.horizon, "random-walk horizon")->capture_default_str();
    app.add_option("--a_grid", cfg.a_grid, "passage thresholds a")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--b_grid", cfg.b_grid, "square-function budgets b")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--lil_r", cfg.lil_r, "normalization factor r in sqrt(r S^2 loglog S^2)")
        ->capture_default_str();
    app.add_option("--n_points", cfg.n_points, "sampled points per experiment")
        ->capture_default_str();
    app.add_option("--depth_grid", cfg.depth_grid,
                   "depths at which ratios are recorded (default: spread over [1, depth])")
        ->delimiter(',');
    app.add_option("--lambda_grid", cfg.lambda_grid,
                   "decreasing lambdas for the box-dimension sweep")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--tol_orthogonality", cfg.tol_orthogonality,
                   "bound on the orthogonality defect")
        ->capture_default_str();
    app.add_option("--tol_compatibility", cfg.tol_compatibility,
                   "bound on serialization round-trip drift")
        ->capture_default_str();
    app.add_option("--tol_tilted", cfg.tol_tilted,
                   "bound on the reweighted orthogonality defect")
        ->capture_default_str();
    app.add_option("--tol_identity", cfg.tol_identity,
                   "bound on the variation-identity residual")
        ->capture_default_str();
    app.add_option("--cond_guard", cfg.cond_guard, "conditioning guard for the linear solves")
        ->capture_default_str();
    app.add_option("--out_dir,--out", cfg.out_dir, "directory for the artifact files")
        ->capture_default_str();
    app.add_flag("--serial", serial,
                 "run the serial reference kernels (otherwise OMP_NUM_THREADS sets the workers)");

    struct SubDef {
        const char* name;
        const char* desc;
    };
    const SubDef subs[] = {
        {"tree", "build the partition and write it out"},
        {"generate", "generate a sequence with orthogonal differences"},
        {"change-measure", "build the reweighted measure for the generated sequence"},
        {"verify", "change-measure plus exponent-window and residual verification"},
        {"freedman", "random-walk first-passage tails against the exponential bound"},
        {"lil", "normalized-growth ratios across depths"},
        {"variation", "variation ratios, identity decomposition, and histogram"},
        {"dimension", "box-count dimension of the variation survivor sets"},
        {"suite", "every stage in one run with the shared configuration"},
    };
    for (const SubDef& s : subs) app.add_subcommand(s.name, s.desc)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    for (const SubDef& s : subs)
        if (app.got_subcommand(s.name)) cfg.command = s.name;
    cfg.parallel = !serial;

    try {
        const smartlab::RunOutcome out = smartlab::run_pipeline(cfg);
        std::fputs(out.summary.c_str(), stdout);
        return out.exit_code;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
