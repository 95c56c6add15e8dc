#include "smartlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "smartlab/chains.hpp"
#include "smartlab/change_of_measure.hpp"
#include "smartlab/errors.hpp"
#include "smartlab/experiments.hpp"
#include "smartlab/io.hpp"
#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"
#include "smartlab/report.hpp"
#include "smartlab/rng.hpp"
#include "smartlab/smartingale.hpp"

namespace smartlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void bad_config(const std::string& what) {
    throw std::invalid_argument("config: " + what);
}

template <class T>
std::string join_csv(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_same_v<T, double>) {
            out += fmt_g17(v[i]);
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out;
}

bool is_one_of(const std::string& v, std::initializer_list<const char*> opts) {
    for (const char* o : opts)
        if (v == o) return true;
    return false;
}

SplitSpec split_spec_of(const RunConfig& cfg) {
    SplitSpec spec;
    spec.rule = cfg.rule == "midpoint"  ? SplitRule::midpoint
                : cfg.rule == "fixed"   ? SplitRule::fixed_ratio
                                        : SplitRule::seeded_random;
    spec.ratio = cfg.ratio;
    spec.ratio_lo = cfg.ratio_lo;
    spec.ratio_hi = cfg.ratio_hi;
    spec.seed = cfg.seed;
    return spec;
}

PolySpace space_of(const RunConfig& cfg) {
    if (cfg.space == "total") return PolySpace::total_degree(cfg.dim, cfg.degree);
    return PolySpace::span_affine(cfg.g_coef);
}

DiffRule diff_rule_of(const RunConfig& cfg) {
    if (cfg.diff_rule == "rademacher") return DiffRule::rademacher_like;
    if (cfg.diff_rule == "gaussian") return DiffRule::gaussian_coeff;
    return DiffRule::haar;
}

// Smallest refinement depth whose cell count can host both local spaces.
int auto_ell(const PolySpace& s) {
    const int need = s.dim_s() + s.dim_s2();
    int ell = 0;
    while ((2 << ell) < need) ++ell;
    return ell;
}

// Up to six roughly even depths ending at the full depth.
std::vector<int> depth_grid_of(const RunConfig& cfg) {
    if (!cfg.depth_grid.empty()) return cfg.depth_grid;
    const int k = std::min(6, cfg.depth);
    std::vector<int> grid;
    for (int i = 1; i <= k; ++i) {
        const int d = std::max(1, static_cast<int>(std::lround(
                                      cfg.depth * static_cast<double>(i) / k)));
        if (grid.empty() || d > grid.back()) grid.push_back(d);
    }
    return grid;
}

struct Lab {
    PartitionTree t;
    Smartingale f; // f.base is the Lebesgue base measure, f.space the local space
    int ell_eff = 0;
    bool general = false; // general reweighting path (dim S > 1)
};

Lab build_lab(const RunConfig& cfg) {
    const PolySpace s = space_of(cfg);
    if (cfg.diff_rule == "haar" && s.dim_s() != 1)
        bad_config("diff_rule=haar needs a one-dimensional local space");
    const bool general = s.dim_s() > 1;
    const int ell_eff = general ? (cfg.ell >= 0 ? cfg.ell : auto_ell(s)) : 0;
    if (general && (2 << ell_eff) < s.dim_s() + s.dim_s2())
        bad_config("ell gives fewer refinement cells than the local spaces need");
    PartitionTree t = PartitionTree::build(Box::unit_cube(cfg.dim), cfg.depth, split_spec_of(cfg));
    MeasureTree base = MeasureTree::lebesgue(t);
    const int sparsity = general ? std::max(cfg.sparsity, ell_eff) : cfg.sparsity;
    const int max_level = general ? cfg.depth - ell_eff : cfg.depth;
    if (max_level < cfg.first_level)
        bad_config("depth leaves no room for first_level plus the refinement depth");
    Smartingale f = generate_smartingale(t, s, base, sparsity, cfg.bound_L, cfg.seed,
                                         diff_rule_of(cfg), cfg.first_level, max_level);
    return Lab{std::move(t), std::move(f), ell_eff, general};
}

struct Ctx {
    const RunConfig& cfg;
    Summary& sum;
    std::vector<std::string>& files;
    std::string hash_hex;
    std::vector<int> grid;
};

std::string path_join(const std::string& dir, const std::string& name) {
    if (dir.empty() || dir == ".") return name;
    return dir.back() == '/' ? dir + name : dir + "/" + name;
}

void emit_file(Ctx& c, const std::string& name, const std::string& what,
               const std::string& payload) {
    const std::string path = path_join(c.cfg.out_dir, name);
    write_file(path, "# config-hash " + c.hash_hex + "\n# " + what + "\n" + payload);
    c.files.push_back(path);
}

std::string le(double tol) { return "<= " + fmt_g17(tol); }

// ---------------------------------------------------------------------------

void emit_tree(Ctx& c, const PartitionTree& t) {
    std::ostringstream os;
    t.serialize(os);
    emit_file(c, "tree.txt", "binary partition of the domain", os.str());
    const ShapeReport rep = t.shape_report();
    c.sum.check("sibling-balance", rep.min_sibling_mass_ratio >= 1.0 / 3.0 - 1e-12,
                fmt_g17(rep.min_sibling_mass_ratio), ">= 1/3");
    c.sum.constant("tree-leaves", static_cast<double>(t.level_size(t.depth())));
    c.sum.constant("tree-mesh", t.max_diam(t.depth()));
}

void emit_generate(Ctx& c, const Lab& lab) {
    std::ostringstream os;
    serialize_smartingale(os, lab.t, lab.f);
    const std::string payload = os.str();
    emit_file(c, "smartingale.txt", "piecewise-polynomial sequence with orthogonal differences",
              payload);

    const double defect = verify_smartingale(lab.t, lab.f, lab.f.base, c.cfg.parallel);
    c.sum.check("orthogonality-defect", defect <= c.cfg.tol_orthogonality, fmt_g17(defect),
                le(c.cfg.tol_orthogonality));

    std::istringstream is(payload);
    const Smartingale g = deserialize_smartingale(is, lab.t);
    const Box dom = lab.t.box(0, 0);
    std::vector<double> x(dom.lo.size());
    auto rng = engine_for(c.cfg.seed, 9001);
    double worst = 0.0;
    for (int i = 0; i < 64; ++i) {
        for (std::size_t a = 0; a < x.size(); ++a) x[a] = uniform(rng, dom.lo[a], dom.hi[a]);
        worst = std::max(worst, std::abs(lab.f.eval(lab.t, lab.f.last_step(), x.data()) -
                                         g.eval(lab.t, g.last_step(), x.data())));
    }
    c.sum.check("serialization-roundtrip", worst <= c.cfg.tol_compatibility, fmt_g17(worst),
                le(c.cfg.tol_compatibility));
    c.sum.constant("active-levels", static_cast<double>(lab.f.steps.size()));
    c.sum.constant("last-active-level", static_cast<double>(lab.f.last_step()));
}

TiltedMeasure make_tilt(const Ctx& c, const Lab& lab, double lambda) {
    if (lab.general) return build_measure_general(lab.t, lab.f, lambda, lab.ell_eff, c.cfg.parallel);
    return build_measure_1d(lab.t, lab.f, lambda, c.cfg.parallel);
}

void emit_tilt(Ctx& c, const Lab& lab, const TiltedMeasure& tm) {
    std::ostringstream os;
    tm.measure.serialize(os);
    emit_file(c, "measure.txt", "reweighted measure (piecewise-constant density over the base)",
              os.str());

    std::string csv =
        "level,atoms,skipped,min_density,max_density,max_rel_jump,det_t_min,det_ttilde_min,"
        "alpha_max,dt_norm_max,t_norm_max,solve_residual,det_bound_ok\n";
    double min_density = std::numeric_limits<double>::infinity();
    double det_tilde_min = std::numeric_limits<double>::infinity();
    double max_solve = 0.0;
    bool det_ok = true;
    for (const StepDiagnostics& st : tm.steps) {
        csv += std::to_string(st.level) + "," + std::to_string(st.atoms) + "," +
               std::to_string(st.skipped) + "," + fmt_g17(st.min_density) + "," +
               fmt_g17(st.max_density) + "," + fmt_g17(st.max_rel_jump) + "," +
               fmt_g17(st.det_t_min) + "," + fmt_g17(st.det_ttilde_min) + "," +
               fmt_g17(st.alpha_max) + "," + fmt_g17(st.dt_norm_max) + "," +
               fmt_g17(st.t_norm_max) + "," + fmt_g17(st.solve_residual) + "," +
               (st.det_bound_ok ? "1" : "0") + "\n";
        min_density = std::min(min_density, st.min_density);
        det_tilde_min = std::min(det_tilde_min, st.det_ttilde_min);
        max_solve = std::max(max_solve, st.solve_residual);
        det_ok = det_ok && st.det_bound_ok;
    }
    emit_file(c, "tilt_steps.csv", "per-level diagnostics of the reweighting", csv);

    const double defect = verify_smartingale(lab.t, tm.tilted, tm.measure, c.cfg.parallel);
    c.sum.check("tilted-orthogonality", defect <= c.cfg.tol_tilted, fmt_g17(defect),
                le(c.cfg.tol_tilted));
    c.sum.check("density-positive", min_density > 0.0, fmt_g17(min_density), "> 0");
    c.sum.check("conditioning-guard", det_tilde_min >= 1.0 / c.cfg.cond_guard,
                fmt_g17(det_tilde_min), ">= " + fmt_g17(1.0 / c.cfg.cond_guard));
    if (lab.general)
        c.sum.check("determinant-floor", det_ok, det_ok ? "held on every atom" : "violated",
                    "|det| >= (1 - alpha^2)^(m/2)");
    c.sum.constant("tilt-lambda", tm.lambda);
    c.sum.constant("tilt-ell", static_cast<double>(tm.ell));
    c.sum.constant("tilt-min-density", min_density);
    c.sum.constant("tilt-max-solve-residual", max_solve);
}

void emit_verify(Ctx& c, const Lab& lab, const TiltedMeasure& tm) {
    const MeasureVerification v = verify_measure(lab.t, lab.f, tm, 64, c.cfg.seed, c.cfg.parallel);
    c.sum.check("measure-residual", v.residual <= c.cfg.tol_tilted, fmt_g17(v.residual),
                le(c.cfg.tol_tilted));
    c.sum.check("mass-conservation", v.mass_drift <= 1e-10, fmt_g17(v.mass_drift), le(1e-10));
    const double lam = tm.lambda;
    if (!lab.general) {
        const double eps = 1e-8;
        c.sum.check("density-exponent-window",
                    v.density_exponent_min >= -3.0 * lam - eps &&
                        v.density_exponent_max <= 2.0 * lam + eps,
                    "[" + fmt_g17(v.density_exponent_min) + ", " + fmt_g17(v.density_exponent_max) +
                        "]",
                    "within [-3 lambda, 2 lambda]");
        c.sum.check("measure-exponent-window",
                    v.exponent_min >= 1.0 - 2.0 * lam - eps &&
                        v.exponent_max <= 1.0 + 3.0 * lam + eps,
                    "[" + fmt_g17(v.exponent_min) + ", " + fmt_g17(v.exponent_max) + "]",
                    "within [1 - 2 lambda, 1 + 3 lambda]");
        c.sum.check("moment-dominance", v.theta_excess <= 1e-12, fmt_g17(v.theta_excess),
                    le(1e-12));
        if (lam > 1.0 / 3.0)
            c.sum.note("the exponent windows are proved for lambda <= 1/3; beyond that "
                       "violations are expected");
    } else {
        c.sum.check("growth-envelope", v.fitted_c <= 25.0, fmt_g17(v.fitted_c),
                    "<= 25 (empirical ceiling on |exponent - 1| / lambda)");
    }
    c.sum.constant("verify-exponent-min", v.exponent_min);
    c.sum.constant("verify-exponent-max", v.exponent_max);
    c.sum.constant("verify-fitted-c", v.fitted_c);
    c.sum.constant("verify-embed-base", v.embed_base);
    c.sum.constant("verify-embed-tilted", v.embed_tilted);
    c.sum.constant("verify-pairs", static_cast<double>(v.pairs));
}

void emit_freedman(Ctx& c) {
    const FreedmanResult r = freedman_tail(c.cfg.bound_L, c.cfg.a_grid, c.cfg.b_grid,
                                           c.cfg.n_paths, c.cfg.horizon, c.cfg.seed,
                                           c.cfg.parallel);
    std::string csv = "a,b,bound,empirical,std_error,hits,pass\n";
    double worst_margin = std::numeric_limits<double>::infinity();
    for (const FreedmanCell& cell : r.cells) {
        csv += fmt_g17(cell.a) + "," + fmt_g17(cell.b) + "," + fmt_g17(cell.bound) + "," +
               fmt_g17(cell.empirical) + "," + fmt_g17(cell.std_error) + "," +
               std::to_string(cell.hits) + "," + (cell.pass ? "1" : "0") + "\n";
        worst_margin = std::min(worst_margin,
                                cell.bound + 3.0 * cell.std_error - cell.empirical);
    }
    emit_file(c, "freedman.csv", "first-passage tail frequencies against the exponential bound",
              csv);
    c.sum.check("tail-bound", r.all_pass,
                r.all_pass ? "every cell within bound + 3 SE" : "a cell exceeded bound + 3 SE",
                "empirical <= bound + 3 SE on every (a, b) cell");
    c.sum.constant("freedman-worst-margin", worst_margin);
    c.sum.constant("freedman-paths", static_cast<double>(r.n_paths));
}

void emit_lil(Ctx& c, const Lab& lab) {
    const LilResult res = lil_ratio(lab.t, lab.f, lab.f.base, c.cfg.lil_r, c.grid,
                                    c.cfg.n_points, c.cfg.seed, c.cfg.parallel);
    std::string points = "depth,point,ratio\n";
    bool finite = true;
    long long skipped_total = 0;
    for (std::size_t d = 0; d < res.depths.size(); ++d) {
        skipped_total += res.skipped[d];
        for (std::size_t i = 0; i < res.ratios[d].size(); ++i) {
            const double v = res.ratios[d][i];
            if (!std::isnan(v) && !std::isfinite(v)) finite = false;
            points += std::to_string(res.depths[d]) + "," + std::to_string(i) + "," + fmt_g17(v) +
                      "\n";
        }
    }
    emit_file(c, "lil_points.csv", "normalized-growth ratios at sampled points", points);
    std::string curve = "depth,p50,p99\n";
    for (std::size_t d = 0; d < res.depths.size(); ++d)
        curve += std::to_string(res.depths[d]) + "," + fmt_g17(res.p50[d]) + "," +
                 fmt_g17(res.p99[d]) + "\n";
    emit_file(c, "lil_ratio_vs_depth.csv", "percentiles of the normalized-growth ratio by depth",
              curve);
    c.sum.check("ratios-finite", finite, finite ? "all sampled ratios finite" : "non-finite ratio",
                "every ratio below the guard is finite");
    c.sum.constant("lil-p50-deepest", res.p50.back());
    c.sum.constant("lil-p99-deepest", res.p99.back());
    c.sum.constant("lil-skipped-total", static_cast<double>(skipped_total));
}

void emit_square_stopping(Ctx& c, const Lab& lab) {
    std::vector<int> depths;
    if (c.cfg.depth >= 2) depths.push_back(std::max(1, c.cfg.depth / 2));
    depths.push_back(c.cfg.depth);
    const SquareComparisonResult sq = square_comparison(lab.t, lab.f, lab.f.base, depths,
                                                        c.cfg.n_points, c.cfg.seed,
                                                        c.cfg.parallel);
    bool finite = true;
    for (double v : sq.c_emp) finite = finite && std::isfinite(v);
    c.sum.check("square-comparison-finite", finite, finite ? "all ratios finite" : "non-finite",
                "finite empirical comparison constants");
    if (lab.f.space.dim_s() == 1 && lab.f.space.contains_constants())
        c.sum.check("square-comparison-contraction", sq.c_emp.back() <= 1.0 + 1e-9,
                    fmt_g17(sq.c_emp.back()), "<= 1 for one-dimensional constant spaces");
    c.sum.constant("square-ratio-coarse", sq.c_emp.front());
    c.sum.constant("square-ratio-deep", sq.c_emp.back());

    const long long probe_points = std::min<long long>(c.cfg.n_points, 200);
    const StoppingResult probe = stopping_inclusion(lab.t, lab.f, lab.f.base, {c.cfg.bound_L},
                                                    probe_points, c.cfg.seed, c.cfg.parallel);
    const double a_safe = std::max(2.0 * probe.fitted_K * c.cfg.bound_L, c.cfg.bound_L);
    const StoppingResult st = stopping_inclusion(lab.t, lab.f, lab.f.base, {a_safe},
                                                 c.cfg.n_points, c.cfg.seed, c.cfg.parallel);
    c.sum.check("projection-passage", st.violations[0] == 0,
                std::to_string(st.violations[0]) + " violations",
                "0 violations at thresholds >= 2 K L");
    c.sum.constant("passage-fitted-K", st.fitted_K);
    c.sum.constant("passage-beta", st.beta);
    c.sum.constant("passage-threshold", a_safe);
    c.sum.constant("passage-triggered", static_cast<double>(st.triggered[0]));
}

void emit_variation(Ctx& c, const Lab& lab, const TiltedMeasure& tm) {
    const VariationResult res = variation_ratio(lab.t, lab.f, tm, c.grid, c.cfg.n_points,
                                                c.cfg.seed, c.cfg.parallel);
    std::string points = "depth,point,ratio\n";
    for (std::size_t d = 0; d < res.depths.size(); ++d)
        for (std::size_t i = 0; i < res.ratios[d].size(); ++i)
            points += std::to_string(res.depths[d]) + "," + std::to_string(i) + "," +
                      fmt_g17(res.ratios[d][i]) + "\n";
    emit_file(c, "variation_points.csv", "ratio of the sequence to its cumulative variation",
              points);

    const int deepest = res.depths.back();
    std::vector<double> vals;
    for (double v : res.ratios.back())
        if (!std::isnan(v)) vals.push_back(v);
    std::string hist = "bin_lo,bin_hi,count\n";
    if (!vals.empty()) {
        const auto [mn_it, mx_it] = std::minmax_element(vals.begin(), vals.end());
        const double lo = *mn_it;
        const double hi = *mx_it;
        const int nbins = hi > lo ? 40 : 1;
        const double w = hi > lo ? (hi - lo) / nbins : 1.0;
        std::vector<long long> count(nbins, 0);
        for (double v : vals) {
            int b = static_cast<int>((v - lo) / w);
            b = std::clamp(b, 0, nbins - 1);
            ++count[b];
        }
        for (int b = 0; b < nbins; ++b)
            hist += fmt_g17(lo + b * w) + "," + fmt_g17(lo + (b + 1) * w) + "," +
                    std::to_string(count[b]) + "\n";
    }
    emit_file(c, "variation_ratio_hist_depth" + std::to_string(deepest) + ".csv",
              "histogram of the variation ratio at the deepest level", hist);

    c.sum.check("identity-decomposition", res.max_identity_residual <= c.cfg.tol_identity,
                fmt_g17(res.max_identity_residual), le(c.cfg.tol_identity));
    c.sum.check("variation-monotone", res.monotone_ok,
                res.monotone_ok ? "V nondecreasing at every point" : "V decreased somewhere",
                "cumulative variation nondecreasing in depth");
    c.sum.constant("variation-threshold", res.threshold);
    c.sum.constant("variation-frac-above-deepest", res.frac_above_deepest);
    c.sum.constant("variation-frac-above-last-quarter", res.frac_above_last_quarter);
    c.sum.constant("variation-skipped-deepest", static_cast<double>(res.skipped.back()));
}

void emit_dimension(Ctx& c, const Lab& lab) {
    std::vector<int> levels;
    for (int l = std::max(1, c.cfg.depth - 4); l <= c.cfg.depth; ++l) levels.push_back(l);
    std::string csv = "lambda,level,mesh,count,slope,std_error\n";
    bool trend_ok = true;
    bool have_prev = false;
    double prev_slope = 0.0, prev_se = 0.0;
    double final_slope = kNaN, final_se = kNaN;
    int fits = 0;
    for (double lam : c.cfg.lambda_grid) {
        const auto sv = variation_survivors(lab.t, lab.f, levels, lam / 2.0, c.cfg.parallel);
        bool nonempty = true;
        for (const SurvivorSet& s : sv) {
            csv += fmt_g17(lam) + "," + std::to_string(s.level) + "," +
                   fmt_g17(lab.t.max_diam(s.level)) + "," + std::to_string(s.atoms.size()) +
                   ",nan,nan\n";
            nonempty = nonempty && !s.atoms.empty();
        }
        if (!nonempty) {
            c.sum.check("survivors-nonempty", false, "an empty level at lambda " + fmt_g17(lam),
                        "every inspected level keeps at least one atom");
            continue;
        }
        const BoxDimensionFit fit = box_dimension(sv, lab.t);
        csv += fmt_g17(lam) + ",-1,nan,nan," + fmt_g17(fit.slope) + "," + fmt_g17(fit.std_error) +
               "\n";
        if (have_prev &&
            fit.slope < prev_slope - 2.0 * (prev_se + fit.std_error) - 1e-9)
            trend_ok = false;
        have_prev = true;
        prev_slope = fit.slope;
        prev_se = fit.std_error;
        final_slope = fit.slope;
        final_se = fit.std_error;
        ++fits;
    }
    emit_file(c, "boxcount_loglog.csv",
              "survivor counts by level and lambda; level -1 rows carry the least-squares fit",
              csv);
    if (fits >= 2)
        c.sum.check("dimension-trend", trend_ok,
                    trend_ok ? "slopes nondecreasing as lambda decreases"
                             : "a slope dropped beyond twice the fitted standard errors",
                    "nondecreasing slope as lambda decreases (2 SE slack)");
    else
        c.sum.note("fewer than two box-dimension fits; trend not assessed");
    c.sum.constant("dimension-slope-final", final_slope);
    c.sum.constant("dimension-std-error-final", final_se);
}

void emit_chains(Ctx& c, const Lab& lab, const TiltedMeasure* tm) {
    auto rng = engine_for(c.cfg.seed, 7100);
    double worst_base = 0.0;
    double worst_tilt = 0.0;
    bool period_ok = true;
    std::string sample_csv;
    for (int i = 0; i < 8; ++i) {
        const std::size_t idx = sample_atom(lab.t, lab.f.base, lab.t.depth(), rng);
        const FullChain ch = full_chain(lab.t, lab.t.depth(), idx);
        const FatChainDecomposition dec = decompose_fat(lab.t, ch, lab.f.base);
        const DiamDecayReport rep = check_diam_decay(dec);
        worst_base = std::max(worst_base, rep.c_decay);
        if (c.cfg.rule == "midpoint")
            for (std::size_t j = 0; j < dec.starts.size(); ++j)
                period_ok = period_ok && dec.starts[j] == 2 * j;
        if (tm != nullptr) {
            const FatChainDecomposition dec2 = decompose_fat(lab.t, ch, tm->measure);
            worst_tilt = std::max(worst_tilt, check_diam_decay(dec2).c_decay);
        }
        if (i == 0) sample_csv = decomposition_csv(dec);
    }
    emit_file(c, "chain_decomposition.csv", "halving decomposition of one sampled full chain",
              sample_csv);
    c.sum.check("diameter-decay", worst_base <= 32.0, fmt_g17(worst_base), le(32.0));
    if (c.cfg.rule == "midpoint")
        c.sum.check("segment-period", period_ok,
                    period_ok ? "every segment holds two atoms" : "a segment deviated",
                    "halving segments of exactly two atoms for midpoint splits");
    if (tm != nullptr)
        c.sum.check("tilted-decay-comparable", worst_tilt <= 2.0 * worst_base + 1e-12,
                    fmt_g17(worst_tilt), le(2.0 * worst_base + 1e-12));
    c.sum.constant("chain-decay-constant", worst_base);
    if (tm != nullptr) c.sum.constant("chain-decay-constant-tilted", worst_tilt);
}

} // namespace

// ---------------------------------------------------------------------------

std::string RunConfig::canonical() const {
    // out_dir and parallel are excluded: neither changes any computed number
    // (worker results are merged deterministically), so artifacts stay
    // byte-identical wherever and however a configuration runs.
    std::string s;
    s += "command=" + command + "\n";
    s += "dim=" + std::to_string(dim) + "\n";
    s += "depth=" + std::to_string(depth) + "\n";
    s += "rule=" + rule + "\n";
    s += "ratio=" + fmt_g17(ratio) + "\n";
    s += "ratio_lo=" + fmt_g17(ratio_lo) + "\n";
    s += "ratio_hi=" + fmt_g17(ratio_hi) + "\n";
    s += "space=" + space + "\n";
    s += "degree=" + std::to_string(degree) + "\n";
    s += "g_coef=" + join_csv(g_coef) + "\n";
    s += "sparsity=" + std::to_string(sparsity) + "\n";
    s += "bound_L=" + fmt_g17(bound_L) + "\n";
    s += "diff_rule=" + diff_rule + "\n";
    s += "first_level=" + std::to_string(first_level) + "\n";
    s += "lambda=" + fmt_g17(lambda) + "\n";
    s += "ell=" + std::to_string(ell) + "\n";
    s += "seed=" + std::to_string(seed) + "\n";
    s += "n_paths=" + std::to_string(n_paths) + "\n";
    s += "horizon=" + std::to_string(horizon) + "\n";
    s += "a_grid=" + join_csv(a_grid) + "\n";
    s += "b_grid=" + join_csv(b_grid) + "\n";
    s += "lil_r=" + fmt_g17(lil_r) + "\n";
    s += "n_points=" + std::to_string(n_points) + "\n";
    s += "depth_grid=" + join_csv(depth_grid) + "\n";
    s += "lambda_grid=" + join_csv(lambda_grid) + "\n";
    s += "tol_orthogonality=" + fmt_g17(tol_orthogonality) + "\n";
    s += "tol_compatibility=" + fmt_g17(tol_compatibility) + "\n";
    s += "tol_tilted=" + fmt_g17(tol_tilted) + "\n";
    s += "tol_identity=" + fmt_g17(tol_identity) + "\n";
    s += "cond_guard=" + fmt_g17(cond_guard) + "\n";
    return s;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical()); }

void RunConfig::validate() const {
    if (!is_one_of(command, {"tree", "generate", "change-measure", "verify", "freedman", "lil",
                             "variation", "dimension", "suite"}))
        bad_config("unknown command '" + command + "'");
    if (dim < 1 || dim > 8) bad_config("dim must lie in [1, 8]");
    if (depth < 1 || depth > 26) bad_config("depth must lie in [1, 26]");
    if (!is_one_of(rule, {"midpoint", "fixed", "random"}))
        bad_config("rule must be midpoint, fixed, or random");
    if (!(ratio >= 0.25 && ratio <= 0.5))
        bad_config("ratio must lie in [0.25, 0.5] (sibling masses stay within factor 3)");
    if (!(ratio_lo >= 0.25 && ratio_lo <= ratio_hi && ratio_hi <= 0.5))
        bad_config("need 0.25 <= ratio_lo <= ratio_hi <= 0.5");
    if (!is_one_of(space, {"total", "affine"})) bad_config("space must be total or affine");
    if (degree < 0 || degree > 6) bad_config("degree must lie in [0, 6]");
    if (space == "affine" && g_coef.size() != static_cast<std::size_t>(dim) + 1)
        bad_config("affine spans need dim + 1 coefficients");
    for (double g : g_coef)
        if (!std::isfinite(g)) bad_config("g_coef entries must be finite");
    if (sparsity < 0 || sparsity > 25) bad_config("sparsity must lie in [0, 25]");
    if (!(bound_L > 0.0) || !std::isfinite(bound_L)) bad_config("bound_L must be positive");
    if (!is_one_of(diff_rule, {"rademacher", "gaussian", "haar"}))
        bad_config("diff_rule must be rademacher, gaussian, or haar");
    if (first_level < 1 || first_level > depth) bad_config("first_level must lie in [1, depth]");
    if (!(lambda >= 0.0 && lambda < 1.0)) bad_config("lambda must lie in [0, 1)");
    if (ell < -1 || ell > 12) bad_config("ell must be -1 (automatic) or lie in [0, 12]");
    if (n_paths < 1) bad_config("n_paths must be positive");
    if (horizon < 1) bad_config("horizon must be positive");
    if (a_grid.empty() || b_grid.empty()) bad_config("a_grid and b_grid must be nonempty");
    for (double a : a_grid)
        if (!(a > 0.0) || !std::isfinite(a)) bad_config("a_grid entries must be positive");
    for (double b : b_grid)
        if (!(b > 0.0) || !std::isfinite(b)) bad_config("b_grid entries must be positive");
    if (!(lil_r > 0.0) || !std::isfinite(lil_r)) bad_config("lil_r must be positive");
    if (n_points < 1) bad_config("n_points must be positive");
    for (std::size_t i = 0; i < depth_grid.size(); ++i) {
        if (depth_grid[i] < 1 || depth_grid[i] > depth)
            bad_config("depth_grid entries must lie in [1, depth]");
        if (i > 0 && depth_grid[i] <= depth_grid[i - 1])
            bad_config("depth_grid must be strictly increasing");
    }
    if (lambda_grid.empty()) bad_config("lambda_grid must be nonempty");
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
        if (!(lambda_grid[i] > 0.0 && lambda_grid[i] < 1.0))
            bad_config("lambda_grid entries must lie in (0, 1)");
        if (i > 0 && lambda_grid[i] >= lambda_grid[i - 1])
            bad_config("lambda_grid must be strictly decreasing");
    }
    for (double tol : {tol_orthogonality, tol_compatibility, tol_tilted, tol_identity})
        if (!(tol > 0.0)) bad_config("tolerances must be positive");
    if (!(cond_guard >= 1.0)) bad_config("cond_guard must be at least 1");
    if (out_dir.empty()) bad_config("out_dir must be nonempty");
    if ((command == "dimension" || command == "suite") && depth < 3)
        bad_config("the box-count fit needs depth >= 3");
}

RunOutcome run_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const std::uint64_t h = cfg.hash();
    Summary sum(cfg.command, h);
    std::vector<std::string> files;
    Ctx c{cfg, sum, files, hex64(h), depth_grid_of(cfg)};
    try {
        if (cfg.command == "tree") {
            const PartitionTree t =
                PartitionTree::build(Box::unit_cube(cfg.dim), cfg.depth, split_spec_of(cfg));
            emit_tree(c, t);
        } else if (cfg.command == "freedman") {
            emit_freedman(c);
        } else if (cfg.command == "generate") {
            const Lab lab = build_lab(cfg);
            emit_tree(c, lab.t);
            emit_generate(c, lab);
        } else if (cfg.command == "lil") {
            const Lab lab = build_lab(cfg);
            emit_lil(c, lab);
        } else if (cfg.command == "dimension") {
            const Lab lab = build_lab(cfg);
            emit_dimension(c, lab);
        } else if (cfg.command == "change-measure" || cfg.command == "verify") {
            const Lab lab = build_lab(cfg);
            emit_tree(c, lab.t);
            emit_generate(c, lab);
            const TiltedMeasure tm = make_tilt(c, lab, cfg.lambda);
            emit_tilt(c, lab, tm);
            if (cfg.command == "verify") emit_verify(c, lab, tm);
        } else if (cfg.command == "variation") {
            const Lab lab = build_lab(cfg);
            const TiltedMeasure tm = make_tilt(c, lab, cfg.lambda);
            emit_variation(c, lab, tm);
        } else { // suite
            const Lab lab = build_lab(cfg);
            emit_tree(c, lab.t);
            emit_generate(c, lab);
            std::optional<TiltedMeasure> tm;
            try {
                tm = make_tilt(c, lab, cfg.lambda);
            } catch (const lambda_too_large_error& e) {
                sum.check("density-positive", false,
                          std::string(e.what()) + " (level " + std::to_string(e.level) +
                              ", atom " + std::to_string(e.atom) + ")",
                          "positive reweighted densities at this lambda");
            }
            if (tm) {
                emit_tilt(c, lab, *tm);
                emit_verify(c, lab, *tm);
            }
            emit_freedman(c);
            emit_lil(c, lab);
            emit_square_stopping(c, lab);
            if (tm) emit_variation(c, lab, *tm);
            emit_dimension(c, lab);
            emit_chains(c, lab, tm ? &*tm : nullptr);
        }
    } catch (const std::invalid_argument&) {
        throw; // configuration error: the caller reports usage, not a failed run
    } catch (const lambda_too_large_error& e) {
        sum.check("density-positive", false,
                  std::string(e.what()) + " (level " + std::to_string(e.level) + ", atom " +
                      std::to_string(e.atom) + ")",
                  "positive reweighted densities at this lambda");
    } catch (const ill_conditioned_error& e) {
        sum.check("numerical-construction", false,
                  std::string(e.what()) + " (condition " + fmt_g17(e.condition) + ")",
                  "conditioning within the guard");
    } catch (const std::exception& e) {
        sum.check("numerical-construction", false, e.what(), "construction completes");
    }
    const std::string spath = path_join(cfg.out_dir, "summary.txt");
    write_file(spath, sum.str());
    files.push_back(spath);
    return RunOutcome{sum.all_pass() ? 0 : 2, sum.str(), std::move(files)};
}

} // namespace smartlab
