#pragma once

// End-to-end runs behind the command-line tool.  A RunConfig captures every
// knob of a run; run_pipeline executes one command, writes its artifact files
// under out_dir (each headed by the config hash), and returns the summary
// with an exit code: 0 when every recorded check passed, 2 when a check
// failed or the numerical construction broke down (the summary then names
// the operation and location).  Bad configuration throws
// std::invalid_argument instead, which the tool maps to a usage error.

#include <cstdint>
#include <string>
#include <vector>

namespace smartlab {

struct RunConfig {
    std::string command = "suite";

    // partition
    int dim = 1;
    int depth = 12;
    std::string rule = "midpoint"; // midpoint | fixed | random
    double ratio = 0.4;            // cut fraction for the fixed rule
    double ratio_lo = 0.3;         // random rule draws from [ratio_lo, ratio_hi]
    double ratio_hi = 0.5;

    // function space and generated sequence
    std::string space = "total"; // total | affine
    int degree = 1;
    std::vector<double> g_coef = {0.75, 0.25}; // affine span: g(x) = c0 + sum c_i x_i
    int sparsity = 2;
    double bound_L = 1.0;
    std::string diff_rule = "rademacher"; // rademacher | gaussian | haar
    int first_level = 1;

    // reweighting
    double lambda = 0.02;
    int ell = -1; // refinement depth for the general path; -1 selects it

    // randomness and workload
    std::uint64_t seed = 1;
    long long n_paths = 100000;
    int horizon = 1000;
    std::vector<double> a_grid = {5.0, 10.0, 20.0};
    std::vector<double> b_grid = {10.0, 50.0, 200.0};
    double lil_r = 2.0;
    int n_points = 1000;
    std::vector<int> depth_grid;                      // empty: spread over [1, depth]
    std::vector<double> lambda_grid = {0.1, 0.05, 0.02}; // dimension sweep, decreasing

    // tolerances and guards
    double tol_orthogonality = 1e-10;
    double tol_compatibility = 1e-10;
    double tol_tilted = 1e-8;
    double tol_identity = 1e-10;
    double cond_guard = 1e12;

    // output
    std::string out_dir = ".";
    bool parallel = true;

    // Stable key=value rendering of every field; two configs agree exactly
    // when their canonical forms match.
    std::string canonical() const;
    std::uint64_t hash() const; // FNV-1a over canonical()
    // Throws std::invalid_argument naming the offending key.
    void validate() const;
};

struct RunOutcome {
    int exit_code = 0;               // 0: all checks passed, 2: some check failed
    std::string summary;             // contents of summary.txt
    std::vector<std::string> files;  // artifact paths written, summary.txt last
};

RunOutcome run_pipeline(const RunConfig& cfg);

} // namespace smartlab
