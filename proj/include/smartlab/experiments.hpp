#pragma once

// Monte-Carlo and pointwise verification experiments: martingale tail bounds
// (Freedman), iterated-logarithm ratio statistics, square-function
// comparison, stopping-time inclusion, variation-ratio statistics under a
// tilted measure, and a box-counting dimension proxy for survivor sets.
//
// Every experiment draws its per-path / per-point randomness from
// engine_for(master_seed, item), so results are independent of the number of
// worker threads.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "smartlab/change_of_measure.hpp"
#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/smartingale.hpp"

namespace smartlab {

// Descend from the root choosing children with probability proportional to
// their m-mass; returns the index of the sampled atom at `level`.
std::size_t sample_atom(const PartitionTree& t, const MeasureTree& m, int level,
                        std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Freedman-type tail bound for bounded-increment martingales.
// Simulates random walks with Rademacher increments of size L and, for each
// grid cell (a, b), compares the empirical probability of
//   { M reaches a within `horizon` steps and the predictable square function
//     at the hitting time is <= b }
// with the bound exp(-a^2 / (2 (L a + b))).  For the simulated walk the
// predictable square function after n steps is exactly n L^2.
struct FreedmanCell {
    double a = 0.0;
    double b = 0.0;
    double bound = 0.0;      // exp(-a^2 / (2 (L a + b)))
    double empirical = 0.0;  // hit fraction
    double std_error = 0.0;  // binomial sqrt(p(1-p)/n)
    long long hits = 0;
    bool pass = true;        // empirical <= bound + 3 std_error
};

struct FreedmanResult {
    std::vector<FreedmanCell> cells;  // a-major order over the two grids
    double L = 1.0;
    int horizon = 0;
    long long n_paths = 0;
    bool all_pass = true;
};

FreedmanResult freedman_tail(double L, const std::vector<double>& a_grid,
                             const std::vector<double>& b_grid, long long n_paths, int horizon,
                             std::uint64_t seed, bool parallel = true);

// ---------------------------------------------------------------------------
// Ratio statistics f_n / sqrt(r * S_n^2 * loglog S_n^2) at sampled points,
// across a grid of depths.  Points are atom centers at the deepest grid
// level, sampled proportional to m.  The ratio is evaluated only where
// S_n^2 > e (with a small guard); other entries are NaN and counted.
struct LilResult {
    std::vector<int> depths;
    std::vector<std::vector<double>> ratios;  // [depth][point], NaN where skipped
    std::vector<long long> skipped;           // per depth
    std::vector<double> p50;                  // per depth, over valid points
    std::vector<double> p99;
    double r = 0.0;
    long long n_points = 0;
};

LilResult lil_ratio(const PartitionTree& t, const Smartingale& f, const MeasureTree& m, double r,
                    const std::vector<int>& depth_grid, long long n_points, std::uint64_t seed,
                    bool parallel = true);

// ---------------------------------------------------------------------------
// Pointwise comparison of the two square functions: the martingale square
// function of M_n = E_n(g f_n) against the smartingale square function,
// per depth.  Both are piecewise constant per atom, so n_points <= 0 takes
// the exact maximum over all atoms of the level; n_points > 0 samples atoms
// proportional to m instead.
struct SquareComparisonResult {
    std::vector<int> depths;
    std::vector<double> c_emp;       // max S_M^2 / S^2 (0 if everything skipped)
    std::vector<long long> skipped;  // atoms/points with S^2 == 0
    long long n_points = 0;          // <= 0 means exhaustive
};

SquareComparisonResult square_comparison(const PartitionTree& t, const Smartingale& f,
                                         const MeasureTree& m, const std::vector<int>& depths,
                                         long long n_points, std::uint64_t seed,
                                         bool parallel = true);

// ---------------------------------------------------------------------------
// First-passage inclusion: whenever f_n >= a at a sampled point, the
// projected martingale M must have reached beta * a (beta = c3 / 2) by the
// same level.  Violations are counted per a; the Lipschitz diagnostic
//   K = max over points and levels of  Lip(f_n | atom) * diam(atom) / L
// is fitted from the same sample (gradient probes at the point; exact for
// affine pieces).  The inclusion is expected to hold for a >= 2 K L.
struct StoppingResult {
    std::vector<double> a_grid;
    std::vector<long long> violations;  // per a
    std::vector<long long> triggered;   // per a: points where f_n >= a happened
    double fitted_K = 0.0;
    double beta = 0.0;
    long long n_points = 0;
};

StoppingResult stopping_inclusion(const PartitionTree& t, const Smartingale& f,
                                  const MeasureTree& m, const std::vector<double>& a_grid,
                                  long long n_points, std::uint64_t seed, bool parallel = true);

// ---------------------------------------------------------------------------
// Variation-ratio statistics   f_n / sum_{k<=n} E_k|df_k|   at points sampled
// proportional to the tilted measure (atom centers at the deepest grid
// level).  Also checks, at every sampled point and depth, the algebraic
// decomposition
//   ratio = lambda * (sum_k E_k p_k) / V_n + f~_n / V_n,
// where p_k are the stored perturbations, f~ the tilted sequence and
// V_n = sum_k E_k|df_k|, and that V_n never decreases with depth.
struct VariationResult {
    std::vector<int> depths;
    std::vector<std::vector<double>> ratios;  // [depth][point], NaN where V_n == 0
    std::vector<long long> skipped;           // per depth
    double lambda = 0.0;
    double threshold = 0.0;                // lambda / (2 C), comparability C = 1
    double frac_above_deepest = 0.0;       // ratio at the deepest depth >= threshold
    double frac_above_last_quarter = 0.0;  // min over the last quarter of depths >= threshold
    double max_identity_residual = 0.0;
    bool monotone_ok = true;  // V_n nondecreasing in n at every point
    long long n_points = 0;
};

VariationResult variation_ratio(const PartitionTree& t, const Smartingale& f,
                                const TiltedMeasure& tm, const std::vector<int>& depth_grid,
                                long long n_points, std::uint64_t seed, bool parallel = true,
                                double comparability = 1.0);

// ---------------------------------------------------------------------------
// Survivor sets and the box-counting dimension proxy.
struct SurvivorSet {
    int level = 0;
    double threshold = 0.0;
    std::vector<std::size_t> atoms;  // indices within the level, increasing
};

// Atoms at each requested level whose ratio proxy
//   f_n(center) / V_n(atom)   (V_n as in variation_ratio, constant per atom)
// is >= threshold.
std::vector<SurvivorSet> variation_survivors(const PartitionTree& t, const Smartingale& f,
                                             const std::vector<int>& levels, double threshold,
                                             bool parallel = true);

struct BoxDimensionFit {
    double slope = 0.0;      // of log(count) against log(1/mesh)
    double std_error = 0.0;  // OLS slope standard error
    int levels = 0;
};

// Least-squares fit over >= 3 levels; mesh at a level is the largest atom
// diameter there.  Throws std::invalid_argument on fewer than three levels
// or an empty survivor set (log of a zero count is undefined).
BoxDimensionFit box_dimension(const std::vector<SurvivorSet>& survivors, const PartitionTree& t);

} // namespace smartlab
