#pragma once

#include <cstdint>
#include <vector>

#include "smartlab/measures.hpp"
#include "smartlab/smartingale.hpp"

namespace smartlab {

// Reweighting construction: given a smartingale (f_n) under the Lebesgue
// base measure and a perturbation size lambda, build a measure under which
// the tilted sequence with differences
//     diff~_n = diff_n - lambda * p_n,   p_n >= 0, p_n in S_n,
//     E_n p_n comparable to E_n |diff_n|
// is again a smartingale. The density is piecewise constant; each active
// level rewrites it on a fixed refinement of the parent atoms so that
//   (a) the tilted differences integrate to zero against S under the new
//       measure, and
//   (b) integrals of S^2 functions over parent atoms are preserved, which
//       pins all coarser masses and keeps earlier steps valid.

// Diagnostics recorded for one active level.
struct StepDiagnostics {
    int level = 0;               // active level
    std::size_t atoms = 0;       // parent atoms processed (level - 1)
    std::size_t skipped = 0;     // parent atoms with vanishing difference (density copied)
    double min_density = 0.0;    // density extremes over all cells after the step
    double max_density = 0.0;
    double max_rel_jump = 0.0;   // max |d_cell / d_parent - 1| introduced by the step
    double det_t_min = 1.0;      // min |det T| over atoms (unperturbed system)
    double det_ttilde_min = 1.0; // min |det T~| (system actually solved)
    double alpha_max = 0.0;      // worst row-onto-later-rows projection in T (general path)
    double dt_norm_max = 0.0;    // max spectral norm of T - T~ over atoms (general path)
    double t_norm_max = 0.0;     // max spectral norm of T over atoms (general path)
    double solve_residual = 0.0; // max residual of the solved linear systems (general path)
    bool det_bound_ok = true;    // |det T| >= (1 - alpha^2)^(m/2) held on every atom
};

// Output of the construction. `tilted` carries the perturbed differences
// diff_n - lambda * p_n; it is a smartingale with respect to `measure`
// (tilted.base still records the base measure the input was built under,
// and tilted.bound_L is enlarged to (1 + lambda) * L). For span_affine
// spaces with non-constant g the total mass of `measure` may drift away
// from 1 within [nu(domain), nu(domain)/c3^2]; what is preserved exactly is
// the integral of g^2.
struct TiltedMeasure {
    MeasureTree measure;
    double lambda = 0.0;
    int ell = 0; // refinement depth used (0 for the closed-form path)
    Smartingale tilted;
    std::vector<PiecewisePoly> perturbations; // p at each active level, aligned with tilted.steps
    std::vector<StepDiagnostics> steps;
};

// Closed-form path for dim S = 1, S = span{g} with g in [c3, 1]. On each
// split atom A with children A', A'' and nu(B) = integral of g^2 over B,
// the difference is a multiple of (nu(A'') g 1_{A'} - nu(A') g 1_{A''}),
// p_n = |diff_n|, and the two density values solve a 2x2 system whose
// determinant is eps + lambda (2 mu - 1), mu = nu(A')/nu(A), eps the sign
// of the difference on A'. Densities stay positive for every lambda < 1.
// Throws std::invalid_argument for lambda outside [0, 1) or dim S != 1,
// singular_split_error if a 2x2 determinant falls below 1e-12.
TiltedMeasure build_measure_1d(const PartitionTree& t, const Smartingale& f, double lambda,
                               bool parallel = true);

// Empirical selection of the refinement depth ell for the general path.
// For a parent atom A and cells B at `off` levels below it, the
// concentration of u in S^2 is
//     sum_B |integral_B u| / integral_A |u|;
// ell0 is the smallest offset whose worst sampled concentration clears
// c_floor, and ell additionally satisfies 2^(ell+1) >= dim S + dim S^2.
struct EllSelection {
    int ell0 = 0;
    int ell = 0;
    double c_estimate = 0.0; // worst concentration observed at offset ell
    int samples = 0;
};
EllSelection select_ell(const PartitionTree& t, const PolySpace& s, int n_samples,
                        std::uint64_t seed, double c_floor = 0.05);

// General path; requires constants in S (total_degree spaces), the input
// built under the Lebesgue base, gaps between active levels at least
// ell + 1, and last active level + ell within the tree depth. Each parent
// atom A at level n-1 is refined into m = 2^(ell+1) cells at level n+ell;
// with H, P, Q the matrices of cell integrals of diff*b_i, p*b_i, q_i
// (b_i, q_i bases of S(A), S^2(A)), the rows are orthonormalized so that
// T = [T1; T2; completion] is square with unit rows, and the cell densities
// solve T~ d = (0, T2 1, C 1) * d_A where T~ replaces T1 by its perturbed
// version. p_n is the conditional expectation of |diff_n| at level n.
// Throws near_singular_error when a moment form degenerates or
// |det T~| < 1e-10, lambda_too_large_error when a density would be <= 0.
TiltedMeasure build_measure_general(const PartitionTree& t, const Smartingale& f, double lambda,
                                    int ell, bool parallel = true);

// Row-geometry report for a matrix given in row-major order: worst
// projection norm of a (normalized) row onto the span of the rows after it,
// |det| (square matrices only), the induced lower determinant bound
// (1 - alpha_max^2)^(nrows/2), and the spectral norm.
struct MatrixDiagnostics {
    double alpha_max = 0.0;
    double abs_det = 0.0;
    double det_lower_bound = 0.0;
    double norm2 = 0.0;
};
MatrixDiagnostics matrix_diagnostics(const std::vector<double>& rows, int nrows, int ncols);

// Post-hoc verification of a constructed measure against its inputs.
struct MeasureVerification {
    // max smartingale defect of the tilted sequence under the new measure
    double residual = 0.0;
    // |integral g^2 d(new) - integral g^2 d(base)|; total-mass drift when g = 1
    double mass_drift = 0.0;
    // fitted exponents x over all ancestor pairs B inside A:
    //   new(B)/new(A) = (base(B)/base(A))^x
    double exponent_min = 0.0;
    double exponent_max = 0.0;
    double fitted_c = 0.0; // max |x - 1| / lambda (0 when lambda = 0)
    // same fit for the recovered per-atom density theta(B)/nu(B) against nu
    // ratios, theta = g^2 * new measure, nu = g^2 * base; the closed-form
    // path guarantees these exponents lie in [-3 lambda, 2 lambda]
    double density_exponent_min = 0.0;
    double density_exponent_max = 0.0;
    // max over atoms of theta(B) - nu(B)^(1 - 2 lambda); <= 0 when the
    // one-sided moment estimate holds
    double theta_excess = 0.0;
    // empirical L1 -> sup embedding constants over sampled S functions:
    // min of integral_A |f| dm / (m(A) sup_A |f|)
    double embed_base = 0.0;
    double embed_tilted = 0.0;
    long long pairs = 0; // ancestor pairs inspected
};
MeasureVerification verify_measure(const PartitionTree& t, const Smartingale& f,
                                   const TiltedMeasure& tm, int n_samples = 64,
                                   std::uint64_t seed = 1, bool parallel = true);

// Randomized check of the two scalar inequalities behind the density
// bounds, sampled over lambda in (0,1), eta in (-1,1), eps in {-1,+1}:
//   (1 + eta) <= min(2 (1 + eta lambda), 3 (1 - eta lambda))
//   (2/(1+eta))^(-3 lambda) <= (lambda + eps)/(eta lambda + eps)
//                           <= (2/(1+eta))^(2 lambda)
// together with positivity of both closed-form density ratios.
// Samples the full square (lambda, eta) in (0,1) x (-1,1). The pointwise
// argument behind the two-sided ratio estimate needs lambda <= 1/3: the slack
// of 3(1 - eta lambda) - (1 + eta) turns negative once eta(1 + 3 lambda) > 2,
// and the lower ratio bound genuinely fails for large lambda (for example
// lambda = 0.99, eta = 0 gives ratio 0.01 against the bound 2^{-2.97}). The
// restricted tallies below separate that regime from the safe one.
struct LemmaSuiteResult {
    long long samples = 0;
    long long violations = 0;            // over the full sampled square
    long long samples_small_lambda = 0;  // samples with lambda <= 1/3
    long long violations_small_lambda = 0;
    double min_margin = 0.0; // smallest slack seen across all inequalities
    double min_margin_small_lambda = 0.0;
    double worst_lambda = 0.0;
    double worst_eta = 0.0;
    int worst_case = -1; // index of the inequality attaining min_margin
};
LemmaSuiteResult lemma_property_suite(long long n_samples, std::uint64_t seed);

} // namespace smartlab
