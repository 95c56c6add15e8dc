#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "smartlab/change_of_measure.hpp"
#include "smartlab/errors.hpp"
#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"
#include "smartlab/smartingale.hpp"

using namespace smartlab;

namespace {

PartitionTree unit_tree(int depth, double ratio = 0.5) {
    SplitSpec spec;
    if (ratio != 0.5) {
        spec.rule = SplitRule::fixed_ratio;
        spec.ratio = ratio;
    }
    return PartitionTree::build(Box::unit_cube(1), depth, spec);
}

// single-step smartingale with prescribed child coefficients at level 1
Smartingale two_cell_input(const PartitionTree& t, const PolySpace& s, const MeasureTree& base,
                           double c0, double c1) {
    Smartingale f;
    f.space = s;
    f.base = base;
    f.bound_L = 1.0;
    f.sparsity = 0;
    f.steps = {1};
    PiecewisePoly d = PiecewisePoly::zero(t, s, 1);
    d.at(0)[0] = c0;
    d.at(1)[0] = c1;
    f.diffs.push_back(std::move(d));
    return f;
}

} // namespace

TEST_CASE("two-cell reweighting matches the hand solution") {
    const PolySpace s = PolySpace::total_degree(1, 0);

    SUBCASE("even split, positive left difference") {
        const PartitionTree t = unit_tree(2);
        const MeasureTree base = MeasureTree::lebesgue(t);
        // coefficients are with respect to the orthonormal local bases, so the
        // function values are c * sqrt(2); only signs and ratios matter here
        const Smartingale f = two_cell_input(t, s, base, 1.0, -1.0);
        REQUIRE(verify_smartingale(t, f, base) <= 1e-14);

        const TiltedMeasure tm = build_measure_1d(t, f, 0.1);
        REQUIRE(tm.measure.resolution() == 1);
        // eps = +1, eta = 0: densities (1 + lambda, 1 - lambda)
        CHECK(tm.measure.weight(0) == doctest::Approx(1.1).epsilon(1e-15));
        CHECK(tm.measure.weight(1) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(tm.measure.total_mass() == doctest::Approx(1.0).epsilon(1e-15));

        // tilted coefficients c - lambda * |c|
        CHECK(tm.tilted.diffs[0].at(0)[0] == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(tm.tilted.diffs[0].at(1)[0] == doctest::Approx(-1.1).epsilon(1e-15));
        CHECK(tm.perturbations[0].at(0)[0] == doctest::Approx(1.0));
        CHECK(tm.perturbations[0].at(1)[0] == doctest::Approx(1.0));
        CHECK(verify_smartingale(t, tm.tilted, tm.measure) <= 1e-14);

        REQUIRE(tm.steps.size() == 1);
        CHECK(tm.steps[0].level == 1);
        CHECK(tm.steps[0].atoms == 1);
        CHECK(tm.steps[0].skipped == 0);
        CHECK(tm.steps[0].det_ttilde_min == doctest::Approx(1.0));
        CHECK(tm.steps[0].max_rel_jump == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(tm.tilted.bound_L == doctest::Approx(1.1));
    }

    SUBCASE("quarter split, negative left difference") {
        const PartitionTree t = unit_tree(2, 0.25);
        const MeasureTree base = MeasureTree::lebesgue(t);
        // values -3 on the quarter cell and +1 on the rest: integral is zero
        const double c0 = -3.0 / 2.0;            // -3 / sqrt(1/0.25)
        const double c1 = std::sqrt(0.75);       // +1 / sqrt(1/0.75)
        const Smartingale f = two_cell_input(t, s, base, c0, c1);
        REQUIRE(verify_smartingale(t, f, base) <= 1e-14);

        const TiltedMeasure tm = build_measure_1d(t, f, 0.1);
        // eps = -1, eta = -1/2: det = -1.05, densities (0.9, 1.1) / 1.05
        CHECK(tm.measure.weight(0) == doctest::Approx(6.0 / 7.0).epsilon(1e-14));
        CHECK(tm.measure.weight(1) == doctest::Approx(22.0 / 21.0).epsilon(1e-14));
        CHECK(tm.measure.total_mass() == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(tm.steps[0].det_ttilde_min == doctest::Approx(1.05).epsilon(1e-14));
        CHECK(verify_smartingale(t, tm.tilted, tm.measure) <= 1e-14);
    }
}

TEST_CASE("lambda zero keeps the base measure") {
    const PartitionTree t = unit_tree(6);
    const PolySpace s = PolySpace::total_degree(1, 0);
    const MeasureTree base = MeasureTree::lebesgue(t);
    const Smartingale f = generate_smartingale(t, s, base, 0, 1.0, 7, DiffRule::haar);

    SUBCASE("closed form") {
        const TiltedMeasure tm = build_measure_1d(t, f, 0.0);
        for (std::size_t c = 0; c < tm.measure.weights().size(); ++c)
            REQUIRE(tm.measure.weight(c) == 1.0); // exact: (eps + 0) / (eps + 0)
        CHECK(verify_smartingale(t, tm.tilted, tm.measure) <= 1e-14);
    }
    SUBCASE("general construction") {
        const TiltedMeasure tm = build_measure_general(t, f, 0.0, 0);
        for (std::size_t c = 0; c < tm.measure.weights().size(); ++c)
            REQUIRE(tm.measure.weight(c) == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("no active levels") {
        Smartingale g0;
        g0.space = s;
        g0.base = base;
        const TiltedMeasure tm = build_measure_1d(t, g0, 0.3);
        CHECK(tm.measure.resolution() == 0);
        CHECK(tm.measure.weight(0) == 1.0);
    }
}

TEST_CASE("closed form agrees with the general construction") {
    const PartitionTree t = unit_tree(6);
    const PolySpace s = PolySpace::total_degree(1, 0);
    const MeasureTree base = MeasureTree::lebesgue(t);
    for (const std::uint64_t seed : {42u, 43u, 44u}) {
        const Smartingale f =
            generate_smartingale(t, s, base, 0, 1.0, seed, DiffRule::gaussian_coeff);
        const TiltedMeasure a = build_measure_1d(t, f, 0.05);
        const TiltedMeasure b = build_measure_general(t, f, 0.05, 0);
        REQUIRE(a.measure.resolution() == b.measure.resolution());
        for (std::size_t c = 0; c < a.measure.weights().size(); ++c) {
            const double wa = a.measure.weight(c);
            const double wb = b.measure.weight(c);
            REQUIRE(std::abs(wa - wb) <= 1e-10 * std::max(1.0, std::abs(wa)));
        }
    }
}

TEST_CASE("general construction on an affine space") {
    const PartitionTree t = unit_tree(9);
    const PolySpace s = PolySpace::total_degree(1, 1);
    const MeasureTree base = MeasureTree::lebesgue(t);
    const double lambda = 0.02;
    const Smartingale f =
        generate_smartingale(t, s, base, 2, 1.0, 11, DiffRule::rademacher_like, 1, 7);
    REQUIRE(f.steps == std::vector<int>{1, 4, 7});

    const TiltedMeasure tm = build_measure_general(t, f, lambda, 2);
    REQUIRE(tm.measure.resolution() == 9);

    for (const StepDiagnostics& d : tm.steps) {
        CHECK(d.min_density > 0.0);
        CHECK(d.det_bound_ok);
        CHECK(d.alpha_max < 1.0);
        CHECK(d.solve_residual <= 1e-10);
        CHECK(d.max_rel_jump <= 10.0 * lambda);
        CHECK(d.dt_norm_max <= 10.0 * lambda * d.t_norm_max);
        CHECK(d.det_ttilde_min > 0.0);
    }
    // constants lie in the squared space, so total mass is preserved
    CHECK(tm.measure.total_mass() == doctest::Approx(1.0).epsilon(1e-12));

    const MeasureVerification v = verify_measure(t, f, tm, 16, 5);
    CHECK(v.residual <= 1e-10);
    CHECK(v.mass_drift <= 1e-12);
    CHECK(v.exponent_min <= 1.0);
    CHECK(v.exponent_max >= 1.0);
    CHECK(v.exponent_min >= 1.0 - 25.0 * lambda);
    CHECK(v.exponent_max <= 1.0 + 25.0 * lambda);
    CHECK(v.fitted_c < 25.0);
    CHECK(v.embed_base > 0.0);
    CHECK(v.embed_tilted > 0.0);
    CHECK(v.pairs > 0);

    for (const PiecewisePoly& p : tm.perturbations)
        for (std::size_t i = 0; i < t.level_size(p.level); ++i) REQUIRE(p.at(i)[0] >= 0.0);
}

TEST_CASE("ladder exponents stay inside the tilt window") {
    const PartitionTree t = unit_tree(8);
    const PolySpace s = PolySpace::total_degree(1, 0);
    const MeasureTree base = MeasureTree::lebesgue(t);
    const double lambda = 0.1;
    const Smartingale f = generate_smartingale(t, s, base, 0, 1.0, 19, DiffRule::haar);

    const TiltedMeasure tm = build_measure_1d(t, f, lambda);
    const MeasureVerification v = verify_measure(t, f, tm, 16, 3);

    CHECK(v.residual <= 1e-12);
    CHECK(v.mass_drift <= 1e-12);
    // per-ancestor-pair density exponents: alpha in [-3 lambda, 2 lambda]
    CHECK(v.density_exponent_min >= -3.0 * lambda - 1e-9);
    CHECK(v.density_exponent_max <= 2.0 * lambda + 1e-9);
    // measure exponents for g == 1: within [1 - 2 lambda, 1 + 3 lambda]
    CHECK(v.exponent_min >= 1.0 - 2.0 * lambda - 1e-9);
    CHECK(v.exponent_max <= 1.0 + 3.0 * lambda + 1e-9);
    CHECK(v.fitted_c <= 3.0 + 1e-6);
    CHECK(v.theta_excess <= 1e-12);

    // the tilted sequence is a smartingale only under the rebuilt measure
    CHECK(verify_smartingale(t, tm.tilted, tm.measure) <= 1e-12);
    CHECK(verify_smartingale(t, tm.tilted, base) > 1e-3);
}

TEST_CASE("affine weight keeps its quadratic integral") {
    const PartitionTree t = unit_tree(6);
    const PolySpace s = PolySpace::span_affine({0.5, 0.5}); // g(x) = (1 + x) / 2
    const MeasureTree base = MeasureTree::lebesgue(t);
    const double lambda = 0.1;
    const double c3 = s.c3(t.domain());
    REQUIRE(c3 == doctest::Approx(0.5));

    const Smartingale f = generate_smartingale(t, s, base, 0, 1.0, 23, DiffRule::haar);
    REQUIRE(verify_smartingale(t, f, base) <= 1e-12);

    const TiltedMeasure tm = build_measure_1d(t, f, lambda);
    const MeasureVerification v = verify_measure(t, f, tm, 16, 9);

    CHECK(v.residual <= 1e-12);
    // integral of g^2 is invariant even though total mass may drift
    CHECK(v.mass_drift <= 1e-13);
    const double nu_omega = 0.25 + 0.25 + 0.25 / 3.0; // integral of g^2 on [0, 1]
    CHECK(tm.measure.total_mass() >= nu_omega - 1e-12);
    CHECK(tm.measure.total_mass() <= nu_omega / (c3 * c3) + 1e-12);
    CHECK(v.density_exponent_min >= -3.0 * lambda - 1e-9);
    CHECK(v.density_exponent_max <= 2.0 * lambda + 1e-9);
    CHECK(v.theta_excess <= 1e-12);

    // two-sided mass comparison with the weight-range constants folded in
    const double lo_c = std::pow(c3, 2.0 + 3.0 * lambda);
    const double hi_c = std::pow(c3, 2.0 * lambda - 2.0);
    for (int lb = 1; lb <= 6; ++lb)
        for (std::size_t ib = 0; ib < t.level_size(lb); ++ib)
            for (int la = 0; la < lb; ++la) {
                const std::size_t ia = ib >> (lb - la);
                const double ratio = tm.measure.mass(t, lb, ib) / tm.measure.mass(t, la, ia);
                const double base_ratio = base.mass(t, lb, ib) / base.mass(t, la, ia);
                REQUIRE(ratio >= lo_c * std::pow(base_ratio, 1.0 + 3.0 * lambda) - 1e-12);
                REQUIRE(ratio <= hi_c * std::pow(base_ratio, 1.0 - 2.0 * lambda) + 1e-12);
            }
}

TEST_CASE("degenerate inputs are rejected") {
    const PartitionTree t = unit_tree(4);
    const PolySpace s0 = PolySpace::total_degree(1, 0);
    const PolySpace s1 = PolySpace::total_degree(1, 1);
    const MeasureTree base = MeasureTree::lebesgue(t);
    const Smartingale f0 = generate_smartingale(t, s0, base, 0, 1.0, 3, DiffRule::haar);

    CHECK_THROWS_AS((void)build_measure_1d(t, f0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS((void)build_measure_1d(t, f0, -0.1), std::invalid_argument);
    {
        const Smartingale f1 =
            generate_smartingale(t, s1, base, 2, 1.0, 3, DiffRule::gaussian_coeff);
        CHECK_THROWS_AS((void)build_measure_1d(t, f1, 0.1), std::invalid_argument);
        // degree 1 needs 2^(ell+1) >= 5 cells
        CHECK_THROWS_AS((void)build_measure_general(t, f1, 0.1, 0), std::invalid_argument);
        // last level 3 + ell 2 exceeds nothing here, but gaps must be > ell
        CHECK_THROWS_AS((void)build_measure_general(t, f0, 0.1, 2), std::invalid_argument);
    }
    {
        // affine spaces have no constants: the general path refuses them
        const PolySpace sa = PolySpace::span_affine({0.5, 0.5});
        const Smartingale fa = generate_smartingale(t, sa, base, 0, 1.0, 3, DiffRule::haar);
        CHECK_THROWS_AS((void)build_measure_general(t, fa, 0.1, 0), std::invalid_argument);
    }
    {
        // non-flat base measures are only handled by the closed form
        const MeasureTree wbase = MeasureTree::from_weights(t, 1, {0.5, 1.5});
        const Smartingale fw = generate_smartingale(t, s0, wbase, 0, 1.0, 5, DiffRule::haar);
        CHECK_THROWS_AS((void)build_measure_general(t, fw, 0.1, 0), std::invalid_argument);
    }
    {
        // a child of zero base mass leaves the two-cell system singular
        const MeasureTree zbase = MeasureTree::from_weights(t, 1, {0.0, 2.0});
        Smartingale fz;
        fz.space = s0;
        fz.base = zbase;
        fz.steps = {1};
        PiecewisePoly d = PiecewisePoly::zero(t, s0, 1);
        d.at(0)[0] = 1.0;
        d.at(1)[0] = 0.0;
        fz.diffs.push_back(std::move(d));
        CHECK(verify_smartingale(t, fz, zbase) <= 1e-14);
        CHECK_THROWS_AS((void)build_measure_1d(t, fz, 0.1), singular_split_error);
    }
    {
        // refinement deeper than the tree
        const Smartingale f4 =
            generate_smartingale(t, s0, base, 3, 1.0, 9, DiffRule::haar, 4, 4);
        CHECK_THROWS_AS((void)build_measure_general(t, f4, 0.1, 1), std::invalid_argument);
    }
    CHECK_THROWS_AS((void)lemma_property_suite(0, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)select_ell(t, s0, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(matrix_diagnostics({1.0, 2.0, 3.0}, 2, 2), std::invalid_argument);
}

TEST_CASE("selection of the refinement offset") {
    SUBCASE("constant space concentrates immediately") {
        const PartitionTree t = unit_tree(6);
        const EllSelection r = select_ell(t, PolySpace::total_degree(1, 0), 64, 2);
        CHECK(r.ell0 == 0);
        CHECK(r.ell == 0);
        CHECK(r.c_estimate > 0.9);
    }
    SUBCASE("affine space needs the dimension bound") {
        const PartitionTree t = unit_tree(10);
        const EllSelection r = select_ell(t, PolySpace::total_degree(1, 1), 64, 2);
        // dim S + dim S^2 = 5 forces at least 8 cells
        CHECK(r.ell >= 2);
        CHECK(r.ell0 <= r.ell);
        CHECK(r.c_estimate >= 0.05);
    }
}

TEST_CASE("inequality sampling over the parameter square") {
    const LemmaSuiteResult r = lemma_property_suite(100000, 77);
    CHECK(r.samples == 100000);

    // The stated inequalities are false on the full square: the slack
    // 3(1 - eta lambda) - (1 + eta) is negative once eta(1 + 3 lambda) > 2.
    // All failures must sit at lambda > 1/3; below that the pointwise
    // argument is airtight and no violation may appear.
    CHECK(r.violations > 0);
    CHECK(r.min_margin < 0.0);
    CHECK(r.worst_lambda > 1.0 / 3.0);
    CHECK(r.worst_case == 1);
    CHECK(r.samples_small_lambda > 25000);
    CHECK(r.violations_small_lambda == 0);
    CHECK(r.min_margin_small_lambda >= 0.0);

    // direct counterexample pinned: eta = 0.9, lambda = 0.9
    CHECK(3.0 * (1.0 - 0.9 * 0.9) - 1.9 == doctest::Approx(-1.33).epsilon(1e-12));
    // and the lower ratio bound itself fails at lambda = 0.99, eta = 0
    CHECK((1.0 - 0.99) / 1.0 < std::pow(2.0, -3.0 * 0.99));

    // spot values at lambda = 0.1, eta = 0: ratio 1.1 against 2^{+-}
    const double lo = std::pow(2.0, -0.3);
    const double hi = std::pow(2.0, 0.2);
    CHECK(1.1 > lo);
    CHECK(1.1 < hi);
    CHECK(lo == doctest::Approx(0.8122523963562356).epsilon(1e-12));
    CHECK(hi == doctest::Approx(1.148698354997035).epsilon(1e-12));
    // and the mirrored child ratio (1 - lambda) / 1 for eps = -1
    CHECK(0.9 > lo);
    CHECK(0.9 < hi);
}

TEST_CASE("row-angle diagnostics") {
    SUBCASE("two unit rows at a known angle") {
        const MatrixDiagnostics d = matrix_diagnostics({1.0, 0.0, 0.6, 0.8}, 2, 2);
        CHECK(d.alpha_max == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(d.abs_det == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(d.det_lower_bound == doctest::Approx(0.64).epsilon(1e-12));
        CHECK(d.abs_det >= d.det_lower_bound);
        CHECK(d.norm2 > 1.0);
        CHECK(d.norm2 < 1.3);
    }
    SUBCASE("orthonormal rows") {
        const MatrixDiagnostics d =
            matrix_diagnostics({1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0}, 3, 3);
        CHECK(d.alpha_max == doctest::Approx(0.0));
        CHECK(d.abs_det == doctest::Approx(1.0));
        CHECK(d.det_lower_bound == doctest::Approx(1.0));
        CHECK(d.norm2 == doctest::Approx(1.0));
    }
}

TEST_CASE("serial and parallel rebuilds agree bitwise") {
    const PartitionTree t = unit_tree(7);
    const MeasureTree base = MeasureTree::lebesgue(t);
    {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, base, 0, 1.0, 31, DiffRule::haar);
        const TiltedMeasure a = build_measure_1d(t, f, 0.07, false);
        const TiltedMeasure b = build_measure_1d(t, f, 0.07, true);
        REQUIRE(a.measure.weights() == b.measure.weights());
    }
    {
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f =
            generate_smartingale(t, s, base, 2, 1.0, 31, DiffRule::gaussian_coeff, 1, 4);
        const TiltedMeasure a = build_measure_general(t, f, 0.02, 2, false);
        const TiltedMeasure b = build_measure_general(t, f, 0.02, 2, true);
        REQUIRE(a.measure.weights() == b.measure.weights());
    }
}
