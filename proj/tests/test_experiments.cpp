#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "smartlab/change_of_measure.hpp"
#include "smartlab/experiments.hpp"
#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"
#include "smartlab/rng.hpp"
#include "smartlab/smartingale.hpp"

using namespace smartlab;

namespace {

PartitionTree unit_tree(int depth) { return PartitionTree::build(Box::unit_cube(1), depth, {}); }

Smartingale zero_smartingale(const PartitionTree& t, const PolySpace& s, const MeasureTree& base) {
    Smartingale f;
    f.space = s;
    f.base = base;
    f.bound_L = 1.0;
    f.steps = {1};
    f.diffs.push_back(PiecewisePoly::zero(t, s, 1));
    return f;
}

} // namespace

TEST_CASE("random-walk tail frequencies respect the exponential bound") {
    SUBCASE("bound formula and the ten-heads event") {
        // reaching 10 with unit steps while the step count stays <= 10 forces
        // ten consecutive +1 moves: probability 2^-10
        const FreedmanResult r = freedman_tail(1.0, {10.0}, {10.0}, 20000, 1000, 11);
        REQUIRE(r.cells.size() == 1);
        CHECK(r.cells[0].bound == doctest::Approx(std::exp(-2.5)).epsilon(1e-15));
        CHECK(r.cells[0].empirical <= 0.005);
        CHECK(r.cells[0].empirical >= 0.0);
        CHECK(r.cells[0].pass);
        CHECK(r.all_pass);
    }

    SUBCASE("unreachable level is never hit") {
        const FreedmanResult r = freedman_tail(1.0, {1e6}, {50.0}, 2000, 100, 7);
        CHECK(r.cells[0].hits == 0);
        CHECK(r.cells[0].empirical == 0.0);
        CHECK(r.cells[0].std_error == 0.0);
        CHECK(r.cells[0].pass);
    }

    SUBCASE("large budget reduces the event to plain first passage") {
        // a = 1: after one step M is +1 or -1, so tau_1 = 1 with prob 1/2
        const FreedmanResult r = freedman_tail(1.0, {1.0}, {1e9}, 40000, 1, 3);
        CHECK(r.cells[0].empirical == doctest::Approx(0.5).epsilon(0.05));
        CHECK(r.cells[0].bound == doctest::Approx(std::exp(-0.5 / (1.0 + 1e9))).epsilon(1e-12));
    }

    SUBCASE("monotonicity across the grid on shared paths") {
        const FreedmanResult r =
            freedman_tail(1.0, {3.0, 6.0}, {25.0, 100.0}, 5000, 200, 19);
        REQUIRE(r.cells.size() == 4);
        // cells are a-major: (3,25), (3,100), (6,25), (6,100)
        CHECK(r.cells[0].empirical <= r.cells[1].empirical); // larger budget
        CHECK(r.cells[2].empirical <= r.cells[3].empirical);
        CHECK(r.cells[1].empirical >= r.cells[3].empirical); // higher level
        for (const FreedmanCell& c : r.cells) CHECK(c.pass);
    }

    SUBCASE("serial and parallel runs agree exactly") {
        const FreedmanResult a = freedman_tail(0.5, {2.0, 4.0}, {30.0}, 3000, 150, 23, true);
        const FreedmanResult b = freedman_tail(0.5, {2.0, 4.0}, {30.0}, 3000, 150, 23, false);
        REQUIRE(a.cells.size() == b.cells.size());
        for (std::size_t i = 0; i < a.cells.size(); ++i) {
            CHECK(a.cells[i].hits == b.cells[i].hits);
            CHECK(a.cells[i].empirical == b.cells[i].empirical);
        }
    }

    SUBCASE("degenerate inputs are rejected") {
        CHECK_THROWS_AS((void)freedman_tail(0.0, {1.0}, {1.0}, 10, 10, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS((void)freedman_tail(1.0, {}, {1.0}, 10, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)freedman_tail(1.0, {1.0}, {-1.0}, 10, 10, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS((void)freedman_tail(1.0, {1.0}, {1.0}, 0, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)freedman_tail(1.0, {1.0}, {1.0}, 10, 0, 1), std::invalid_argument);
    }
}

TEST_CASE("iterated-logarithm ratios for the classical dyadic construction") {
    const int depth = 12;
    const PartitionTree t = unit_tree(depth);
    const MeasureTree leb = MeasureTree::lebesgue(t);
    const PolySpace s = PolySpace::total_degree(1, 0);
    const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 5, DiffRule::haar);

    SUBCASE("square function doubles the depth count") {
        const LevelValues sq = square_function(t, f, 5, leb);
        for (double v : sq.v) CHECK(v == doctest::Approx(10.0).epsilon(1e-12));
    }

    const LilResult r = lil_ratio(t, f, leb, 2.0, {1, 4, 8, 12}, 2000, 31);

    SUBCASE("the loglog guard skips shallow depths only") {
        // S_1^2 = 2 < e: skipped everywhere; S_4^2 = 8 > e: always valid
        CHECK(r.skipped[0] == 2000);
        CHECK(r.skipped[1] == 0);
        CHECK(r.skipped[2] == 0);
        CHECK(r.skipped[3] == 0);
        CHECK(std::isnan(r.ratios[0][0]));
        CHECK(std::isnan(r.p50[0]));
    }

    SUBCASE("ratios match a direct evaluation at the sampled point") {
        std::mt19937_64 rng = engine_for(31, 17);
        const std::size_t leaf = sample_atom(t, leb, 12, rng);
        double x[1] = {0.5 * (t.lo(12, leaf)[0] + t.hi(12, leaf)[0])};
        const double fn = f.eval(t, 8, x);
        const double expect = fn / std::sqrt(2.0 * 16.0 * std::log(std::log(16.0)));
        CHECK(r.ratios[2][17] == doctest::Approx(expect).epsilon(1e-13));
    }

    SUBCASE("desk-scale percentile bound at the deepest level") {
        CHECK(r.p99[3] <= 1.5);
        CHECK(r.p50[3] <= r.p99[3]);
        CHECK(std::isfinite(r.p99[3]));
    }

    SUBCASE("zero smartingale skips every point") {
        const Smartingale z = zero_smartingale(t, s, leb);
        const LilResult rz = lil_ratio(t, z, leb, 2.0, {2, 4}, 50, 1);
        CHECK(rz.skipped[0] == 50);
        CHECK(rz.skipped[1] == 50);
        CHECK(std::isnan(rz.p99[1]));
    }

    SUBCASE("grid validation") {
        CHECK_THROWS_AS((void)lil_ratio(t, f, leb, 2.0, {}, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)lil_ratio(t, f, leb, 2.0, {4, 4}, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)lil_ratio(t, f, leb, 2.0, {4, 13}, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)lil_ratio(t, f, leb, 0.0, {4}, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)lil_ratio(t, f, leb, 2.0, {4}, 0, 1), std::invalid_argument);
    }

    SUBCASE("parallel and serial agree bitwise") {
        const LilResult a = lil_ratio(t, f, leb, 2.0, {4, 12}, 300, 31, true);
        const LilResult b = lil_ratio(t, f, leb, 2.0, {4, 12}, 300, 31, false);
        CHECK(a.ratios == b.ratios);
        CHECK(a.p99 == b.p99);
    }
}

TEST_CASE("projected-martingale square function stays comparable") {
    const int depth = 12;
    const PartitionTree t = unit_tree(depth);
    const MeasureTree leb = MeasureTree::lebesgue(t);

    SUBCASE("piecewise-constant differences keep the ratio below one") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 7, DiffRule::haar);
        const SquareComparisonResult r = square_comparison(t, f, leb, {6, 12}, 0, 1);
        REQUIRE(r.c_emp.size() == 2);
        CHECK(r.c_emp[0] <= 1.0 + 1e-12);
        CHECK(r.c_emp[1] <= 1.0 + 1e-12);
        CHECK(r.c_emp[0] > 0.0);
        CHECK(r.skipped[0] == 0);
    }

    SUBCASE("affine differences give a finite stable constant") {
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 11, DiffRule::rademacher_like);
        const SquareComparisonResult r = square_comparison(t, f, leb, {6, 12}, 0, 1);
        CHECK(std::isfinite(r.c_emp[0]));
        CHECK(std::isfinite(r.c_emp[1]));
        CHECK(r.c_emp[0] > 0.0);
        CHECK(r.c_emp[1] <= 2.0 * r.c_emp[0]); // doubling the depth stays within factor 2
    }

    SUBCASE("sampling never exceeds the exhaustive maximum") {
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 11, DiffRule::rademacher_like);
        const SquareComparisonResult full = square_comparison(t, f, leb, {8}, 0, 1);
        const SquareComparisonResult sampled = square_comparison(t, f, leb, {8}, 500, 9);
        CHECK(sampled.c_emp[0] <= full.c_emp[0] + 1e-15);
        CHECK(sampled.c_emp[0] > 0.0);
    }

    SUBCASE("zero smartingale reports zero with everything skipped") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale z = zero_smartingale(t, s, leb);
        const SquareComparisonResult r = square_comparison(t, z, leb, {4}, 0, 1);
        CHECK(r.c_emp[0] == 0.0);
        CHECK(r.skipped[0] == 16);
    }
}

TEST_CASE("first passage of the sequence forces first passage of its projection") {
    const int depth = 9;
    const PartitionTree t = unit_tree(depth);
    const MeasureTree leb = MeasureTree::lebesgue(t);

    SUBCASE("piecewise-constant case is exact for every level") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 13, DiffRule::haar);
        const StoppingResult r = stopping_inclusion(t, f, leb, {0.5, 1.0, 2.0, 4.0}, 400, 3);
        CHECK(r.beta == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(r.fitted_K == 0.0); // constant pieces have zero gradient
        for (std::size_t i = 0; i < r.a_grid.size(); ++i) {
            CHECK(r.violations[i] == 0);
            CHECK(r.triggered[i] <= 400);
        }
        CHECK(r.triggered[0] > 0);
    }

    SUBCASE("affine case holds above the fitted threshold") {
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 17, DiffRule::gaussian_coeff);
        const StoppingResult probe = stopping_inclusion(t, f, leb, {1.0}, 300, 5);
        REQUIRE(probe.fitted_K > 0.0);
        const double a = 2.0 * probe.fitted_K * f.bound_L;
        const StoppingResult r = stopping_inclusion(t, f, leb, {a}, 300, 5);
        CHECK(r.violations[0] == 0);
        CHECK(r.fitted_K == probe.fitted_K); // same sample, same diagnostic
    }

    SUBCASE("bad inputs are rejected") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 13, DiffRule::haar);
        CHECK_THROWS_AS((void)stopping_inclusion(t, f, leb, {}, 10, 1), std::invalid_argument);
        CHECK_THROWS_AS((void)stopping_inclusion(t, f, leb, {-1.0}, 10, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS((void)stopping_inclusion(t, f, leb, {1.0}, 0, 1), std::invalid_argument);
    }
}

TEST_CASE("tilted-measure descent sampling matches the masses") {
    const PartitionTree t = unit_tree(3);
    const MeasureTree m = MeasureTree::from_weights(t, 1, {1.5, 0.5});
    long long left = 0;
    const long long n = 20000;
    for (long long i = 0; i < n; ++i) {
        std::mt19937_64 rng = engine_for(41, static_cast<std::uint64_t>(i));
        if (sample_atom(t, m, 1, rng) == 0) ++left;
    }
    CHECK(static_cast<double>(left) / n == doctest::Approx(0.75).epsilon(0.02));

    std::mt19937_64 rng = engine_for(41, 0);
    CHECK_THROWS_AS((void)sample_atom(t, m, 4, rng), std::invalid_argument);
    const MeasureTree dead = MeasureTree::from_weights(t, 1, {0.0, 0.0});
    CHECK_THROWS_AS((void)sample_atom(t, dead, 2, rng), std::logic_error);
}

TEST_CASE("variation ratios decompose exactly and stay positive") {
    const int depth = 9;
    const PartitionTree t = unit_tree(depth);
    const MeasureTree leb = MeasureTree::lebesgue(t);

    SUBCASE("general affine construction at small tilt") {
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f =
            generate_smartingale(t, s, leb, 2, 1.0, 29, DiffRule::rademacher_like, 1, 7);
        const double lambda = 0.02;
        const TiltedMeasure tm = build_measure_general(t, f, lambda, 2);
        const VariationResult r = variation_ratio(t, f, tm, {2, 5, 7, 9}, 200, 13);

        CHECK(r.threshold == doctest::Approx(lambda / 2).epsilon(1e-15));
        CHECK(r.max_identity_residual <= 1e-10);
        CHECK(r.monotone_ok);
        for (long long sk : r.skipped) CHECK(sk == 0);
        CHECK(r.frac_above_deepest >= 0.0);
        CHECK(r.frac_above_deepest <= 1.0);
        CHECK(r.frac_above_last_quarter <= r.frac_above_deepest + 1e-15);
        // at least one sampled ratio is an actual number at each depth
        for (const auto& row : r.ratios) {
            bool any = false;
            for (double v : row) any = any || !std::isnan(v);
            CHECK(any);
        }
    }

    SUBCASE("closed-form tilt on constants decomposes as well") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 37, DiffRule::haar);
        const TiltedMeasure tm = build_measure_1d(t, f, 0.05);
        const VariationResult r = variation_ratio(t, f, tm, {3, 6, 9}, 150, 7);
        CHECK(r.max_identity_residual <= 1e-10);
        CHECK(r.monotone_ok);
        CHECK(r.lambda == 0.05);
    }

    SUBCASE("zero smartingale is fully skipped") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale z = zero_smartingale(t, s, leb);
        const TiltedMeasure tm = build_measure_1d(t, z, 0.1);
        const VariationResult r = variation_ratio(t, z, tm, {2, 4}, 60, 3);
        CHECK(r.skipped[0] == 60);
        CHECK(r.skipped[1] == 60);
        CHECK(r.frac_above_deepest == 0.0);
        CHECK(r.max_identity_residual == 0.0);
        CHECK(r.monotone_ok);
    }

    SUBCASE("mismatched inputs are rejected") {
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 37, DiffRule::haar);
        const Smartingale g = generate_smartingale(t, s, leb, 1, 1.0, 38, DiffRule::haar);
        const TiltedMeasure tm = build_measure_1d(t, g, 0.05);
        CHECK_THROWS_AS((void)variation_ratio(t, f, tm, {3}, 10, 1), std::invalid_argument);
    }
}

TEST_CASE("box counting recovers the dimension of plain sets") {
    const int depth = 8;
    const PartitionTree t = unit_tree(depth);

    SUBCASE("full, half, and singleton survivor sets") {
        std::vector<SurvivorSet> full, half, single;
        for (int l = 4; l <= 8; ++l) {
            SurvivorSet a{l, 0.0, {}};
            for (std::size_t i = 0; i < t.level_size(l); ++i) a.atoms.push_back(i);
            SurvivorSet b{l, 0.0, {}};
            for (std::size_t i = 0; i < t.level_size(l) / 2; ++i) b.atoms.push_back(i);
            SurvivorSet c{l, 0.0, {0}};
            full.push_back(std::move(a));
            half.push_back(std::move(b));
            single.push_back(std::move(c));
        }
        const BoxDimensionFit rf = box_dimension(full, t);
        CHECK(rf.slope == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rf.std_error <= 1e-12);
        CHECK(rf.levels == 5);
        const BoxDimensionFit rh = box_dimension(half, t);
        CHECK(rh.slope == doctest::Approx(1.0).epsilon(1e-12));
        const BoxDimensionFit rs = box_dimension(single, t);
        CHECK(rs.slope == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("validation of the fit window") {
        std::vector<SurvivorSet> two{{4, 0.0, {0}}, {5, 0.0, {0}}};
        CHECK_THROWS_AS((void)box_dimension(two, t), std::invalid_argument);
        std::vector<SurvivorSet> repeat{{4, 0.0, {0}}, {4, 0.0, {0}}, {5, 0.0, {0}}};
        CHECK_THROWS_AS((void)box_dimension(repeat, t), std::invalid_argument);
        std::vector<SurvivorSet> hole{{4, 0.0, {0}}, {5, 0.0, {}}, {6, 0.0, {0}}};
        CHECK_THROWS_AS((void)box_dimension(hole, t), std::invalid_argument);
    }

    SUBCASE("survivor extraction keeps everything for a permissive threshold") {
        const MeasureTree leb = MeasureTree::lebesgue(t);
        const PolySpace s = PolySpace::total_degree(1, 0);
        const Smartingale f = generate_smartingale(t, s, leb, 0, 1.0, 43, DiffRule::haar);
        const std::vector<SurvivorSet> sv = variation_survivors(t, f, {4, 6, 8}, -1e9);
        REQUIRE(sv.size() == 3);
        CHECK(sv[0].atoms.size() == 16);
        CHECK(sv[1].atoms.size() == 64);
        CHECK(sv[2].atoms.size() == 256);
        CHECK(box_dimension(sv, t).slope == doctest::Approx(1.0).epsilon(1e-12));

        // a sign-balanced sequence stays below a huge threshold everywhere
        const std::vector<SurvivorSet> none = variation_survivors(t, f, {4, 6, 8}, 1e9);
        CHECK(none[0].atoms.empty());
        CHECK_THROWS_AS((void)box_dimension(none, t), std::invalid_argument);
    }

    SUBCASE("surviving fraction grows as the ratio threshold drops") {
        const MeasureTree leb = MeasureTree::lebesgue(t);
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f =
            generate_smartingale(t, s, leb, 2, 1.0, 51, DiffRule::rademacher_like, 1, 6);
        const std::vector<SurvivorSet> loose = variation_survivors(t, f, {6, 7, 8}, -0.5);
        const std::vector<SurvivorSet> tight = variation_survivors(t, f, {6, 7, 8}, 0.5);
        for (int i = 0; i < 3; ++i)
            CHECK(tight[static_cast<std::size_t>(i)].atoms.size() <=
                  loose[static_cast<std::size_t>(i)].atoms.size());
    }
}
