#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "smartlab/errors.hpp"
#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"
#include "smartlab/rng.hpp"

using namespace smartlab;

namespace {

// f = x as a level-l element of the degree-1 space (exact on each atom)
PiecewisePoly coordinate_poly(const PartitionTree& t, const PolySpace& s, int level) {
    PiecewisePoly f = PiecewisePoly::zero(t, s, level);
    for (std::size_t i = 0; i < t.level_size(level); ++i) {
        LocalBasis b(s, t.box(level, i));
        const double xa = t.lo(level, i)[0], xb = t.hi(level, i)[0];
        double va[2], vb[2];
        b.eval(&xa, va);
        b.eval(&xb, vb);
        const double det = va[0] * vb[1] - va[1] * vb[0];
        f.at(i)[0] = (xa * vb[1] - va[1] * xb) / det;
        f.at(i)[1] = (va[0] * xb - xa * vb[0]) / det;
    }
    return f;
}

} // namespace

TEST_CASE("conditional expectations of x under Lebesgue match dyadic averages") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 3, SplitSpec{});
    const PolySpace s = PolySpace::total_degree(1, 1);
    const MeasureTree leb = MeasureTree::lebesgue(t);
    const PiecewisePoly f = coordinate_poly(t, s, 0);

    const LevelValues e0 = conditional_expectation(t, s, f, 0, leb);
    CHECK(e0.v[0] == doctest::Approx(0.5).epsilon(1e-14));

    const LevelValues e1 = conditional_expectation(t, s, f, 1, leb);
    CHECK(e1.v[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(e1.v[1] == doctest::Approx(0.75).epsilon(1e-14));

    const LevelValues e3 = conditional_expectation(t, s, f, 3, leb);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(e3.v[i] == doctest::Approx((2.0 * i + 1.0) / 16.0).epsilon(1e-14));
}

TEST_CASE("weighted measures integrate exactly") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 3, SplitSpec{});
    const PolySpace s = PolySpace::total_degree(1, 1);

    // density 2 on [0,1/2], 0 on [1/2,1]
    const MeasureTree m = MeasureTree::from_weights(t, 1, {2.0, 0.0});
    CHECK(m.total_mass() == doctest::Approx(1.0).epsilon(1e-15));
    const PiecewisePoly f = coordinate_poly(t, s, 0);
    CHECK(integrate(t, s, f, m) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(conditional_expectation(t, s, f, 0, m).v[0] == doctest::Approx(0.25).epsilon(1e-14));

    // mass pyramid: additivity and hybrid fine-level masses
    for (int l = 0; l < 3; ++l)
        for (std::size_t i = 0; i < t.level_size(l); ++i)
            CHECK(m.mass(t, l, i) ==
                  doctest::Approx(m.mass(t, l + 1, 2 * i) + m.mass(t, l + 1, 2 * i + 1)).epsilon(1e-14));
    CHECK(m.mass(t, 3, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(m.mass(t, 3, 7) == doctest::Approx(0.0));
}

TEST_CASE("x squared integrates to 1/3 and projects onto x - 1/6") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 2, SplitSpec{});
    const PolySpace s = PolySpace::total_degree(1, 1);
    const MeasureTree leb = MeasureTree::lebesgue(t);

    // x^2 as an element of the squared space at level 0
    PiecewisePoly f2 = PiecewisePoly::zero(t, s, 0, true);
    f2.at(0)[0] = 1.0 / 3.0;
    f2.at(0)[1] = 1.0 / (2.0 * std::sqrt(3.0));
    f2.at(0)[2] = 1.0 / (6.0 * std::sqrt(5.0));
    const double x = 0.37;
    CHECK(f2.eval(t, s, &x) == doctest::Approx(x * x).epsilon(1e-13));

    CHECK(integrate(t, s, f2, leb) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    const PiecewisePoly p = project(t, s, f2, 0, leb);
    // x - 1/6 in the level-0 orthonormal basis: (1/3, 1/(2 sqrt 3))
    CHECK(p.at(0)[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(p.at(0)[1] == doctest::Approx(1.0 / (2.0 * std::sqrt(3.0))).epsilon(1e-12));
    for (double xx : {0.1, 0.5, 0.93})
        CHECK(p.eval(t, s, &xx) == doctest::Approx(xx - 1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("projection under a weighted measure is idempotent, self-adjoint, tower-consistent") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 4, SplitSpec{});
    const PolySpace s = PolySpace::total_degree(1, 1);

    auto rng = engine_for(20240816, 0);
    std::vector<double> w(16);
    for (double& x : w) x = uniform(rng, 0.2, 2.0);
    const MeasureTree m = MeasureTree::from_weights(t, 4, w);

    PiecewisePoly f = PiecewisePoly::zero(t, s, 4, true);
    for (double& c : f.coef) c = gaussian(rng);
    PiecewisePoly h = PiecewisePoly::zero(t, s, 4, true);
    for (double& c : h.coef) c = gaussian(rng);

    const PiecewisePoly pf2 = project(t, s, f, 2, m);
    const PiecewisePoly pf2_again = project(t, s, pf2, 2, m);
    for (std::size_t i = 0; i < pf2.coef.size(); ++i)
        CHECK(pf2_again.coef[i] == doctest::Approx(pf2.coef[i]).epsilon(1e-10));

    // self-adjointness under m
    const PiecewisePoly ph2 = project(t, s, h, 2, m);
    const double a = inner_product(t, s, pf2, h, m);
    const double b = inner_product(t, s, f, ph2, m);
    CHECK(a == doctest::Approx(b).epsilon(1e-10));

    // tower property
    const PiecewisePoly pf1_direct = project(t, s, f, 1, m);
    const PiecewisePoly pf1_tower = project(t, s, pf2, 1, m);
    for (std::size_t i = 0; i < pf1_direct.coef.size(); ++i)
        CHECK(pf1_tower.coef[i] == doctest::Approx(pf1_direct.coef[i]).epsilon(1e-10));

    // residual orthogonality against every basis element at level 2
    for (std::size_t atom = 0; atom < t.level_size(2); ++atom) {
        for (int j = 0; j < s.dim_s(); ++j) {
            PiecewisePoly b2 = PiecewisePoly::zero(t, s, 2, false);
            b2.at(atom)[j] = 1.0;
            const double lhs = inner_product(t, s, f, b2, m) - inner_product(t, s, pf2, b2, m);
            CHECK(std::abs(lhs) <= 1e-10);
        }
    }
}

TEST_CASE("degree-0 projection equals the conditional expectation") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 3, SplitSpec{});
    const PolySpace s0 = PolySpace::total_degree(1, 0);

    auto rng = engine_for(5, 1);
    std::vector<double> w(8);
    for (double& x : w) x = uniform(rng, 0.5, 1.5);
    const MeasureTree m = MeasureTree::from_weights(t, 3, w);

    PiecewisePoly f = PiecewisePoly::zero(t, s0, 3, true);
    for (double& c : f.coef) c = gaussian(rng);

    const PiecewisePoly p = project(t, s0, f, 1, m);
    const LevelValues e = conditional_expectation(t, s0, f, 1, m);
    for (std::size_t i = 0; i < 2; ++i) {
        LocalBasis b(s0, t.box(1, i));
        // constant basis value is |A|^{-1/2}; coefficient * value = function value
        const double c0 = p.at(i)[0] * b.eval_one(0, t.lo(1, i));
        CHECK(c0 == doctest::Approx(e.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("absolute conditional expectation handles kinks") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 1, SplitSpec{});
    const PolySpace s = PolySpace::total_degree(1, 1);
    const MeasureTree leb = MeasureTree::lebesgue(t);

    // f = 2x - 1: kink at 1/2 falls on an atom boundary, any panel count is exact
    PiecewisePoly f = PiecewisePoly::zero(t, s, 0);
    f.at(0)[0] = 0.0;
    f.at(0)[1] = 1.0 / std::sqrt(3.0);
    const LevelValues e = abs_conditional_expectation(t, s, f, 0, leb, 2);
    CHECK(e.v[0] == doctest::Approx(0.5).epsilon(1e-13));

    // f = x - 1/3: kink interior to [0,1/2]; composite panels approximate it
    PiecewisePoly g = PiecewisePoly::zero(t, s, 0);
    g.at(0)[0] = 0.5 - 1.0 / 3.0;
    g.at(0)[1] = 1.0 / (2.0 * std::sqrt(3.0));
    const LevelValues eg = abs_conditional_expectation(t, s, g, 0, leb, 64);
    CHECK(eg.v[0] == doctest::Approx(5.0 / 18.0).epsilon(1e-4));
}

TEST_CASE("measure serialization round-trips") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 3, SplitSpec{});
    auto rng = engine_for(17, 3);
    std::vector<double> w(8);
    for (double& x : w) x = uniform(rng, 0.1, 3.0);
    const MeasureTree m = MeasureTree::from_weights(t, 3, w);

    std::ostringstream s1;
    m.serialize(s1);
    std::istringstream in(s1.str());
    const MeasureTree m2 = MeasureTree::deserialize(in, t);
    std::ostringstream s2;
    m2.serialize(s2);
    CHECK(s1.str() == s2.str());
    CHECK(m2.resolution() == 3);
    CHECK(m2.total_mass() == doctest::Approx(m.total_mass()).epsilon(1e-15));
}

TEST_CASE("invalid measures are rejected") {
    const PartitionTree t = PartitionTree::build(Box::unit_cube(1), 2, SplitSpec{});
    CHECK_THROWS_AS(MeasureTree::from_weights(t, 1, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(MeasureTree::from_weights(t, 1, {1.0, -0.5}), std::invalid_argument);
    CHECK_THROWS_AS(MeasureTree::from_weights(t, 5, std::vector<double>(32, 1.0)),
                    std::invalid_argument);

    // zero-mass atom: conditional expectation must refuse
    const PolySpace s = PolySpace::total_degree(1, 0);
    const MeasureTree m = MeasureTree::from_weights(t, 1, {2.0, 0.0});
    PiecewisePoly f = PiecewisePoly::zero(t, s, 1);
    f.at(0)[0] = 1.0;
    CHECK_THROWS_AS(conditional_expectation(t, s, f, 1, m), std::invalid_argument);
}
