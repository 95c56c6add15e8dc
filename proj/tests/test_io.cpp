#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "smartlab/io.hpp"
#include "smartlab/report.hpp"
#include "smartlab/rng.hpp"

using namespace smartlab;

namespace {

PartitionTree unit_tree(int depth, int dim = 1) {
    SplitSpec spec;
    spec.rule = SplitRule::midpoint;
    return PartitionTree::build(Box::unit_cube(dim), depth, spec);
}

std::string temp_path(const std::string& name) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "smartlab_io_test";
    fs::create_directories(dir);
    return (dir / name).string();
}

} // namespace

TEST_CASE("smartingale serialization round-trips exactly") {
    const PartitionTree t = unit_tree(4);
    const MeasureTree base = MeasureTree::lebesgue(t);

    SUBCASE("total-degree space with general differences") {
        const PolySpace s = PolySpace::total_degree(1, 1);
        const Smartingale f =
            generate_smartingale(t, s, base, 2, 1.0, 7, DiffRule::rademacher_like, 1, 4);
        std::ostringstream os;
        serialize_smartingale(os, t, f);
        std::istringstream is(os.str());
        const Smartingale g = deserialize_smartingale(is, t);

        CHECK(g.steps == f.steps);
        CHECK(g.sparsity == f.sparsity);
        CHECK(g.bound_L == f.bound_L);
        CHECK(g.space.kind() == PolySpace::Kind::total_degree);
        CHECK(g.space.degree() == 1);
        REQUIRE(g.diffs.size() == f.diffs.size());
        for (std::size_t k = 0; k < f.diffs.size(); ++k) {
            CHECK(g.diffs[k].level == f.diffs[k].level);
            CHECK(g.diffs[k].coef == f.diffs[k].coef); // %.17g keeps every bit
        }
        CHECK(g.base.weights() == f.base.weights());

        auto rng = engine_for(5, 0);
        for (int i = 0; i < 16; ++i) {
            const double x = uniform01(rng);
            CHECK(f.eval(t, 4, &x) == g.eval(t, 4, &x));
        }
    }

    SUBCASE("affine span with a non-uniform base measure") {
        const PolySpace s = PolySpace::span_affine({0.75, 0.25});
        Smartingale f = generate_smartingale(t, s, base, 1, 0.5, 11, DiffRule::haar, 1, 3);
        f.base = MeasureTree::from_weights(t, 2, {1.2, 0.8, 1.1, 0.9});
        std::ostringstream os;
        serialize_smartingale(os, t, f);
        std::istringstream is(os.str());
        const Smartingale g = deserialize_smartingale(is, t);
        CHECK(g.space.kind() == PolySpace::Kind::span_affine);
        CHECK(g.space.g_coef() == std::vector<double>{0.75, 0.25});
        CHECK(g.base.resolution() == 2);
        CHECK(g.base.weights() == f.base.weights());
        REQUIRE(g.diffs.size() == f.diffs.size());
        for (std::size_t k = 0; k < f.diffs.size(); ++k)
            CHECK(g.diffs[k].coef == f.diffs[k].coef);
    }
}

TEST_CASE("artifact loaders accept the metadata preamble") {
    const PartitionTree t = unit_tree(3);
    const std::string preamble = "# config-hash 0123456789abcdef\n# test artifact\n";

    std::ostringstream ts;
    t.serialize(ts);
    const std::string tree_path = temp_path("tree.txt");
    write_file(tree_path, preamble + ts.str());
    const PartitionTree t2 = load_tree(tree_path);
    CHECK(t2.depth() == 3);
    CHECK(t2.dim() == 1);
    std::ostringstream ts2;
    t2.serialize(ts2);
    CHECK(ts2.str() == ts.str());

    const MeasureTree m = MeasureTree::from_weights(t, 1, {1.5, 0.5});
    std::ostringstream ms;
    m.serialize(ms);
    const std::string measure_path = temp_path("measure.txt");
    write_file(measure_path, preamble + ms.str());
    const MeasureTree m2 = load_measure(measure_path, t);
    CHECK(m2.weights() == m.weights());

    const PolySpace s = PolySpace::total_degree(1, 0);
    const MeasureTree base = MeasureTree::lebesgue(t);
    const Smartingale f = generate_smartingale(t, s, base, 0, 1.0, 3, DiffRule::haar, 1, 3);
    std::ostringstream fs;
    serialize_smartingale(fs, t, f);
    const std::string smart_path = temp_path("smartingale.txt");
    write_file(smart_path, preamble + fs.str());
    const Smartingale f2 = load_smartingale(smart_path, t);
    CHECK(f2.steps == f.steps);
    for (std::size_t k = 0; k < f.diffs.size(); ++k) CHECK(f2.diffs[k].coef == f.diffs[k].coef);
}

TEST_CASE("malformed payloads are rejected") {
    const PartitionTree t = unit_tree(3);
    const MeasureTree base = MeasureTree::lebesgue(t);
    const PolySpace s = PolySpace::total_degree(1, 1);
    const Smartingale f =
        generate_smartingale(t, s, base, 1, 1.0, 2, DiffRule::rademacher_like, 1, 3);
    std::ostringstream os;
    serialize_smartingale(os, t, f);
    const std::string good = os.str();

    SUBCASE("truncated stream") {
        std::istringstream is(good.substr(0, good.size() / 2));
        CHECK_THROWS_AS(deserialize_smartingale(is, t), std::invalid_argument);
    }
    SUBCASE("wrong leading keyword") {
        std::istringstream is("sequence" + good.substr(std::string("smartingale").size()));
        CHECK_THROWS_AS(deserialize_smartingale(is, t), std::invalid_argument);
    }
    SUBCASE("atom rows out of order") {
        std::ostringstream ps;
        serialize_poly(ps, t, f.diffs[0]);
        std::string text = ps.str();
        const auto first_row = text.find('\n') + 1;
        const auto second_row = text.find('\n', first_row) + 1;
        const auto third_row = text.find('\n', second_row) + 1;
        std::string swapped = text.substr(0, first_row) +
                              text.substr(second_row, third_row - second_row) +
                              text.substr(first_row, second_row - first_row) +
                              text.substr(third_row);
        std::istringstream is(swapped);
        CHECK_THROWS_AS(deserialize_poly(is, t), std::invalid_argument);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_tree(temp_path("does_not_exist.txt")), std::runtime_error);
    }
    SUBCASE("mismatched dimension") {
        const PartitionTree t2 = unit_tree(3, 2);
        std::istringstream is(good);
        CHECK_THROWS_AS(deserialize_smartingale(is, t2), std::invalid_argument);
    }
}
