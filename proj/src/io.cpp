#include "smartlab/io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "smartlab/report.hpp"

namespace smartlab {

namespace {

[[noreturn]] void malformed(const std::string& what) {
    throw std::invalid_argument("io: malformed payload: " + what);
}

void expect_keyword(std::istream& is, const std::string& keyword) {
    std::string tok;
    if (!(is >> tok)) malformed("missing '" + keyword + "'");
    if (tok != keyword) malformed("expected '" + keyword + "', found '" + tok + "'");
}

template <class T>
T read_value(std::istream& is, const std::string& what) {
    T v{};
    if (!(is >> v)) malformed("unreadable " + what);
    return v;
}

} // namespace

void serialize_poly(std::ostream& os, const PartitionTree& t, const PiecewisePoly& p) {
    if (p.level < 0 || p.level > t.depth()) malformed("poly level outside the tree");
    os << "poly level " << p.level << " ncoef " << p.ncoef << " squared " << (p.squared ? 1 : 0)
       << "\n";
    const std::size_t n = t.level_size(p.level);
    for (std::size_t i = 0; i < n; ++i) {
        os << t.heap_id(p.level, i) << ":";
        const double* c = p.at(i);
        for (int j = 0; j < p.ncoef; ++j) os << (j == 0 ? " " : ",") << fmt_g17(c[j]);
        os << "\n";
    }
}

PiecewisePoly deserialize_poly(std::istream& is, const PartitionTree& t) {
    expect_keyword(is, "poly");
    expect_keyword(is, "level");
    PiecewisePoly p;
    p.level = read_value<int>(is, "poly level");
    expect_keyword(is, "ncoef");
    p.ncoef = read_value<int>(is, "poly ncoef");
    expect_keyword(is, "squared");
    p.squared = read_value<int>(is, "poly squared flag") != 0;
    if (p.level < 0 || p.level > t.depth()) malformed("poly level outside the tree");
    if (p.ncoef <= 0 || p.ncoef > 4096) malformed("poly ncoef out of range");
    const std::size_t n = t.level_size(p.level);
    p.coef.assign(n * static_cast<std::size_t>(p.ncoef), 0.0);
    std::string line;
    std::getline(is, line); // consume the rest of the header line
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line)) malformed("poly atom row missing");
        std::replace(line.begin(), line.end(), ':', ' ');
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        const auto id = read_value<unsigned long long>(ls, "poly atom id");
        if (id != t.heap_id(p.level, i)) malformed("poly atom rows out of order");
        double* c = p.at(i);
        for (int j = 0; j < p.ncoef; ++j) c[j] = read_value<double>(ls, "poly coefficient");
    }
    return p;
}

void serialize_smartingale(std::ostream& os, const PartitionTree& t, const Smartingale& f) {
    os << "smartingale\n";
    if (f.space.kind() == PolySpace::Kind::total_degree) {
        os << "space total " << f.space.dim() << " " << f.space.degree() << "\n";
    } else {
        const auto& g = f.space.g_coef();
        os << "space affine " << g.size();
        for (double c : g) os << " " << fmt_g17(c);
        os << "\n";
    }
    os << "bound " << fmt_g17(f.bound_L) << " sparsity " << f.sparsity << "\n";
    os << "steps " << f.steps.size();
    for (int n : f.steps) os << " " << n;
    os << "\n";
    // The base measure is embedded as a counted block (resolution-level
    // weights), so the stream stays self-delimiting for the blocks after it.
    const auto& w = f.base.weights();
    os << "base resolution " << f.base.resolution() << " cells " << w.size() << "\n";
    for (std::size_t i = 0; i < w.size(); ++i) {
        os << ((std::uint64_t{1} << f.base.resolution()) + i) << " " << fmt_g17(w[i]) << "\n";
    }
    for (const auto& d : f.diffs) serialize_poly(os, t, d);
    os << "end smartingale\n";
}

Smartingale deserialize_smartingale(std::istream& is, const PartitionTree& t) {
    expect_keyword(is, "smartingale");
    expect_keyword(is, "space");
    const auto kind = read_value<std::string>(is, "space kind");
    Smartingale f;
    if (kind == "total") {
        const int dim = read_value<int>(is, "space dim");
        const int degree = read_value<int>(is, "space degree");
        f.space = PolySpace::total_degree(dim, degree);
    } else if (kind == "affine") {
        const auto n = read_value<std::size_t>(is, "affine coefficient count");
        if (n < 2 || n > 64) malformed("affine coefficient count out of range");
        std::vector<double> g(n);
        for (auto& c : g) c = read_value<double>(is, "affine coefficient");
        f.space = PolySpace::span_affine(g);
    } else {
        malformed("unknown space kind '" + kind + "'");
    }
    if (f.space.dim() != t.dim()) malformed("space dimension does not match the tree");
    expect_keyword(is, "bound");
    f.bound_L = read_value<double>(is, "bound");
    expect_keyword(is, "sparsity");
    f.sparsity = read_value<int>(is, "sparsity");
    expect_keyword(is, "steps");
    const auto k = read_value<std::size_t>(is, "step count");
    if (k > 4096) malformed("step count out of range");
    f.steps.resize(k);
    for (auto& n : f.steps) n = read_value<int>(is, "step level");
    expect_keyword(is, "base");
    expect_keyword(is, "resolution");
    const int res = read_value<int>(is, "base resolution");
    if (res < 0 || res > t.depth()) malformed("base resolution outside the tree");
    expect_keyword(is, "cells");
    const auto cells = read_value<std::size_t>(is, "base cell count");
    if (cells != (std::size_t{1} << res)) malformed("base cell count does not match its resolution");
    std::vector<double> w(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        const auto id = read_value<unsigned long long>(is, "base cell id");
        if (id != (std::uint64_t{1} << res) + i) malformed("base cell rows out of order");
        w[i] = read_value<double>(is, "base cell weight");
    }
    f.base = MeasureTree::from_weights(t, res, std::move(w));
    f.diffs.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
        f.diffs.push_back(deserialize_poly(is, t));
        if (f.diffs.back().level != f.steps[j]) malformed("difference level does not match its step");
    }
    expect_keyword(is, "end");
    expect_keyword(is, "smartingale");
    return f;
}

namespace {

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open " + path);
    return in;
}

} // namespace

// The tree and measure parsers skip comment lines they do not recognize, so
// the pipeline preamble needs no special handling for them.
PartitionTree load_tree(const std::string& path) {
    auto is = open_or_throw(path);
    return PartitionTree::deserialize(is);
}

MeasureTree load_measure(const std::string& path, const PartitionTree& t) {
    auto is = open_or_throw(path);
    return MeasureTree::deserialize(is, t);
}

// The smartingale payload is comment-free by construction; drop the '#'
// preamble lines and hand the rest to the stream parser.
Smartingale load_smartingale(const std::string& path, const PartitionTree& t) {
    auto in = open_or_throw(path);
    std::string payload;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line.front() == '#') continue;
        payload += line;
        payload += '\n';
    }
    std::istringstream is(payload);
    return deserialize_smartingale(is, t);
}

} // namespace smartlab
