#include "smartlab/measures.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "smartlab/errors.hpp"
#include "smartlab/kernels.hpp"

namespace smartlab {

namespace {

// Cached evaluator: piecewise polynomial evaluated at nodes that sweep cell
// by cell, rebuilding the local basis only when the owning atom changes.
struct PolyEval {
    const PartitionTree* t;
    const PolySpace* s;
    const PiecewisePoly* f;
    int cell_level = 0;
    std::size_t last = static_cast<std::size_t>(-1);
    std::optional<LocalBasis> basis = std::nullopt;
    const double* coef = nullptr;

    double operator()(std::size_t cell, const double* x) {
        const std::size_t idx = cell >> (cell_level - f->level);
        if (idx != last) {
            basis.emplace(*s, t->lo(f->level, idx), t->hi(f->level, idx), f->squared);
            coef = f->at(idx);
            last = idx;
        }
        return basis->eval_combo(coef, x);
    }
};

int work_level(const PartitionTree& t, std::initializer_list<int> levels) {
    int r = 0;
    for (int l : levels) r = std::max(r, l);
    if (r > t.depth()) throw std::invalid_argument("measure op: level exceeds tree depth");
    return r;
}

void apply_weight(const PartitionTree& t, const MeasureTree& m, int level, int nvals,
                  std::vector<double>& cellvals) {
    const double inv_vol = 1.0 / t.domain().volume();
    const std::size_t n = t.level_size(level);
    for (std::size_t c = 0; c < n; ++c) {
        const double w = m.weight_at(level, c) * inv_vol;
        for (int j = 0; j < nvals; ++j) cellvals[c * nvals + j] *= w;
    }
}

} // namespace

MeasureTree MeasureTree::lebesgue(const PartitionTree& t) {
    return from_weights(t, 0, {1.0});
}

MeasureTree MeasureTree::from_weights(const PartitionTree& t, int resolution,
                                      std::vector<double> weights) {
    if (resolution < 0 || resolution > t.depth())
        throw std::invalid_argument("MeasureTree: resolution outside [0, depth]");
    if (weights.size() != (std::size_t{1} << resolution))
        throw std::invalid_argument("MeasureTree: weight count must be 2^resolution");
    for (double w : weights)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw std::invalid_argument("MeasureTree: weights must be finite and nonnegative");
    MeasureTree m;
    m.resolution_ = resolution;
    m.weight_ = std::move(weights);
    m.mass_.resize(resolution + 1);
    m.mass_[resolution].resize(m.weight_.size());
    for (std::size_t i = 0; i < m.weight_.size(); ++i)
        m.mass_[resolution][i] = m.weight_[i] * t.mass(resolution, i);
    for (int l = resolution; l > 0; --l) {
        const std::size_t n = std::size_t{1} << (l - 1);
        m.mass_[l - 1].resize(n);
        for (std::size_t i = 0; i < n; ++i)
            m.mass_[l - 1][i] = m.mass_[l][2 * i] + m.mass_[l][2 * i + 1];
    }
    return m;
}

double MeasureTree::mass(const PartitionTree& t, int level, std::size_t idx) const {
    if (level <= resolution_) return mass_[level][idx];
    return weight_[idx >> (level - resolution_)] * t.mass(level, idx);
}

void MeasureTree::serialize(std::ostream& os) const {
    char buf[64];
    os << "# measure v1\n# resolution " << resolution_ << "\n# cells " << weight_.size() << "\n";
    for (std::size_t i = 0; i < weight_.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%llu %.17g\n",
                      static_cast<unsigned long long>((std::uint64_t{1} << resolution_) + i), weight_[i]);
        os << buf;
    }
}

MeasureTree MeasureTree::deserialize(std::istream& is, const PartitionTree& t) {
    std::string line;
    int resolution = -1;
    std::size_t cells = 0;
    std::vector<double> w;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            std::string key;
            ls >> key;
            if (key == "resolution") {
                ls >> resolution;
                if (resolution < 0 || resolution > t.depth())
                    throw std::runtime_error("measure parse: bad resolution");
                w.assign(std::size_t{1} << resolution, -1.0);
            } else if (key == "cells") {
                ls >> cells;
            }
            continue;
        }
        if (resolution < 0) throw std::runtime_error("measure parse: row before resolution header");
        std::istringstream ls(line);
        std::uint64_t id = 0;
        double val = 0.0;
        ls >> id >> val;
        if (!ls) throw std::runtime_error("measure parse: bad row");
        if (PartitionTree::id_level(id) != resolution)
            throw std::runtime_error("measure parse: id not at resolution level");
        w[PartitionTree::id_index(id)] = val;
    }
    if (resolution < 0) throw std::runtime_error("measure parse: missing header");
    if (cells && cells != w.size()) throw std::runtime_error("measure parse: cell count mismatch");
    for (double v : w)
        if (v < 0.0) throw std::runtime_error("measure parse: missing or negative weight");
    return from_weights(t, resolution, std::move(w));
}

std::vector<double> integrate_on_level(const PartitionTree& t, const PolySpace& s,
                                       const PiecewisePoly& f, int level, const MeasureTree& m,
                                       bool parallel) {
    const int R = work_level(t, {level, f.level, m.resolution()});
    const Quad1D& q = gauss_legendre_01(s.quad_points());
    std::vector<double> cellvals(t.level_size(R));
    PolyEval fe{&t, &s, &f, R};
    kernels::cell_integrals(t, R, q, 1, cellvals.data(), parallel,
                            [fe](std::size_t cell, const double* x, double* vals) mutable {
                                vals[0] = fe(cell, x);
                            });
    apply_weight(t, m, R, 1, cellvals);
    std::vector<double> out;
    kernels::aggregate_to_level(cellvals, 1, R, level, out);
    return out;
}

LevelValues conditional_expectation(const PartitionTree& t, const PolySpace& s,
                                    const PiecewisePoly& f, int level, const MeasureTree& m,
                                    bool parallel) {
    LevelValues lv;
    lv.level = level;
    lv.v = integrate_on_level(t, s, f, level, m, parallel);
    for (std::size_t i = 0; i < lv.v.size(); ++i) {
        const double mass = m.mass(t, level, i);
        if (!(mass > 0.0)) throw std::invalid_argument("conditional_expectation: zero-mass atom");
        lv.v[i] /= mass;
    }
    return lv;
}

LevelValues abs_conditional_expectation(const PartitionTree& t, const PolySpace& s,
                                        const PiecewisePoly& f, int level, const MeasureTree& m,
                                        int panels, bool parallel) {
    if (panels < 1) throw std::invalid_argument("abs_conditional_expectation: panels >= 1");
    const int R = work_level(t, {level, f.level, m.resolution()});
    const Quad1D& q = gauss_legendre_01(std::max(2, s.quad_points()));
    const int d = t.dim();
    const double inv_vol = 1.0 / t.domain().volume();
    const std::size_t ncells = t.level_size(R);
    std::vector<double> cellvals(ncells, 0.0);

    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(ncells);
#pragma omp parallel if (parallel)
    {
        PolyEval fe{&t, &s, &f, R};
        double sub_lo[8], sub_hi[8];
        int pidx[8];
#pragma omp for schedule(static)
        for (std::ptrdiff_t c = 0; c < n; ++c) {
            const double* lo = t.lo(R, static_cast<std::size_t>(c));
            const double* hi = t.hi(R, static_cast<std::size_t>(c));
            double acc = 0.0;
            for (int a = 0; a < d; ++a) pidx[a] = 0;
            for (;;) {
                for (int a = 0; a < d; ++a) {
                    const double step = (hi[a] - lo[a]) / panels;
                    sub_lo[a] = lo[a] + step * pidx[a];
                    sub_hi[a] = sub_lo[a] + step;
                }
                for_each_node(sub_lo, sub_hi, d, q, [&](const double* x, double w) {
                    acc += w * std::abs(fe(static_cast<std::size_t>(c), x));
                });
                int a = 0;
                while (a < d && ++pidx[a] == panels) {
                    pidx[a] = 0;
                    ++a;
                }
                if (a == d) break;
            }
            cellvals[static_cast<std::size_t>(c)] = acc * m.weight_at(R, static_cast<std::size_t>(c)) * inv_vol;
        }
    }

    LevelValues lv;
    lv.level = level;
    kernels::aggregate_to_level(cellvals, 1, R, level, lv.v);
    for (std::size_t i = 0; i < lv.v.size(); ++i) {
        const double mass = m.mass(t, level, i);
        if (!(mass > 0.0)) throw std::invalid_argument("abs_conditional_expectation: zero-mass atom");
        lv.v[i] /= mass;
    }
    return lv;
}

PiecewisePoly project(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                      int level, const MeasureTree& m, bool parallel, double cond_guard) {
    const int R = work_level(t, {level, f.level, m.resolution()});
    const int k = s.dim_s();
    const int ngram = k * (k + 1) / 2;
    const int nvals = k + ngram;
    const Quad1D& q = gauss_legendre_01(s.quad_points());

    std::vector<double> cellvals(t.level_size(R) * nvals);

    struct Ctx {
        const PartitionTree* t;
        const PolySpace* s;
        int R, level, k;
        PolyEval fe;
        std::size_t last = static_cast<std::size_t>(-1);
        std::optional<LocalBasis> basis;
        double bv[64];
    };
    Ctx ctx{&t, &s, R, level, k, PolyEval{&t, &s, &f, R}, static_cast<std::size_t>(-1), {}, {}};

    kernels::cell_integrals(t, R, q, nvals, cellvals.data(), parallel,
                            [ctx](std::size_t cell, const double* x, double* vals) mutable {
                                const std::size_t a = cell >> (ctx.R - ctx.level);
                                if (a != ctx.last) {
                                    ctx.basis.emplace(*ctx.s, ctx.t->lo(ctx.level, a), ctx.t->hi(ctx.level, a), false);
                                    ctx.last = a;
                                }
                                ctx.basis->eval(x, ctx.bv);
                                const double fv = ctx.fe(cell, x);
                                for (int i = 0; i < ctx.k; ++i) vals[i] = fv * ctx.bv[i];
                                int p = ctx.k;
                                for (int i = 0; i < ctx.k; ++i)
                                    for (int j = i; j < ctx.k; ++j) vals[p++] = ctx.bv[i] * ctx.bv[j];
                            });
    apply_weight(t, m, R, nvals, cellvals);
    std::vector<double> agg;
    kernels::aggregate_to_level(cellvals, nvals, R, level, agg);

    PiecewisePoly out = PiecewisePoly::zero(t, s, level, false);
    const std::ptrdiff_t natoms = static_cast<std::ptrdiff_t>(t.level_size(level));
    std::string fail;
    double fail_cond = 0.0;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t a = 0; a < natoms; ++a) {
        Eigen::MatrixXd G(k, k);
        Eigen::VectorXd rhs(k);
        const double* row = agg.data() + static_cast<std::size_t>(a) * nvals;
        for (int i = 0; i < k; ++i) rhs(i) = row[i];
        int p = k;
        for (int i = 0; i < k; ++i)
            for (int j = i; j < k; ++j) {
                G(i, j) = row[p];
                G(j, i) = row[p];
                ++p;
            }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(G);
        const Eigen::MatrixXd Ginv = lu.inverse();
        const double cond = G.cwiseAbs().colwise().sum().maxCoeff() *
                            Ginv.cwiseAbs().colwise().sum().maxCoeff();
        if (!(cond < cond_guard)) {
#pragma omp critical
            if (fail.empty()) {
                fail = "project: Gram condition estimate " + std::to_string(cond) + " at atom " +
                       std::to_string(a);
                fail_cond = cond;
            }
            continue;
        }
        Eigen::VectorXd c = lu.solve(rhs);
        for (int i = 0; i < k; ++i) out.at(static_cast<std::size_t>(a))[i] = c(i);
    }
    if (!fail.empty()) throw ill_conditioned_error(fail, fail_cond);
    return out;
}

double integrate(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                 const MeasureTree& m) {
    return integrate_on_level(t, s, f, 0, m, false)[0];
}

double inner_product(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                     const PiecewisePoly& h, const MeasureTree& m) {
    const int R = work_level(t, {f.level, h.level, m.resolution()});
    const Quad1D& q = gauss_legendre_01(s.quad_points());
    std::vector<double> cellvals(t.level_size(R));
    PolyEval fe{&t, &s, &f, R};
    PolyEval he{&t, &s, &h, R};
    kernels::cell_integrals(t, R, q, 1, cellvals.data(), false,
                            [fe, he](std::size_t cell, const double* x, double* vals) mutable {
                                vals[0] = fe(cell, x) * he(cell, x);
                            });
    apply_weight(t, m, R, 1, cellvals);
    double sum = 0.0;
    for (double v : cellvals) sum += v;
    return sum;
}

} // namespace smartlab
