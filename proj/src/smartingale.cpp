#include "smartlab/smartingale.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "smartlab/kernels.hpp"
#include "smartlab/quadrature.hpp"
#include "smartlab/rng.hpp"

namespace smartlab {

int Smartingale::step_index_at(int n) const {
    int idx = -1;
    for (std::size_t k = 0; k < steps.size() && steps[k] <= n; ++k) idx = static_cast<int>(k);
    return idx;
}

double Smartingale::eval(const PartitionTree& t, int n, const double* x) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < steps.size() && steps[k] <= n; ++k)
        acc += diffs[k].eval(t, space, x);
    return acc;
}

Smartingale generate_smartingale(const PartitionTree& t, const PolySpace& s,
                                 const MeasureTree& base, int sparsity, double L,
                                 std::uint64_t seed, DiffRule rule, int first_level,
                                 int max_level) {
    if (max_level < 0) max_level = t.depth();
    if (first_level < 1 || max_level > t.depth())
        throw std::invalid_argument("generate: levels out of range");
    if (sparsity < 0) throw std::invalid_argument("generate: sparsity must be >= 0");
    if (!(L > 0.0)) throw std::invalid_argument("generate: L must be positive");
    if (rule == DiffRule::haar && s.dim_s() != 1)
        throw std::invalid_argument("generate: haar rule needs a one-dimensional space");
    if (base.resolution() > first_level)
        throw std::invalid_argument("generate: base measure resolution exceeds the first active level");

    Smartingale f;
    f.space = s;
    f.base = base;
    f.bound_L = L;
    f.sparsity = sparsity;

    const int k = s.dim_s();
    for (int n = first_level; n <= max_level; n += sparsity + 1) {
        PiecewisePoly d = PiecewisePoly::zero(t, s, n, false);
        const std::uint64_t level_seed = splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * n));
        const std::ptrdiff_t natoms = static_cast<std::ptrdiff_t>(t.level_size(n - 1));
        std::string fail;

#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < natoms; ++i) {
            const std::size_t ai = static_cast<std::size_t>(i);
            const double w0 = base.weight_at(n, 2 * ai);
            const double w1 = base.weight_at(n, 2 * ai + 1);
            if (!(w0 > 0.0) || !(w1 > 0.0)) {
#pragma omp critical
                if (fail.empty()) fail = "generate: zero-density child under the base measure";
                continue;
            }
            const Box parent = t.box(n - 1, ai);
            const auto X0 = expansion_matrix(s, parent, t.box(n, 2 * ai));
            const auto X1 = expansion_matrix(s, parent, t.box(n, 2 * ai + 1));

            // rows: int_A b_p * (child basis j) d(base); the difference must
            // be orthogonal to every parent-space element
            Eigen::MatrixXd R(k, 2 * k);
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < k; ++j) {
                    R(p, j) = w0 * X0[p * k + j];
                    R(p, k + j) = w1 * X1[p * k + j];
                }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(R);
            const Eigen::MatrixXd N = lu.kernel();
            if (N.cols() != k) {
#pragma omp critical
                if (fail.empty())
                    fail = "generate: complement dimension " + std::to_string(N.cols()) +
                           " != " + std::to_string(k) + " at level " + std::to_string(n);
                continue;
            }
            // orthonormalize the complement under the base-measure inner product
            const Eigen::MatrixXd K = w0 * N.topRows(k).transpose() * N.topRows(k) +
                                      w1 * N.bottomRows(k).transpose() * N.bottomRows(k);
            Eigen::LLT<Eigen::MatrixXd> llt(K);
            if (llt.info() != Eigen::Success) {
#pragma omp critical
                if (fail.empty()) fail = "generate: complement Gram not positive definite";
                continue;
            }
            const Eigen::MatrixXd V =
                llt.matrixL().solve(N.transpose()).transpose(); // N * L^{-T}

            auto rng = engine_for(level_seed, ai);
            Eigen::VectorXd z(k);
            for (int j = 0; j < k; ++j)
                z(j) = (rule == DiffRule::gaussian_coeff) ? gaussian(rng)
                                                          : static_cast<double>(rademacher(rng));
            const Eigen::VectorXd c = V * z;
            for (int j = 0; j < k; ++j) {
                d.at(2 * ai)[j] = c(j);
                d.at(2 * ai + 1)[j] = c(k + j);
            }
        }
        if (!fail.empty()) throw std::runtime_error(fail);

        // rescale the whole level so the guaranteed sup bound equals L
        double worst = 0.0;
        const std::ptrdiff_t nchild = static_cast<std::ptrdiff_t>(t.level_size(n));
#pragma omp parallel for schedule(static) reduction(max : worst)
        for (std::ptrdiff_t j = 0; j < nchild; ++j)
            worst = std::max(
                worst, sup_norm(s, t.box(n, static_cast<std::size_t>(j)), d.at(static_cast<std::size_t>(j))).upper);
        if (worst > 0.0) {
            const double scale = L / worst;
            for (double& c : d.coef) c *= scale;
        }

        f.steps.push_back(n);
        f.diffs.push_back(std::move(d));
    }
    return f;
}

double verify_smartingale(const PartitionTree& t, const Smartingale& f, const MeasureTree& m,
                          bool parallel) {
    const PolySpace& s = f.space;
    const int k = s.dim_s();
    const double inv_vol = 1.0 / t.domain().volume();
    double worst = 0.0;

    for (std::size_t step = 0; step < f.steps.size(); ++step) {
        const int n = f.steps[step];
        const int R = std::max(n, m.resolution());
        const Quad1D& q = gauss_legendre_01(s.quad_points());
        std::vector<double> cellvals(t.level_size(R) * k);

        struct Ctx {
            const PartitionTree* t;
            const PolySpace* s;
            const PiecewisePoly* d;
            int R, n, k;
            std::size_t last_d = static_cast<std::size_t>(-1);
            std::size_t last_p = static_cast<std::size_t>(-1);
            std::optional<LocalBasis> dbasis, pbasis;
            const double* dc = nullptr;
            double bv[64];
        };
        Ctx ctx{&t, &s, &f.diffs[step], R, n, k, static_cast<std::size_t>(-1),
                static_cast<std::size_t>(-1), {}, {}, nullptr, {}};

        kernels::cell_integrals(
            t, R, q, k, cellvals.data(), parallel,
            [ctx](std::size_t cell, const double* x, double* vals) mutable {
                const std::size_t di = cell >> (ctx.R - ctx.n);
                if (di != ctx.last_d) {
                    ctx.dbasis.emplace(*ctx.s, ctx.t->lo(ctx.n, di), ctx.t->hi(ctx.n, di), false);
                    ctx.dc = ctx.d->at(di);
                    ctx.last_d = di;
                }
                const std::size_t pi = cell >> (ctx.R - (ctx.n - 1));
                if (pi != ctx.last_p) {
                    ctx.pbasis.emplace(*ctx.s, ctx.t->lo(ctx.n - 1, pi), ctx.t->hi(ctx.n - 1, pi), false);
                    ctx.last_p = pi;
                }
                const double dv = ctx.dbasis->eval_combo(ctx.dc, x);
                ctx.pbasis->eval(x, ctx.bv);
                for (int p = 0; p < ctx.k; ++p) vals[p] = dv * ctx.bv[p];
            });

        for (std::size_t c = 0; c < t.level_size(R); ++c) {
            const double w = m.weight_at(R, c) * inv_vol;
            for (int p = 0; p < k; ++p) cellvals[c * k + p] *= w;
        }
        std::vector<double> agg;
        kernels::aggregate_to_level(cellvals, k, R, n - 1, agg);
        for (double v : agg) worst = std::max(worst, std::abs(v));
    }
    return worst;
}

LevelValues square_function(const PartitionTree& t, const Smartingale& f, int n,
                            const MeasureTree& m) {
    LevelValues lv;
    lv.level = n;
    lv.v.assign(t.level_size(n), 0.0);
    for (std::size_t step = 0; step < f.steps.size(); ++step) {
        const int kl = f.steps[step];
        if (kl > n) break;
        const PiecewisePoly sq = square_poly(t, f.space, f.diffs[step]);
        const LevelValues ek = conditional_expectation(t, f.space, sq, kl, m);
        const LevelValues ek1 = conditional_expectation(t, f.space, sq, kl - 1, m);
        for (std::size_t i = 0; i < lv.v.size(); ++i)
            lv.v[i] += ek.v[i >> (n - kl)] + ek1.v[i >> (n - kl + 1)];
    }
    return lv;
}

MartingaleView associated_martingale(const PartitionTree& t, const Smartingale& f, int max_level,
                                     const MeasureTree& m) {
    if (max_level > t.depth()) throw std::invalid_argument("associated_martingale: level too deep");
    const PolySpace& s = f.space;
    const bool unit_g = (s.kind() == PolySpace::Kind::total_degree);
    const int D = std::max(max_level, m.resolution());
    const double inv_vol = 1.0 / t.domain().volume();
    const Quad1D& q = gauss_legendre_01(s.quad_points());

    MartingaleView mv;
    mv.values.reserve(max_level + 1);
    std::vector<double> cum(t.level_size(D), 0.0);
    std::vector<double> stepvals(t.level_size(D));

    std::size_t next_step = 0;
    for (int n = 0; n <= max_level; ++n) {
        if (next_step < f.steps.size() && f.steps[next_step] == n) {
            const PiecewisePoly& d = f.diffs[next_step];
            struct Ctx {
                const PartitionTree* t;
                const PolySpace* s;
                const PiecewisePoly* d;
                int R;
                bool unit_g;
                std::size_t last = static_cast<std::size_t>(-1);
                std::optional<LocalBasis> basis;
                const double* dc = nullptr;
            };
            Ctx ctx{&t, &s, &d, D, unit_g, static_cast<std::size_t>(-1), {}, nullptr};
            kernels::cell_integrals(
                t, D, q, 1, stepvals.data(), true,
                [ctx](std::size_t cell, const double* x, double* vals) mutable {
                    const std::size_t di = cell >> (ctx.R - ctx.d->level);
                    if (di != ctx.last) {
                        ctx.basis.emplace(*ctx.s, ctx.t->lo(ctx.d->level, di),
                                          ctx.t->hi(ctx.d->level, di), false);
                        ctx.dc = ctx.d->at(di);
                        ctx.last = di;
                    }
                    const double dv = ctx.basis->eval_combo(ctx.dc, x);
                    vals[0] = ctx.unit_g ? dv : dv * ctx.s->eval_g(x);
                });
            for (std::size_t c = 0; c < cum.size(); ++c)
                cum[c] += stepvals[c] * m.weight_at(D, c) * inv_vol;
            ++next_step;
        }

        LevelValues Mn;
        Mn.level = n;
        kernels::aggregate_to_level(cum, 1, D, n, Mn.v);
        for (std::size_t i = 0; i < Mn.v.size(); ++i) {
            const double mass = m.mass(t, n, i);
            if (!(mass > 0.0))
                throw std::invalid_argument("associated_martingale: zero-mass atom");
            Mn.v[i] /= mass;
        }
        if (n > 0) {
            LevelValues dM;
            dM.level = n;
            dM.v.resize(Mn.v.size());
            const LevelValues& prev = mv.values.back();
            for (std::size_t i = 0; i < Mn.v.size(); ++i) dM.v[i] = Mn.v[i] - prev.v[i >> 1];
            mv.diffs.push_back(std::move(dM));
        }
        mv.values.push_back(std::move(Mn));
    }
    return mv;
}

LevelValues martingale_square_function(const PartitionTree& t, const MartingaleView& mv, int n,
                                       const MeasureTree& m) {
    if (n >= static_cast<int>(mv.values.size()))
        throw std::invalid_argument("martingale_square_function: level beyond the view");
    LevelValues lv;
    lv.level = n;
    lv.v.assign(t.level_size(n), 0.0);
    for (int k = 1; k <= n; ++k) {
        const std::vector<double>& dM = mv.diffs[k - 1].v;
        for (std::size_t i = 0; i < lv.v.size(); ++i) {
            const std::size_t a = i >> (n - k + 1); // ancestor at level k-1
            const double m0 = m.mass(t, k, 2 * a);
            const double m1 = m.mass(t, k, 2 * a + 1);
            const double e =
                (m0 * dM[2 * a] * dM[2 * a] + m1 * dM[2 * a + 1] * dM[2 * a + 1]) /
                m.mass(t, k - 1, a);
            lv.v[i] += e;
        }
    }
    return lv;
}

double sibling_bound_check(const PartitionTree& t, const Smartingale& f, const MeasureTree& m) {
    double worst = 0.0;
    for (std::size_t step = 0; step < f.steps.size(); ++step) {
        const int n = f.steps[step];
        const PiecewisePoly& d = f.diffs[step];
        const std::ptrdiff_t natoms = static_cast<std::ptrdiff_t>(t.level_size(n - 1));
#pragma omp parallel for schedule(static) reduction(max : worst)
        for (std::ptrdiff_t i = 0; i < natoms; ++i) {
            const std::size_t ai = static_cast<std::size_t>(i);
            const double s0 = sup_norm(f.space, t.box(n, 2 * ai), d.at(2 * ai)).grid_max;
            if (s0 <= 1e-14 * f.bound_L) continue;
            const double s1 = sup_norm(f.space, t.box(n, 2 * ai + 1), d.at(2 * ai + 1)).grid_max;
            const double ratio = s1 * m.mass(t, n - 1, ai) / (s0 * m.mass(t, n, 2 * ai));
            worst = std::max(worst, ratio);
        }
    }
    return worst;
}

} // namespace smartlab
