#include "smartlab/polyspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>

#include "smartlab/quadrature.hpp"
#include "smartlab/rng.hpp"

namespace smartlab {

namespace {

constexpr int kMaxLegendreDegree = 12;

// Normalized shifted Legendre values on [0,1]: val[k] = sqrt(2k+1) P_k(2u-1).
// If dval is non-null it receives d/du of the same functions.
void legendre_all(int kmax, double u, double* val, double* dval = nullptr) {
    const double t = 2.0 * u - 1.0;
    double p[kMaxLegendreDegree + 1];
    double dp[kMaxLegendreDegree + 1];
    p[0] = 1.0;
    dp[0] = 0.0;
    if (kmax >= 1) {
        p[1] = t;
        dp[1] = 1.0;
    }
    for (int k = 1; k < kmax; ++k) {
        p[k + 1] = ((2.0 * k + 1.0) * t * p[k] - k * p[k - 1]) / (k + 1.0);
        dp[k + 1] = dp[k - 1] + (2.0 * k + 1.0) * p[k];
    }
    for (int k = 0; k <= kmax; ++k) {
        const double norm = std::sqrt(2.0 * k + 1.0);
        val[k] = norm * p[k];
        if (dval) dval[k] = 2.0 * norm * dp[k];
    }
}

std::vector<std::vector<int>> total_degree_indices(int dim, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(dim, 0);
    // graded ordering: enumerate by total degree, lexicographic inside a grade
    for (int total = 0; total <= degree; ++total) {
        std::function<void(int, int)> rec = [&](int axis, int left) {
            if (axis == dim - 1) {
                cur[axis] = left;
                out.push_back(cur);
                return;
            }
            for (int k = left; k >= 0; --k) {
                cur[axis] = k;
                rec(axis + 1, left - k);
            }
        };
        rec(0, total);
    }
    return out;
}

} // namespace

PolySpace PolySpace::total_degree(int dim, int degree) {
    if (dim < 1 || dim > 8) throw std::invalid_argument("PolySpace: dim must be in [1, 8]");
    if (degree < 0 || 2 * degree > kMaxLegendreDegree)
        throw std::invalid_argument("PolySpace: degree out of supported range");
    PolySpace s;
    s.kind_ = Kind::total_degree;
    s.dim_ = dim;
    s.degree_ = degree;
    s.multi_s_ = total_degree_indices(dim, degree);
    s.multi_s2_ = total_degree_indices(dim, 2 * degree);
    if (s.dim_s2() > 64) throw std::invalid_argument("PolySpace: dim S2 exceeds the supported 64");
    return s;
}

PolySpace PolySpace::span_affine(std::vector<double> g_coef) {
    if (g_coef.size() < 2 || g_coef.size() > 9)
        throw std::invalid_argument("PolySpace: affine g needs 1 + dim coefficients");
    PolySpace s;
    s.kind_ = Kind::span_affine;
    s.dim_ = static_cast<int>(g_coef.size()) - 1;
    s.degree_ = 0;
    for (std::size_t a = 1; a < g_coef.size(); ++a)
        if (g_coef[a] != 0.0) s.degree_ = 1;
    s.g_coef_ = std::move(g_coef);
    s.multi_s_.assign(1, std::vector<int>(s.dim_, 0));
    s.multi_s2_.assign(1, std::vector<int>(s.dim_, 0));
    return s;
}

int PolySpace::quad_points() const {
    const int max_deg = 4 * degree_;
    return std::max(1, (max_deg + 2) / 2);
}

double PolySpace::eval_g(const double* x) const {
    if (kind_ == Kind::total_degree) return 1.0;
    double v = g_coef_[0];
    for (int a = 0; a < dim_; ++a) v += g_coef_[a + 1] * x[a];
    return v;
}

std::pair<double, double> PolySpace::g_range(const Box& b) const {
    if (kind_ == Kind::total_degree) return {1.0, 1.0};
    double lo = g_coef_[0], hi = g_coef_[0];
    for (int a = 0; a < dim_; ++a) {
        const double c = g_coef_[a + 1];
        lo += c * (c >= 0.0 ? b.lo[a] : b.hi[a]);
        hi += c * (c >= 0.0 ? b.hi[a] : b.lo[a]);
    }
    return {lo, hi};
}

LocalBasis::LocalBasis(const PolySpace& space, const Box& box, bool squared)
    : LocalBasis(space, box.lo.data(), box.hi.data(), squared) {}

LocalBasis::LocalBasis(const PolySpace& space, const double* lo, const double* hi, bool squared)
    : space_(&space), squared_(squared), dim_(space.dim()), size_(space.basis_size(squared)) {
    double vol = 1.0;
    for (int a = 0; a < dim_; ++a) {
        lo_[a] = lo[a];
        side_[a] = hi[a] - lo[a];
        vol *= side_[a];
    }
    if (space.kind() == PolySpace::Kind::total_degree) {
        scale_ = 1.0 / std::sqrt(vol);
    } else {
        // 1 / ||g^p||_L2(box), p = 1 for S, 2 for S2
        const int pts = squared ? 3 : 2;
        const Quad1D& q = gauss_legendre_01(pts);
        double nrm2 = 0.0;
        for_each_node(lo, hi, dim_, q, [&](const double* x, double w) {
            const double g = space.eval_g(x);
            const double gp = squared ? g * g : g;
            nrm2 += w * gp * gp;
        });
        if (!(nrm2 > 0.0)) throw std::invalid_argument("LocalBasis: g vanishes on the box");
        scale_ = 1.0 / std::sqrt(nrm2);
    }
}

void LocalBasis::eval(const double* x, double* out) const {
    if (space_->kind() == PolySpace::Kind::span_affine) {
        const double g = space_->eval_g(x);
        out[0] = scale_ * (squared_ ? g * g : g);
        return;
    }
    const int deg = squared_ ? 2 * space_->degree() : space_->degree();
    double vals[8][kMaxLegendreDegree + 1];
    for (int a = 0; a < dim_; ++a) {
        const double u = (x[a] - lo_[a]) / side_[a];
        legendre_all(deg, u, vals[a]);
    }
    const auto& idx = space_->multi_indices(squared_);
    for (int j = 0; j < size_; ++j) {
        double v = scale_;
        for (int a = 0; a < dim_; ++a) v *= vals[a][idx[j][a]];
        out[j] = v;
    }
}

void LocalBasis::grad(const double* x, double* out) const {
    if (space_->kind() == PolySpace::Kind::span_affine) {
        const double g = space_->eval_g(x);
        for (int a = 0; a < dim_; ++a) {
            const double dg = space_->g_coef()[a + 1];
            out[a] = scale_ * (squared_ ? 2.0 * g * dg : dg);
        }
        return;
    }
    const int deg = squared_ ? 2 * space_->degree() : space_->degree();
    double vals[8][kMaxLegendreDegree + 1];
    double dvals[8][kMaxLegendreDegree + 1];
    for (int a = 0; a < dim_; ++a) {
        const double u = (x[a] - lo_[a]) / side_[a];
        legendre_all(deg, u, vals[a], dvals[a]);
    }
    const auto& idx = space_->multi_indices(squared_);
    for (int j = 0; j < size_; ++j) {
        for (int a = 0; a < dim_; ++a) {
            double v = scale_;
            for (int b = 0; b < dim_; ++b) {
                if (b == a)
                    v *= dvals[b][idx[j][b]] / side_[b];
                else
                    v *= vals[b][idx[j][b]];
            }
            out[j * dim_ + a] = v;
        }
    }
}

double LocalBasis::eval_one(int j, const double* x) const {
    double buf[64];
    eval(x, buf);
    return buf[j];
}

double LocalBasis::eval_combo(const double* coef, const double* x) const {
    double buf[64];
    eval(x, buf);
    double s = 0.0;
    for (int j = 0; j < size_; ++j) s += coef[j] * buf[j];
    return s;
}

PiecewisePoly PiecewisePoly::zero(const PartitionTree& t, const PolySpace& s, int level, bool squared) {
    PiecewisePoly p;
    p.level = level;
    p.ncoef = s.basis_size(squared);
    p.squared = squared;
    p.coef.assign(t.level_size(level) * p.ncoef, 0.0);
    return p;
}

double PiecewisePoly::eval_at(const PartitionTree& t, const PolySpace& s, std::size_t idx,
                              const double* x) const {
    LocalBasis b(s, t.lo(level, idx), t.hi(level, idx), squared);
    return b.eval_combo(at(idx), x);
}

double PiecewisePoly::eval(const PartitionTree& t, const PolySpace& s, const double* x) const {
    return eval_at(t, s, t.locate(level, x), x);
}

SupNormEstimate sup_norm(const PolySpace& space, const Box& box, const double* coef,
                         bool squared, int pts_per_axis) {
    const int d = space.dim();
    const int bdeg = (squared ? 2 : 1) * space.degree();
    SupNormEstimate est;
    LocalBasis basis(space, box, squared);
    if (bdeg == 0) {
        est.pts_per_axis = 1;
        est.delta = 0.0;
        std::vector<double> c(box.dim(), 0.0);
        for (int a = 0; a < d; ++a) c[a] = box.center(a);
        est.grid_max = std::abs(basis.eval_combo(coef, c.data()));
        est.upper = est.grid_max;
        return est;
    }
    int G = pts_per_axis > 0 ? pts_per_axis : 33;
    // keep the certified gap delta = d * deg^2 / (G - 1) at most 1/2
    G = std::max(G, 2 * d * bdeg * bdeg + 1);
    est.pts_per_axis = G;
    est.delta = static_cast<double>(d) * bdeg * bdeg / (G - 1);

    double x[8];
    int idx[8] = {0};
    double m = 0.0;
    for (;;) {
        for (int a = 0; a < d; ++a)
            x[a] = box.lo[a] + box.side(a) * (static_cast<double>(idx[a]) / (G - 1));
        m = std::max(m, std::abs(basis.eval_combo(coef, x)));
        int a = 0;
        while (a < d && ++idx[a] == G) {
            idx[a] = 0;
            ++a;
        }
        if (a == d) break;
    }
    est.grid_max = m;
    est.upper = m / (1.0 - est.delta);
    return est;
}

FunctionStats function_stats(const PolySpace& space, const Box& box, const double* coef,
                             double c1, int grid) {
    const int d = space.dim();
    FunctionStats st;
    LocalBasis basis(space, box, false);
    SupNormEstimate se = sup_norm(space, box, coef, false, grid + 1);
    st.sup = se.grid_max;
    if (!(st.sup > 0.0)) return st;

    const double diam = box.diam();
    double x[8], g[8];
    int idx[8] = {0};
    std::vector<double> gbuf(static_cast<std::size_t>(space.dim_s()) * d);

    // Lipschitz constant from the endpoint grid
    double lip = 0.0;
    const int G = grid + 1;
    for (;;) {
        for (int a = 0; a < d; ++a)
            x[a] = box.lo[a] + box.side(a) * (static_cast<double>(idx[a]) / (G - 1));
        basis.grad(x, gbuf.data());
        for (int a = 0; a < d; ++a) {
            g[a] = 0.0;
            for (int j = 0; j < space.dim_s(); ++j) g[a] += coef[j] * gbuf[j * d + a];
        }
        double n2 = 0.0;
        for (int a = 0; a < d; ++a) n2 += g[a] * g[a];
        lip = std::max(lip, std::sqrt(n2));
        int a = 0;
        while (a < d && ++idx[a] == G) {
            idx[a] = 0;
            ++a;
        }
        if (a == d) break;
    }
    st.lip_diam_over_sup = lip * diam / st.sup;

    // level-set measure from midpoint cells
    std::size_t hits = 0, total = 0;
    std::memset(idx, 0, sizeof idx);
    for (;;) {
        for (int a = 0; a < d; ++a)
            x[a] = box.lo[a] + box.side(a) * ((idx[a] + 0.5) / grid);
        if (std::abs(basis.eval_combo(coef, x)) >= c1 * st.sup) ++hits;
        ++total;
        int a = 0;
        while (a < d && ++idx[a] == grid) {
            idx[a] = 0;
            ++a;
        }
        if (a == d) break;
    }
    st.level_set_fraction = static_cast<double>(hits) / static_cast<double>(total);
    return st;
}

PolyConstants estimate_constants(const PolySpace& space, int n_samples, std::uint64_t seed, int grid) {
    if (n_samples < 1) throw std::invalid_argument("estimate_constants: need n_samples >= 1");
    const int d = space.dim();
    const int k = space.dim_s();
    PolyConstants out;
    out.c1 = (space.degree() == 0) ? 1.0 : 0.5;
    out.samples = n_samples;

    for (int s = 0; s < n_samples; ++s) {
        auto rng = engine_for(seed, static_cast<std::uint64_t>(s));
        Box box;
        box.lo.resize(d);
        box.hi.resize(d);
        for (int a = 0; a < d; ++a) {
            const double side = std::exp(uniform(rng, std::log(0.05), 0.0));
            box.lo[a] = uniform(rng, 0.0, 1.0 - side);
            box.hi[a] = box.lo[a] + side;
        }
        std::vector<double> coef(k), ucoef(k);
        for (int j = 0; j < k; ++j) coef[j] = gaussian(rng);
        for (int j = 0; j < k; ++j) ucoef[j] = gaussian(rng);

        FunctionStats st = function_stats(space, box, coef.data(), out.c1, grid);
        if (!(st.sup > 1e-14)) continue;
        out.c2 = std::min(out.c2, st.level_set_fraction);
        out.markov = std::max(out.markov, st.lip_diam_over_sup);

        // product constant ||f|| * ||u||_1 <= C ||f u||_1 on midpoint cells
        LocalBasis basis(space, box, false);
        double x[8];
        int idx[8] = {0};
        double nu1 = 0.0, nfu1 = 0.0;
        const double cellvol = box.volume() / std::pow(static_cast<double>(grid), d);
        for (;;) {
            for (int a = 0; a < d; ++a)
                x[a] = box.lo[a] + box.side(a) * ((idx[a] + 0.5) / grid);
            const double fv = basis.eval_combo(coef.data(), x);
            const double uv = basis.eval_combo(ucoef.data(), x);
            nu1 += std::abs(uv) * cellvol;
            nfu1 += std::abs(fv * uv) * cellvol;
            int a = 0;
            while (a < d && ++idx[a] == grid) {
                idx[a] = 0;
                ++a;
            }
            if (a == d) break;
        }
        if (nfu1 > 1e-14) out.product = std::max(out.product, st.sup * nu1 / nfu1);
    }
    return out;
}

std::vector<double> expansion_matrix(const PolySpace& space, const Box& parent, const Box& child,
                                     bool squared) {
    const int k = space.basis_size(squared);
    for (int a = 0; a < space.dim(); ++a)
        if (child.lo[a] < parent.lo[a] - 1e-12 || child.hi[a] > parent.hi[a] + 1e-12)
            throw std::invalid_argument("expansion_matrix: child not inside parent");
    LocalBasis pb(space, parent, squared);
    LocalBasis cb(space, child, squared);
    const Quad1D& q = gauss_legendre_01(space.quad_points());
    std::vector<double> X(static_cast<std::size_t>(k) * k, 0.0);
    double pv[64], cv[64];
    for_each_node(child.lo.data(), child.hi.data(), space.dim(), q, [&](const double* x, double w) {
        pb.eval(x, pv);
        cb.eval(x, cv);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) X[i * k + j] += w * pv[i] * cv[j];
    });
    return X;
}

PiecewisePoly refine(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                     int to_level) {
    if (to_level < f.level) throw std::invalid_argument("refine: target level coarser than source");
    PiecewisePoly cur = f;
    const int k = f.ncoef;
    for (int l = f.level; l < to_level; ++l) {
        PiecewisePoly next = PiecewisePoly::zero(t, s, l + 1, f.squared);
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.level_size(l));
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const Box parent = t.box(l, static_cast<std::size_t>(i));
            const double* c = cur.at(static_cast<std::size_t>(i));
            for (int ch = 0; ch < 2; ++ch) {
                const std::size_t ci = 2 * static_cast<std::size_t>(i) + ch;
                const auto X = expansion_matrix(s, parent, t.box(l + 1, ci), f.squared);
                double* out = next.at(ci);
                for (int j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (int p = 0; p < k; ++p) acc += c[p] * X[p * k + j];
                    out[j] = acc;
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

namespace {

// int over [0,1]^d of B_i B_j Q_q for the tensor Legendre bases of S and S2;
// shape-independent for total-degree spaces, so cached per (dim, degree).
const std::vector<double>& unit_product_tensor(const PolySpace& s) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::vector<double>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& T = cache[{s.dim(), s.degree()}];
    if (!T.empty()) return T;
    const int k = s.dim_s(), k2 = s.dim_s2();
    const Box u = Box::unit_cube(s.dim());
    LocalBasis b(s, u, false), q(s, u, true);
    const Quad1D& quad = gauss_legendre_01(s.quad_points());
    T.assign(static_cast<std::size_t>(k) * k * k2, 0.0);
    std::vector<double> bv(k), qv(k2);
    for_each_node(u.lo.data(), u.hi.data(), s.dim(), quad, [&](const double* x, double w) {
        b.eval(x, bv.data());
        q.eval(x, qv.data());
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                for (int m = 0; m < k2; ++m)
                    T[(static_cast<std::size_t>(i) * k + j) * k2 + m] += w * bv[i] * bv[j] * qv[m];
    });
    return T;
}

} // namespace

PiecewisePoly square_poly(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f) {
    if (f.squared) throw std::invalid_argument("square_poly: input already lives in S2");
    const int k = s.dim_s(), k2 = s.dim_s2();
    PiecewisePoly out = PiecewisePoly::zero(t, s, f.level, true);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.level_size(f.level));

    if (s.kind() == PolySpace::Kind::total_degree) {
        // basis elements are unit-cube Legendre pulled back and scaled by
        // vol^{-1/2}, so the product tensor scales by vol^{-1/2} per atom
        const std::vector<double>& T = unit_product_tensor(s);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const double vol = t.mass(f.level, static_cast<std::size_t>(i)) * t.domain().volume();
            const double scale = 1.0 / std::sqrt(vol);
            const double* c = f.at(static_cast<std::size_t>(i));
            double* o = out.at(static_cast<std::size_t>(i));
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b) {
                    const double cc = c[a] * c[b] * scale;
                    const double* row = T.data() + (static_cast<std::size_t>(a) * k + b) * k2;
                    for (int m = 0; m < k2; ++m) o[m] += cc * row[m];
                }
        }
        return out;
    }

    // span_affine: (c g / ||g||)^2 = c^2 (||g^2|| / ||g||^2) * (g^2 / ||g^2||)
    const Quad1D& quad = gauss_legendre_01(s.quad_points());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::size_t idx = static_cast<std::size_t>(i);
        double g2 = 0.0, g4 = 0.0;
        for_each_node(t.lo(f.level, idx), t.hi(f.level, idx), t.dim(), quad,
                      [&](const double* x, double w) {
                          const double g = s.eval_g(x);
                          g2 += w * g * g;
                          g4 += w * g * g * g * g;
                      });
        const double c = f.at(idx)[0];
        out.at(idx)[0] = c * c * std::sqrt(g4) / g2;
    }
    return out;
}

} // namespace smartlab
