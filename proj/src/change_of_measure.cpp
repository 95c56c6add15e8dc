#include "smartlab/change_of_measure.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "smartlab/errors.hpp"
#include "smartlab/kernels.hpp"
#include "smartlab/quadrature.hpp"
#include "smartlab/rng.hpp"

namespace smartlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string atom_label(const PartitionTree& t, int level, std::size_t idx) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "level %d, atom %llu", level,
                  static_cast<unsigned long long>(t.heap_id(level, idx)));
    return std::string(buf);
}

// Raw-Lebesgue integrals of g^2 over every cell of `level`, scaled so that
// summing them over the domain gives the integral under normalized Lebesgue.
std::vector<double> g2_cell_integrals(const PartitionTree& t, const PolySpace& s, int level,
                                      bool parallel) {
    const Quad1D& q = gauss_legendre_01(s.quad_points());
    std::vector<double> cells(t.level_size(level));
    kernels::cell_integrals(t, level, q, 1, cells.data(), parallel,
                            [&s](std::size_t, const double* x, double* v) {
                                const double g = s.eval_g(x);
                                v[0] = g * g;
                            });
    const double inv_vol = 1.0 / t.domain().volume();
    for (double& c : cells) c *= inv_vol;
    return cells;
}

// Modified Gram-Schmidt with one re-orthogonalization pass. Keeps rows whose
// residual exceeds drop_tol; returns how many were kept.
int mgs_rows(const Eigen::MatrixXd& M, Eigen::MatrixXd& out, double drop_tol) {
    out.resize(M.rows(), M.cols());
    int cnt = 0;
    for (int i = 0; i < M.rows(); ++i) {
        Eigen::VectorXd v = M.row(i).transpose();
        for (int pass = 0; pass < 2; ++pass)
            for (int j = 0; j < cnt; ++j) v -= out.row(j).dot(v) * out.row(j).transpose();
        const double nr = v.norm();
        if (nr > drop_tol) out.row(cnt++) = v.transpose() / nr;
    }
    return cnt;
}

MatrixDiagnostics diagnostics_of(const Eigen::MatrixXd& A) {
    MatrixDiagnostics out;
    out.norm2 = A.jacobiSvd().singularValues()(0);
    if (A.rows() == A.cols()) out.abs_det = std::abs(A.determinant());
    // walk rows from the last to the first, growing an orthonormal basis of
    // the span of the rows already seen
    const int n = static_cast<int>(A.rows());
    Eigen::MatrixXd basis(n, A.cols());
    int cnt = 0;
    for (int i = n - 1; i >= 0; --i) {
        Eigen::VectorXd v = A.row(i).transpose();
        const double nv = v.norm();
        if (cnt > 0 && nv > 0.0) {
            const double a = std::min(1.0, (basis.topRows(cnt) * v).norm() / nv);
            out.alpha_max = std::max(out.alpha_max, a);
        }
        for (int pass = 0; pass < 2; ++pass)
            for (int j = 0; j < cnt; ++j) v -= basis.row(j).dot(v) * basis.row(j).transpose();
        const double nr = v.norm();
        if (nr > 1e-12) basis.row(cnt++) = v.transpose() / nr;
    }
    out.det_lower_bound =
        std::pow(std::max(0.0, 1.0 - out.alpha_max * out.alpha_max), 0.5 * n);
    return out;
}

bool base_is_flat(const MeasureTree& m) {
    return m.resolution() == 0 && m.weight(0) == 1.0;
}

} // namespace

MatrixDiagnostics matrix_diagnostics(const std::vector<double>& rows, int nrows, int ncols) {
    if (nrows <= 0 || ncols <= 0 ||
        rows.size() != static_cast<std::size_t>(nrows) * static_cast<std::size_t>(ncols))
        throw std::invalid_argument("matrix_diagnostics: size mismatch");
    Eigen::MatrixXd A(nrows, ncols);
    for (int i = 0; i < nrows; ++i)
        for (int j = 0; j < ncols; ++j) A(i, j) = rows[static_cast<std::size_t>(i) * ncols + j];
    return diagnostics_of(A);
}

TiltedMeasure build_measure_1d(const PartitionTree& t, const Smartingale& f, double lambda,
                               bool parallel) {
    if (f.space.dim_s() != 1)
        throw std::invalid_argument("build_measure_1d: requires dim S == 1");
    if (!(lambda >= 0.0) || lambda >= 1.0)
        throw std::invalid_argument("build_measure_1d: lambda must lie in [0, 1)");

    TiltedMeasure out;
    out.lambda = lambda;
    out.ell = 0;
    out.tilted = f;
    out.tilted.bound_L = f.bound_L * (1.0 + lambda);
    if (f.steps.empty()) {
        out.measure = f.base;
        return out;
    }

    const int R = std::max(f.last_step(), f.base.resolution());
    const double vol_omega = t.domain().volume();

    // nu(B) = integral of g^2 over B under the base measure, at every level
    std::vector<double> cells = g2_cell_integrals(t, f.space, R, parallel);
    for (std::size_t c = 0; c < cells.size(); ++c) cells[c] *= f.base.weight_at(R, c);
    const std::vector<std::vector<double>> nu = kernels::aggregate_all_levels(cells, 1, R);

    // density of the new measure with respect to the base measure
    std::vector<double> dens(t.level_size(R), 1.0);

    for (std::size_t si = 0; si < f.steps.size(); ++si) {
        const int n = f.steps[si];
        const PiecewisePoly& df = f.diffs[si];
        PiecewisePoly p = PiecewisePoly::zero(t, f.space, n);
        PiecewisePoly& td = out.tilted.diffs[si];

        const std::ptrdiff_t natoms = static_cast<std::ptrdiff_t>(t.level_size(n - 1));
        const int sh = R - n; // child range shift at the density resolution
        double det_min = kInf, jump_max = 0.0;
        long long skipped = 0;
        int err_kind = 0; // 1 = singular split, 2 = positivity lost
        long long err_atom = -1;
        std::string err_msg;

#pragma omp parallel for schedule(static) if (parallel) \
    reduction(min : det_min) reduction(max : jump_max) reduction(+ : skipped)
        for (std::ptrdiff_t a = 0; a < natoms; ++a) {
            const std::size_t c0 = 2 * static_cast<std::size_t>(a);
            const std::size_t c1 = c0 + 1;
            const double u0 = df.at(c0)[0];
            const double u1 = df.at(c1)[0];
            p.at(c0)[0] = std::abs(u0);
            p.at(c1)[0] = std::abs(u1);
            td.at(c0)[0] = u0 - lambda * std::abs(u0);
            td.at(c1)[0] = u1 - lambda * std::abs(u1);

            const double hnorm = std::hypot(u0, u1);
            const double scale =
                std::max(1.0, f.bound_L) * std::sqrt(t.mass(n - 1, static_cast<std::size_t>(a)) * vol_omega);
            if (hnorm <= 1e-13 * scale) {
                ++skipped;
                continue;
            }

            const double nu0 = nu[n][c0];
            const double nu1 = nu[n][c1];
            const double nu_a = nu0 + nu1;
            if (!(nu0 > 0.0) || !(nu1 > 0.0)) {
#pragma omp critical(cm1d_err)
                if (err_kind == 0 || a < err_atom) {
                    err_kind = 1;
                    err_atom = a;
                    err_msg = "build_measure_1d: vanishing weighted child mass at " +
                              atom_label(t, n - 1, static_cast<std::size_t>(a));
                }
                continue;
            }
            const double eta = 2.0 * (nu0 / nu_a) - 1.0;
            const double eps = (u0 >= 0.0) ? 1.0 : -1.0;
            const double det = eps + lambda * eta;
            if (std::abs(det) < 1e-12) {
#pragma omp critical(cm1d_err)
                if (err_kind == 0 || a < err_atom) {
                    err_kind = 1;
                    err_atom = a;
                    err_msg = "build_measure_1d: singular 2x2 system at " +
                              atom_label(t, n - 1, static_cast<std::size_t>(a));
                }
                continue;
            }
            const double r0 = (eps + lambda) / det;
            const double r1 = (eps - lambda) / det;
            if (!(r0 > 0.0) || !(r1 > 0.0)) {
#pragma omp critical(cm1d_err)
                if (err_kind == 0 || a < err_atom) {
                    err_kind = 2;
                    err_atom = a;
                    err_msg = "build_measure_1d: density lost positivity at " +
                              atom_label(t, n - 1, static_cast<std::size_t>(a));
                }
                continue;
            }
            const double d_a = dens[static_cast<std::size_t>(a) << (sh + 1)];
            std::fill(dens.begin() + static_cast<std::ptrdiff_t>(c0 << sh),
                      dens.begin() + static_cast<std::ptrdiff_t>((c0 + 1) << sh), d_a * r0);
            std::fill(dens.begin() + static_cast<std::ptrdiff_t>(c1 << sh),
                      dens.begin() + static_cast<std::ptrdiff_t>((c1 + 1) << sh), d_a * r1);
            det_min = std::min(det_min, std::abs(det));
            jump_max = std::max(jump_max, std::max(std::abs(r0 - 1.0), std::abs(r1 - 1.0)));
        }

        if (err_kind == 1) throw singular_split_error(err_msg);
        if (err_kind == 2)
            throw lambda_too_large_error(err_msg, n,
                                         static_cast<long long>(t.heap_id(n - 1, static_cast<std::size_t>(err_atom))));

        StepDiagnostics diag;
        diag.level = n;
        diag.atoms = t.level_size(n - 1);
        diag.skipped = static_cast<std::size_t>(skipped);
        diag.det_t_min = 1.0;
        diag.det_ttilde_min = (det_min == kInf) ? 1.0 : det_min;
        diag.max_rel_jump = jump_max;
        diag.min_density = *std::min_element(dens.begin(), dens.end());
        diag.max_density = *std::max_element(dens.begin(), dens.end());
        out.steps.push_back(diag);
        out.perturbations.push_back(std::move(p));
    }

    std::vector<double> w(dens.size());
    for (std::size_t c = 0; c < w.size(); ++c) w[c] = dens[c] * f.base.weight_at(R, c);
    out.measure = MeasureTree::from_weights(t, R, std::move(w));
    return out;
}

EllSelection select_ell(const PartitionTree& t, const PolySpace& s, int n_samples,
                        std::uint64_t seed, double c_floor) {
    if (n_samples <= 0) throw std::invalid_argument("select_ell: n_samples must be positive");
    if (!(c_floor > 0.0) || c_floor >= 1.0)
        throw std::invalid_argument("select_ell: c_floor must lie in (0, 1)");

    const int k2 = s.dim_s2();
    int ell_dim = 0;
    while ((std::int64_t{1} << (ell_dim + 1)) < s.dim_s() + k2) ++ell_dim;
    const int max_off = std::min(t.depth(), 8);
    if (ell_dim > max_off)
        throw std::runtime_error("select_ell: tree too shallow for the space dimensions");

    const int jmax = std::max(0, std::min(3, t.depth() - max_off));
    const int dim = t.dim();
    const Quad1D& q = gauss_legendre_01(s.quad_points());
    const int panels = 4;

    std::vector<double> worst(static_cast<std::size_t>(max_off) + 1, kInf);
    std::vector<double> z(static_cast<std::size_t>(k2));

    for (int si = 0; si < n_samples; ++si) {
        auto rng = engine_for(seed, static_cast<std::uint64_t>(si));
        const int j = static_cast<int>(uniform01(rng) * (jmax + 1));
        const std::size_t idx =
            static_cast<std::size_t>(uniform01(rng) * static_cast<double>(t.level_size(j)));
        for (int i = 0; i < k2; ++i) z[static_cast<std::size_t>(i)] = gaussian(rng);
        const LocalBasis b2(s, t.lo(j, idx), t.hi(j, idx), true);

        // integral of |u| over the atom: panel-composite rule on a refinement
        const int la = std::min(j + 4, t.depth());
        double absint = 0.0;
        {
            double sub_lo[8], sub_hi[8];
            int pidx[8];
            for (std::size_t c = idx << (la - j); c < (idx + 1) << (la - j); ++c) {
                const double* lo = t.lo(la, c);
                const double* hi = t.hi(la, c);
                for (int a = 0; a < dim; ++a) pidx[a] = 0;
                for (;;) {
                    for (int a = 0; a < dim; ++a) {
                        const double step = (hi[a] - lo[a]) / panels;
                        sub_lo[a] = lo[a] + step * pidx[a];
                        sub_hi[a] = sub_lo[a] + step;
                    }
                    for_each_node(sub_lo, sub_hi, dim, q, [&](const double* x, double w) {
                        absint += w * std::abs(b2.eval_combo(z.data(), x));
                    });
                    int a = 0;
                    while (a < dim && ++pidx[a] == panels) {
                        pidx[a] = 0;
                        ++a;
                    }
                    if (a == dim) break;
                }
            }
        }
        if (!(absint > 0.0)) continue;

        for (int off = 0; off <= max_off; ++off) {
            double ssum = 0.0;
            const int l = j + off;
            for (std::size_t c = idx << off; c < (idx + 1) << off; ++c) {
                double cell = 0.0;
                for_each_node(t.lo(l, c), t.hi(l, c), dim, q,
                              [&](const double* x, double w) { cell += w * b2.eval_combo(z.data(), x); });
                ssum += std::abs(cell);
            }
            worst[static_cast<std::size_t>(off)] =
                std::min(worst[static_cast<std::size_t>(off)], ssum / absint);
        }
    }

    int ell0 = -1;
    for (int off = 0; off <= max_off; ++off)
        if (worst[static_cast<std::size_t>(off)] >= c_floor) {
            ell0 = off;
            break;
        }
    if (ell0 < 0)
        throw std::runtime_error("select_ell: concentration floor not reached within offset 8");

    EllSelection r;
    r.ell0 = ell0;
    r.ell = std::max(ell0, ell_dim);
    r.c_estimate = worst[static_cast<std::size_t>(r.ell)];
    r.samples = n_samples;
    return r;
}

TiltedMeasure build_measure_general(const PartitionTree& t, const Smartingale& f, double lambda,
                                    int ell, bool parallel) {
    const PolySpace& s = f.space;
    if (!s.contains_constants())
        throw std::invalid_argument("build_measure_general: S must contain constants");
    if (!(lambda >= 0.0))
        throw std::invalid_argument("build_measure_general: lambda must be nonnegative");
    if (ell < 0) throw std::invalid_argument("build_measure_general: ell must be nonnegative");
    if (!base_is_flat(f.base))
        throw std::invalid_argument("build_measure_general: input must live over the Lebesgue base");

    const int k = s.dim_s();
    const int k2 = s.dim_s2();
    const int m = 1 << (ell + 1);
    if (m < k + k2)
        throw std::invalid_argument(
            "build_measure_general: refinement too coarse, need 2^(ell+1) >= dim S + dim S^2");
    for (std::size_t i = 0; i + 1 < f.steps.size(); ++i)
        if (f.steps[i + 1] - f.steps[i] < ell + 1)
            throw std::invalid_argument(
                "build_measure_general: active levels closer than ell + 1 apart");

    TiltedMeasure out;
    out.lambda = lambda;
    out.ell = ell;
    out.tilted = f;
    out.tilted.bound_L = f.bound_L * (1.0 + lambda);
    if (f.steps.empty()) {
        out.measure = f.base;
        return out;
    }
    const int R = f.last_step() + ell;
    if (R > t.depth())
        throw std::invalid_argument("build_measure_general: last level + ell exceeds tree depth");

    const int dim = t.dim();
    const int need = m - k - k2;
    const double vol_omega = t.domain().volume();
    const Quad1D& q = gauss_legendre_01(s.quad_points());
    std::vector<double> dens(t.level_size(R), 1.0);

    for (std::size_t si = 0; si < f.steps.size(); ++si) {
        const int n = f.steps[si];
        const PiecewisePoly& df = f.diffs[si];
        const int lc = n + ell; // cell level of this step's density
        const int sh = R - lc;  // cell range shift at the final resolution

        // perturbation: conditional expectation of |difference| at level n,
        // stored as the constant-coefficient element of S on each atom
        const LevelValues pe = abs_conditional_expectation(t, s, df, n, f.base, 8, parallel);
        PiecewisePoly p = PiecewisePoly::zero(t, s, n);
        {
            const std::ptrdiff_t nn = static_cast<std::ptrdiff_t>(t.level_size(n));
#pragma omp parallel for schedule(static) if (parallel)
            for (std::ptrdiff_t b = 0; b < nn; ++b) {
                const std::size_t bb = static_cast<std::size_t>(b);
                const LocalBasis lb(s, t.lo(n, bb), t.hi(n, bb), false);
                double ctr[8];
                for (int a = 0; a < dim; ++a) ctr[a] = 0.5 * (t.lo(n, bb)[a] + t.hi(n, bb)[a]);
                p.at(bb)[0] = pe.v[bb] / lb.eval_one(0, ctr);
            }
        }

        const std::ptrdiff_t natoms = static_cast<std::ptrdiff_t>(t.level_size(n - 1));
        double det_t_min = kInf, det_tt_min = kInf;
        double alpha_mx = 0.0, dt_mx = 0.0, tn_mx = 0.0, jump_mx = 0.0, res_mx = 0.0;
        bool bound_ok = true;
        long long skipped = 0;
        int err_kind = 0; // 1 = near singular, 2 = positivity lost
        long long err_atom = -1;
        std::string err_msg;

#pragma omp parallel if (parallel)
        {
            double det_t_l = kInf, det_tt_l = kInf;
            double alpha_l = 0.0, dt_l = 0.0, tn_l = 0.0, jump_l = 0.0, res_l = 0.0;
            bool bound_l = true;
            long long skipped_l = 0;
            std::vector<double> bv(static_cast<std::size_t>(k));
            std::vector<double> qv(static_cast<std::size_t>(k2));

#pragma omp for schedule(static) nowait
            for (std::ptrdiff_t a = 0; a < natoms; ++a) {
                const std::size_t pa = static_cast<std::size_t>(a);
                const std::size_t child0 = 2 * pa;
                const double d_a = dens[pa << (sh + ell + 1)];

                double hn2 = 0.0;
                for (std::size_t c = child0; c <= child0 + 1; ++c)
                    for (int i = 0; i < k; ++i) hn2 += df.at(c)[i] * df.at(c)[i];
                const double scale =
                    std::max(1.0, f.bound_L) * std::sqrt(t.mass(n - 1, pa) * vol_omega);
                if (std::sqrt(hn2) <= 1e-13 * scale) {
                    ++skipped_l;
                    continue;
                }

                const LocalBasis ba(s, t.lo(n - 1, pa), t.hi(n - 1, pa), false);
                const LocalBasis ba2(s, t.lo(n - 1, pa), t.hi(n - 1, pa), true);
                const LocalBasis bc0(s, t.lo(n, child0), t.hi(n, child0), false);
                const LocalBasis bc1(s, t.lo(n, child0 + 1), t.hi(n, child0 + 1), false);

                Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, m);
                Eigen::MatrixXd Pm = Eigen::MatrixXd::Zero(k, m);
                Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(k2, m);
                for (int j = 0; j < m; ++j) {
                    const std::size_t cell = (pa << (ell + 1)) + static_cast<std::size_t>(j);
                    const std::size_t child = cell >> ell;
                    const double pnv = pe.v[child];
                    const LocalBasis& bc = (child & 1) ? bc1 : bc0;
                    const double* hc = df.at(child);
                    for_each_node(t.lo(lc, cell), t.hi(lc, cell), dim, q,
                                  [&](const double* x, double w) {
                                      ba.eval(x, bv.data());
                                      ba2.eval(x, qv.data());
                                      const double hv = bc.eval_combo(hc, x);
                                      for (int i = 0; i < k; ++i) {
                                          H(i, j) += w * hv * bv[static_cast<std::size_t>(i)];
                                          Pm(i, j) += w * pnv * bv[static_cast<std::size_t>(i)];
                                      }
                                      for (int i = 0; i < k2; ++i)
                                          Q(i, j) += w * qv[static_cast<std::size_t>(i)];
                                  });
                }

                // orthonormalize the two row families via their Gram matrices
                auto whiten = [](const Eigen::MatrixXd& M) -> std::optional<Eigen::MatrixXd> {
                    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M * M.transpose());
                    const auto& ev = es.eigenvalues();
                    const double emax = ev(ev.size() - 1);
                    if (!(emax > 0.0) || ev(0) <= 1e-12 * emax) return std::nullopt;
                    return Eigen::MatrixXd(ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                                           es.eigenvectors().transpose());
                };
                const auto c1 = whiten(H);
                const auto c2 = whiten(Q);
                if (!c1 || !c2) {
#pragma omp critical(cmg_err)
                    if (err_kind == 0 || a < err_atom) {
                        err_kind = 1;
                        err_atom = a;
                        err_msg = std::string("build_measure_general: ") +
                                  (!c1 ? "difference" : "squared-space") +
                                  " moment form degenerate at " + atom_label(t, n - 1, pa);
                    }
                    continue;
                }
                const Eigen::MatrixXd t1 = (*c1) * H;
                const Eigen::MatrixXd t2 = (*c2) * Q;
                const Eigen::MatrixXd t1t = (*c1) * (H - lambda * Pm);

                // orthonormal completion of the row span
                Eigen::MatrixXd tb(k + k2, m);
                tb.topRows(k) = t1;
                tb.bottomRows(k2) = t2;
                Eigen::MatrixXd w;
                if (mgs_rows(tb, w, 1e-10) < k + k2) {
#pragma omp critical(cmg_err)
                    if (err_kind == 0 || a < err_atom) {
                        err_kind = 1;
                        err_atom = a;
                        err_msg = "build_measure_general: moment rows nearly dependent at " +
                                  atom_label(t, n - 1, pa);
                    }
                    continue;
                }
                Eigen::MatrixXd comp(need, m);
                int cnt = 0;
                for (int e = 0; e < m && cnt < need; ++e) {
                    Eigen::VectorXd v = Eigen::VectorXd::Unit(m, e);
                    for (int pass = 0; pass < 2; ++pass) {
                        for (int j = 0; j < k + k2; ++j) v -= w.row(j).dot(v) * w.row(j).transpose();
                        for (int j = 0; j < cnt; ++j)
                            v -= comp.row(j).dot(v) * comp.row(j).transpose();
                    }
                    const double nr = v.norm();
                    if (nr > 1e-8) comp.row(cnt++) = v.transpose() / nr;
                }
                if (cnt < need) {
#pragma omp critical(cmg_err)
                    if (err_kind == 0 || a < err_atom) {
                        err_kind = 1;
                        err_atom = a;
                        err_msg = "build_measure_general: completion failed at " +
                                  atom_label(t, n - 1, pa);
                    }
                    continue;
                }

                Eigen::MatrixXd T(m, m), Tt(m, m);
                T.topRows(k) = t1;
                T.middleRows(k, k2) = t2;
                T.bottomRows(need) = comp;
                Tt = T;
                Tt.topRows(k) = t1t;

                const MatrixDiagnostics md = diagnostics_of(T);

                Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
                rhs.segment(k, k2) = d_a * t2.rowwise().sum();
                if (need) rhs.tail(need) = d_a * comp.rowwise().sum();

                Eigen::PartialPivLU<Eigen::MatrixXd> lu(Tt);
                const double det_tt = std::abs(lu.determinant());
                if (det_tt < 1e-10) {
#pragma omp critical(cmg_err)
                    if (err_kind == 0 || a < err_atom) {
                        err_kind = 1;
                        err_atom = a;
                        char buf[160];
                        std::snprintf(buf, sizeof buf,
                                      "build_measure_general: |det| %.3e below 1e-10 (alpha %.6f) at ",
                                      det_tt, md.alpha_max);
                        err_msg = buf + atom_label(t, n - 1, pa);
                    }
                    continue;
                }
                const Eigen::VectorXd d = lu.solve(rhs);
                if (!d.allFinite() || !(d.minCoeff() > 0.0)) {
#pragma omp critical(cmg_err)
                    if (err_kind == 0 || a < err_atom) {
                        err_kind = 2;
                        err_atom = a;
                        err_msg = "build_measure_general: density lost positivity at " +
                                  atom_label(t, n - 1, pa);
                    }
                    continue;
                }

                for (int j = 0; j < m; ++j) {
                    const std::size_t cell =
                        ((pa << (ell + 1)) + static_cast<std::size_t>(j)) << sh;
                    std::fill(dens.begin() + static_cast<std::ptrdiff_t>(cell),
                              dens.begin() + static_cast<std::ptrdiff_t>(cell + (std::size_t{1} << sh)),
                              d(j));
                }

                det_t_l = std::min(det_t_l, md.abs_det);
                det_tt_l = std::min(det_tt_l, det_tt);
                alpha_l = std::max(alpha_l, md.alpha_max);
                tn_l = std::max(tn_l, md.norm2);
                jump_l = std::max(jump_l, ((d / d_a).array() - 1.0).abs().maxCoeff());
                res_l = std::max(res_l, (Tt * d - rhs).cwiseAbs().maxCoeff() / d_a);
                if (lambda > 0.0)
                    dt_l = std::max(dt_l,
                                    Eigen::MatrixXd(lambda * ((*c1) * Pm)).jacobiSvd().singularValues()(0));
                if (md.abs_det < md.det_lower_bound * (1.0 - 1e-8) - 1e-12) bound_l = false;
            }

#pragma omp critical(cmg_merge)
            {
                det_t_min = std::min(det_t_min, det_t_l);
                det_tt_min = std::min(det_tt_min, det_tt_l);
                alpha_mx = std::max(alpha_mx, alpha_l);
                dt_mx = std::max(dt_mx, dt_l);
                tn_mx = std::max(tn_mx, tn_l);
                jump_mx = std::max(jump_mx, jump_l);
                res_mx = std::max(res_mx, res_l);
                bound_ok = bound_ok && bound_l;
                skipped += skipped_l;
            }
        }

        if (err_kind == 1) throw near_singular_error(err_msg);
        if (err_kind == 2)
            throw lambda_too_large_error(
                err_msg, n,
                static_cast<long long>(t.heap_id(n - 1, static_cast<std::size_t>(err_atom))));

        StepDiagnostics diag;
        diag.level = n;
        diag.atoms = t.level_size(n - 1);
        diag.skipped = static_cast<std::size_t>(skipped);
        diag.det_t_min = (det_t_min == kInf) ? 1.0 : det_t_min;
        diag.det_ttilde_min = (det_tt_min == kInf) ? 1.0 : det_tt_min;
        diag.alpha_max = alpha_mx;
        diag.dt_norm_max = dt_mx;
        diag.t_norm_max = tn_mx;
        diag.max_rel_jump = jump_mx;
        diag.solve_residual = res_mx;
        diag.det_bound_ok = bound_ok;
        diag.min_density = *std::min_element(dens.begin(), dens.end());
        diag.max_density = *std::max_element(dens.begin(), dens.end());
        out.steps.push_back(diag);

        PiecewisePoly& td = out.tilted.diffs[si];
        for (std::size_t b = 0; b < t.level_size(n); ++b) td.at(b)[0] -= lambda * p.at(b)[0];
        out.perturbations.push_back(std::move(p));
    }

    out.measure = MeasureTree::from_weights(t, R, std::move(dens));
    return out;
}

MeasureVerification verify_measure(const PartitionTree& t, const Smartingale& f,
                                   const TiltedMeasure& tm, int n_samples, std::uint64_t seed,
                                   bool parallel) {
    if (n_samples <= 0) throw std::invalid_argument("verify_measure: n_samples must be positive");
    MeasureVerification out;
    const PolySpace& s = f.space;
    const MeasureTree& mb = f.base;
    const MeasureTree& mt = tm.measure;
    const int R = std::max(mt.resolution(), mb.resolution());
    const double lam = tm.lambda;

    out.residual = verify_smartingale(t, tm.tilted, mt, parallel);

    // nu (base) and theta (tilted) pyramids of weighted g^2 integrals
    const std::vector<double> raw = g2_cell_integrals(t, s, R, parallel);
    std::vector<double> nuc(raw.size()), thc(raw.size());
    for (std::size_t c = 0; c < raw.size(); ++c) {
        nuc[c] = raw[c] * mb.weight_at(R, c);
        thc[c] = raw[c] * mt.weight_at(R, c);
    }
    const auto nu = kernels::aggregate_all_levels(nuc, 1, R);
    const auto th = kernels::aggregate_all_levels(thc, 1, R);
    out.mass_drift = std::abs(th[0][0] - nu[0][0]);

    double emin = kInf, emax = -kInf, dmin = kInf, dmax = -kInf;
    double texc = th[0][0] - std::pow(nu[0][0], 1.0 - 2.0 * lam);
    long long pairs = 0;
    for (int lb = 1; lb <= R; ++lb) {
        const std::ptrdiff_t nl = static_cast<std::ptrdiff_t>(t.level_size(lb));
#pragma omp parallel for schedule(static) if (parallel) reduction(min : emin, dmin) \
    reduction(max : emax, dmax, texc) reduction(+ : pairs)
        for (std::ptrdiff_t i = 0; i < nl; ++i) {
            const std::size_t ib = static_cast<std::size_t>(i);
            const double nu_b = nu[lb][ib];
            const double th_b = th[lb][ib];
            texc = std::max(texc, th_b - std::pow(nu_b, 1.0 - 2.0 * lam));
            const double mt_b = mt.mass(t, lb, ib);
            const double mb_b = mb.mass(t, lb, ib);
            for (int la = lb - 1; la >= 0; --la) {
                const std::size_t ia = ib >> (lb - la);
                const double num = std::log(mt_b / mt.mass(t, la, ia));
                const double den = std::log(mb_b / mb.mass(t, la, ia));
                const double x = num / den;
                emin = std::min(emin, x);
                emax = std::max(emax, x);
                const double dn = std::log(nu[la][ia] / nu_b);
                const double dd = std::log((th_b / nu_b) / (th[la][ia] / nu[la][ia]));
                const double y = dd / dn;
                dmin = std::min(dmin, y);
                dmax = std::max(dmax, y);
                ++pairs;
            }
        }
    }
    out.exponent_min = emin;
    out.exponent_max = emax;
    out.density_exponent_min = dmin;
    out.density_exponent_max = dmax;
    out.theta_excess = texc;
    out.pairs = pairs;
    out.fitted_c = (lam > 0.0) ? std::max(std::abs(emin - 1.0), std::abs(emax - 1.0)) / lam : 0.0;

    // empirical L1 -> sup embedding constants over random S elements
    const int lf = std::min(4, t.depth());
    const int k = s.dim_s();
    double ebase = kInf, etil = kInf;
    for (int si = 0; si < n_samples; ++si) {
        auto rng = engine_for(seed, static_cast<std::uint64_t>(si));
        PiecewisePoly u = PiecewisePoly::zero(t, s, lf);
        for (std::size_t i = 0; i < t.level_size(lf); ++i)
            for (int j = 0; j < k; ++j) u.at(i)[j] = gaussian(rng);
        const LevelValues ab = abs_conditional_expectation(t, s, u, lf, mb, 8, parallel);
        const LevelValues at = abs_conditional_expectation(t, s, u, lf, mt, 8, parallel);
        for (std::size_t i = 0; i < t.level_size(lf); ++i) {
            const double sup = sup_norm(s, t.box(lf, i), u.at(i), false, 129).grid_max;
            if (!(sup > 0.0)) continue;
            ebase = std::min(ebase, ab.v[i] / sup);
            etil = std::min(etil, at.v[i] / sup);
        }
    }
    out.embed_base = (ebase == kInf) ? 0.0 : ebase;
    out.embed_tilted = (etil == kInf) ? 0.0 : etil;
    return out;
}

LemmaSuiteResult lemma_property_suite(long long n_samples, std::uint64_t seed) {
    if (n_samples <= 0)
        throw std::invalid_argument("lemma_property_suite: n_samples must be positive");
    LemmaSuiteResult r;
    r.samples = n_samples;
    r.min_margin = kInf;
    r.min_margin_small_lambda = kInf;
    for (long long i = 0; i < n_samples; ++i) {
        auto rng = engine_for(seed, static_cast<std::uint64_t>(i));
        const double lam = 1e-12 + (1.0 - 2e-12) * uniform01(rng);
        const double eta = std::clamp(-1.0 + 2.0 * uniform01(rng), -1.0 + 1e-12, 1.0 - 1e-12);
        const bool small = lam <= 1.0 / 3.0;
        if (small) ++r.samples_small_lambda;
        const double base = 2.0 / (1.0 + eta);
        const double lo = std::pow(base, -3.0 * lam);
        const double hi = std::pow(base, 2.0 * lam);
        double margin[8];
        margin[0] = 2.0 * (1.0 + eta * lam) - (1.0 + eta);
        margin[1] = 3.0 * (1.0 - eta * lam) - (1.0 + eta);
        int c = 2;
        for (const double eps : {1.0, -1.0}) {
            const double ratio = (lam + eps) / (eta * lam + eps);
            margin[c++] = ratio - lo;
            margin[c++] = hi - ratio;
            margin[c++] = ratio; // positivity of the density ratio
        }
        bool bad = false;
        for (int j = 0; j < 8; ++j) {
            if (margin[j] < 0.0) bad = true;
            if (margin[j] < r.min_margin) {
                r.min_margin = margin[j];
                r.worst_lambda = lam;
                r.worst_eta = eta;
                r.worst_case = j;
            }
            if (small) r.min_margin_small_lambda = std::min(r.min_margin_small_lambda, margin[j]);
        }
        if (bad) {
            ++r.violations;
            if (small) ++r.violations_small_lambda;
        }
    }
    return r;
}

} // namespace smartlab
