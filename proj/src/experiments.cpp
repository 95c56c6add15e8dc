#include "smartlab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "smartlab/rng.hpp"

namespace smartlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// loglog is evaluated only strictly above e (small guard against rounding)
inline bool loglog_defined(double s2) { return s2 > std::exp(1.0) * (1.0 + 1e-9); }

// nearest-rank percentile of the valid (non-NaN) entries; NaN if none
double percentile(std::vector<double> vals, double q) {
    vals.erase(std::remove_if(vals.begin(), vals.end(), [](double v) { return std::isnan(v); }),
               vals.end());
    if (vals.empty()) return kNaN;
    std::sort(vals.begin(), vals.end());
    const auto rank = static_cast<std::size_t>(
        std::max(1.0, std::ceil(q * static_cast<double>(vals.size()))));
    return vals[std::min(rank - 1, vals.size() - 1)];
}

std::vector<int> checked_grid(const PartitionTree& t, const std::vector<int>& grid,
                              const char* who) {
    if (grid.empty()) throw std::invalid_argument(std::string(who) + ": empty depth grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < 1 || grid[i] > t.depth())
            throw std::invalid_argument(std::string(who) + ": depth outside the tree");
        if (i > 0 && grid[i] <= grid[i - 1])
            throw std::invalid_argument(std::string(who) + ": depths must be increasing");
    }
    return grid;
}

void atom_center(const PartitionTree& t, int level, std::size_t idx, double* x) {
    const double* lo = t.lo(level, idx);
    const double* hi = t.hi(level, idx);
    for (int a = 0; a < t.dim(); ++a) x[a] = 0.5 * (lo[a] + hi[a]);
}

// cumulative values of the active differences of f at a fixed point x (the
// center of leaf `leaf` at level `leaf_level`): out[si + 1] = sum of the
// first si + 1 difference values, out[0] = 0.  Optionally accumulates the
// gradient the same way (grad_out[(si + 1) * dim + a]).
void cumulative_diffs(const PartitionTree& t, const Smartingale& f, int leaf_level,
                      std::size_t leaf, const double* x, std::vector<double>& out,
                      std::vector<double>* grad_out = nullptr) {
    const int d = t.dim();
    out.assign(f.steps.size() + 1, 0.0);
    if (grad_out) grad_out->assign((f.steps.size() + 1) * static_cast<std::size_t>(d), 0.0);
    double gbuf[256];
    for (std::size_t si = 0; si < f.steps.size(); ++si) {
        const int k = f.steps[si];
        const std::size_t idx = leaf >> (leaf_level - k);
        out[si + 1] = out[si] + f.diffs[si].eval_at(t, f.space, idx, x);
        if (grad_out) {
            const LocalBasis lb(f.space, t.lo(k, idx), t.hi(k, idx));
            lb.grad(x, gbuf);
            const double* c = f.diffs[si].at(idx);
            for (int a = 0; a < d; ++a) {
                double g = (*grad_out)[si * d + a];
                for (int j = 0; j < lb.size(); ++j) g += c[j] * gbuf[j * d + a];
                (*grad_out)[(si + 1) * d + a] = g;
            }
        }
    }
}

struct OlsFit {
    double slope = 0.0;
    double std_error = 0.0;
};

OlsFit ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw std::invalid_argument("box_dimension: degenerate mesh sizes");
    OlsFit fit;
    fit.slope = sxy / sxx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - my - fit.slope * (x[i] - mx);
        ss_res += r * r;
    }
    if (n > 2) fit.std_error = std::sqrt(std::max(0.0, ss_res / static_cast<double>(n - 2) / sxx));
    return fit;
}

} // namespace

std::size_t sample_atom(const PartitionTree& t, const MeasureTree& m, int level,
                        std::mt19937_64& rng) {
    if (level < 0 || level > t.depth()) throw std::invalid_argument("sample_atom: bad level");
    std::size_t idx = 0;
    for (int l = 0; l < level; ++l) {
        const double ml = m.mass(t, l + 1, 2 * idx);
        const double mr = m.mass(t, l + 1, 2 * idx + 1);
        const double tot = ml + mr;
        if (!(tot > 0.0)) throw std::logic_error("sample_atom: atom of zero mass reached");
        idx = (uniform01(rng) * tot < ml) ? 2 * idx : 2 * idx + 1;
    }
    return idx;
}

FreedmanResult freedman_tail(double L, const std::vector<double>& a_grid,
                             const std::vector<double>& b_grid, long long n_paths, int horizon,
                             std::uint64_t seed, bool parallel) {
    if (!(L > 0.0)) throw std::invalid_argument("freedman_tail: L must be positive");
    if (n_paths < 1) throw std::invalid_argument("freedman_tail: need at least one path");
    if (horizon < 1) throw std::invalid_argument("freedman_tail: need a positive horizon");
    if (a_grid.empty() || b_grid.empty())
        throw std::invalid_argument("freedman_tail: empty level grid");
    for (double a : a_grid)
        if (!(a > 0.0)) throw std::invalid_argument("freedman_tail: levels a must be positive");
    for (double b : b_grid)
        if (!(b > 0.0)) throw std::invalid_argument("freedman_tail: budgets b must be positive");

    const int na = static_cast<int>(a_grid.size());
    const int nb = static_cast<int>(b_grid.size());

    // the event for cell (a, b) needs tau_a <= min(horizon, b / L^2), so the
    // walk can stop at the largest such step count
    const double max_b = *std::max_element(b_grid.begin(), b_grid.end());
    const double cap = std::floor(max_b / (L * L));
    const int n_walk = (cap < static_cast<double>(horizon))
                           ? std::max(1, static_cast<int>(cap))
                           : horizon;

    std::vector<long long> hits(static_cast<std::size_t>(na) * nb, 0);

#pragma omp parallel if (parallel)
    {
        std::vector<long long> local(hits.size(), 0);
        std::vector<int> tau(na);
#pragma omp for schedule(static)
        for (long long p = 0; p < n_paths; ++p) {
            std::mt19937_64 rng = engine_for(seed, static_cast<std::uint64_t>(p));
            std::fill(tau.begin(), tau.end(), horizon + 1);
            double M = 0.0;
            int unhit = na;
            for (int n = 1; n <= n_walk && unhit > 0; ++n) {
                M += L * rademacher(rng);
                for (int ai = 0; ai < na; ++ai)
                    if (tau[ai] > horizon && M >= a_grid[ai]) {
                        tau[ai] = n;
                        --unhit;
                    }
            }
            for (int ai = 0; ai < na; ++ai) {
                if (tau[ai] > horizon) continue;
                const double s2 = static_cast<double>(tau[ai]) * L * L;
                for (int bi = 0; bi < nb; ++bi)
                    if (s2 <= b_grid[bi]) ++local[static_cast<std::size_t>(ai) * nb + bi];
            }
        }
#pragma omp critical(freedman_merge)
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += local[i];
    }

    FreedmanResult res;
    res.L = L;
    res.horizon = horizon;
    res.n_paths = n_paths;
    for (int ai = 0; ai < na; ++ai)
        for (int bi = 0; bi < nb; ++bi) {
            FreedmanCell c;
            c.a = a_grid[ai];
            c.b = b_grid[bi];
            c.bound = std::exp(-c.a * c.a / (2.0 * (L * c.a + c.b)));
            c.hits = hits[static_cast<std::size_t>(ai) * nb + bi];
            c.empirical = static_cast<double>(c.hits) / static_cast<double>(n_paths);
            c.std_error = std::sqrt(c.empirical * (1.0 - c.empirical) / static_cast<double>(n_paths));
            c.pass = c.empirical <= c.bound + 3.0 * c.std_error;
            res.all_pass = res.all_pass && c.pass;
            res.cells.push_back(c);
        }
    return res;
}

LilResult lil_ratio(const PartitionTree& t, const Smartingale& f, const MeasureTree& m, double r,
                    const std::vector<int>& depth_grid, long long n_points, std::uint64_t seed,
                    bool parallel) {
    if (!(r > 0.0)) throw std::invalid_argument("lil_ratio: r must be positive");
    if (n_points < 1) throw std::invalid_argument("lil_ratio: need at least one point");
    const std::vector<int> grid = checked_grid(t, depth_grid, "lil_ratio");
    const int deepest = grid.back();
    const int ng = static_cast<int>(grid.size());

    LilResult res;
    res.depths = grid;
    res.r = r;
    res.n_points = n_points;
    res.ratios.assign(grid.size(), std::vector<double>(static_cast<std::size_t>(n_points), kNaN));
    res.skipped.assign(grid.size(), 0);

    // square function per grid depth, one value per atom of that depth
    std::vector<LevelValues> sq(grid.size());
    for (int gi = 0; gi < ng; ++gi) sq[gi] = square_function(t, f, grid[gi], m);

    std::vector<long long> skipped(grid.size(), 0);
#pragma omp parallel if (parallel)
    {
        std::vector<long long> local_skip(grid.size(), 0);
        std::vector<double> cum;
        double x[8];
#pragma omp for schedule(static)
        for (long long p = 0; p < n_points; ++p) {
            std::mt19937_64 rng = engine_for(seed, static_cast<std::uint64_t>(p));
            const std::size_t leaf = sample_atom(t, m, deepest, rng);
            atom_center(t, deepest, leaf, x);
            cumulative_diffs(t, f, deepest, leaf, x, cum);
            for (int gi = 0; gi < ng; ++gi) {
                const int n = grid[gi];
                const double s2 = sq[gi].v[leaf >> (deepest - n)];
                if (!loglog_defined(s2)) {
                    ++local_skip[gi];
                    continue;
                }
                const double fn = cum[static_cast<std::size_t>(f.step_index_at(n) + 1)];
                res.ratios[gi][static_cast<std::size_t>(p)] =
                    fn / std::sqrt(r * s2 * std::log(std::log(s2)));
            }
        }
#pragma omp critical(lil_merge)
        for (std::size_t gi = 0; gi < local_skip.size(); ++gi) skipped[gi] += local_skip[gi];
    }

    res.skipped = skipped;
    for (int gi = 0; gi < ng; ++gi) {
        res.p50.push_back(percentile(res.ratios[gi], 0.50));
        res.p99.push_back(percentile(res.ratios[gi], 0.99));
    }
    return res;
}

SquareComparisonResult square_comparison(const PartitionTree& t, const Smartingale& f,
                                         const MeasureTree& m, const std::vector<int>& depths,
                                         long long n_points, std::uint64_t seed, bool parallel) {
    const std::vector<int> grid = checked_grid(t, depths, "square_comparison");
    const int deepest = grid.back();

    SquareComparisonResult res;
    res.depths = grid;
    res.n_points = n_points;

    const MartingaleView mv = associated_martingale(t, f, deepest, m);

    for (int n : grid) {
        const LevelValues s2 = square_function(t, f, n, m);
        const LevelValues sm2 = martingale_square_function(t, mv, n, m);
        double cmax = 0.0;
        long long skip = 0;
        if (n_points <= 0) {
            const long long cells = static_cast<long long>(t.level_size(n));
#pragma omp parallel for schedule(static) reduction(max : cmax) reduction(+ : skip) \
    if (parallel)
            for (long long i = 0; i < cells; ++i) {
                const double denom = s2.v[static_cast<std::size_t>(i)];
                if (denom <= 0.0) {
                    ++skip;
                    continue;
                }
                cmax = std::max(cmax, sm2.v[static_cast<std::size_t>(i)] / denom);
            }
        } else {
#pragma omp parallel for schedule(static) reduction(max : cmax) reduction(+ : skip) \
    if (parallel)
            for (long long p = 0; p < n_points; ++p) {
                std::mt19937_64 rng = engine_for(seed, static_cast<std::uint64_t>(p));
                const std::size_t leaf = sample_atom(t, m, deepest, rng);
                const std::size_t i = leaf >> (deepest - n);
                const double denom = s2.v[i];
                if (denom <= 0.0) {
                    ++skip;
                    continue;
                }
                cmax = std::max(cmax, sm2.v[i] / denom);
            }
        }
        res.c_emp.push_back(cmax);
        res.skipped.push_back(skip);
    }
    return res;
}

StoppingResult stopping_inclusion(const PartitionTree& t, const Smartingale& f,
                                  const MeasureTree& m, const std::vector<double>& a_grid,
                                  long long n_points, std::uint64_t seed, bool parallel) {
    if (a_grid.empty()) throw std::invalid_argument("stopping_inclusion: empty level grid");
    for (double a : a_grid)
        if (!(a > 0.0))
            throw std::invalid_argument("stopping_inclusion: levels a must be positive");
    if (n_points < 1) throw std::invalid_argument("stopping_inclusion: need at least one point");

    const int N = t.depth();
    const int na = static_cast<int>(a_grid.size());
    const MartingaleView mv = associated_martingale(t, f, N, m);
    const double beta = f.space.c3(t.box(0, 0)) / 2.0;

    StoppingResult res;
    res.a_grid = a_grid;
    res.beta = beta;
    res.n_points = n_points;
    std::vector<long long> violations(a_grid.size(), 0), triggered(a_grid.size(), 0);
    double fitted = 0.0;

#pragma omp parallel if (parallel)
    {
        std::vector<long long> lviol(a_grid.size(), 0), ltrig(a_grid.size(), 0);
        double lfit = 0.0;
        std::vector<double> cum, grad;
        std::vector<char> hit(a_grid.size());
        double x[8];
#pragma omp for schedule(static)
        for (long long p = 0; p < n_points; ++p) {
            std::mt19937_64 rng = engine_for(seed, static_cast<std::uint64_t>(p));
            const std::size_t leaf = sample_atom(t, m, N, rng);
            atom_center(t, N, leaf, x);
            cumulative_diffs(t, f, N, leaf, x, cum, &grad);
            std::fill(hit.begin(), hit.end(), 0);
            double run_max_M = -std::numeric_limits<double>::infinity();
            for (int n = 0; n <= N; ++n) {
                const std::size_t idx = leaf >> (N - n);
                run_max_M = std::max(run_max_M, mv.values[static_cast<std::size_t>(n)].v[idx]);
                const int si = f.step_index_at(n);
                const double fn = cum[static_cast<std::size_t>(si + 1)];
                double g2 = 0.0;
                for (int a = 0; a < t.dim(); ++a) {
                    const double ga = grad[static_cast<std::size_t>(si + 1) * t.dim() + a];
                    g2 += ga * ga;
                }
                lfit = std::max(lfit, std::sqrt(g2) * t.diam(n, idx) / f.bound_L);
                for (int ai = 0; ai < na; ++ai) {
                    if (hit[ai] || fn < a_grid[ai]) continue;
                    hit[ai] = 1;
                    ++ltrig[ai];
                    // the running maximum only grows, so the first passage
                    // decides the inclusion for every later level as well
                    if (run_max_M < beta * a_grid[ai]) ++lviol[ai];
                }
            }
        }
#pragma omp critical(stopping_merge)
        {
            for (int ai = 0; ai < na; ++ai) {
                violations[ai] += lviol[ai];
                triggered[ai] += ltrig[ai];
            }
            fitted = std::max(fitted, lfit);
        }
    }

    res.violations = violations;
    res.triggered = triggered;
    res.fitted_K = fitted;
    return res;
}

VariationResult variation_ratio(const PartitionTree& t, const Smartingale& f,
                                const TiltedMeasure& tm, const std::vector<int>& depth_grid,
                                long long n_points, std::uint64_t seed, bool parallel,
                                double comparability) {
    if (n_points < 1) throw std::invalid_argument("variation_ratio: need at least one point");
    if (!(comparability > 0.0))
        throw std::invalid_argument("variation_ratio: comparability constant must be positive");
    if (tm.tilted.steps != f.steps || tm.perturbations.size() != f.steps.size())
        throw std::invalid_argument("variation_ratio: tilted measure built from a different input");
    const std::vector<int> grid = checked_grid(t, depth_grid, "variation_ratio");
    const int deepest = grid.back();
    const int ng = static_cast<int>(grid.size());

    VariationResult res;
    res.depths = grid;
    res.lambda = tm.lambda;
    res.threshold = tm.lambda / (2.0 * comparability);
    res.n_points = n_points;
    res.ratios.assign(grid.size(), std::vector<double>(static_cast<std::size_t>(n_points), kNaN));
    res.skipped.assign(grid.size(), 0);

    // conditional expectations per active level, one pass each over the tree
    const std::size_t nsteps_used =
        static_cast<std::size_t>(f.step_index_at(deepest) + 1); // steps <= deepest
    std::vector<LevelValues> ce_abs(nsteps_used), ce_p(nsteps_used);
    for (std::size_t si = 0; si < nsteps_used; ++si) {
        ce_abs[si] =
            abs_conditional_expectation(t, f.space, f.diffs[si], f.steps[si], f.base, 8, parallel);
        ce_p[si] =
            conditional_expectation(t, f.space, tm.perturbations[si], f.steps[si], f.base, parallel);
    }

    std::vector<long long> skipped(grid.size(), 0);
    long long above_deep = 0, above_quarter = 0;
    double max_resid = 0.0;
    long long mono_bad = 0;
    const std::size_t quarter = std::max<std::size_t>(1, (grid.size() + 3) / 4);

#pragma omp parallel if (parallel)
    {
        std::vector<long long> lskip(grid.size(), 0);
        long long ldeep = 0, lquarter = 0, lmono = 0;
        double lresid = 0.0;
        std::vector<double> cum_f, cum_ft, cum_v, cum_pce;
        double x[8];
#pragma omp for schedule(static)
        for (long long p = 0; p < n_points; ++p) {
            std::mt19937_64 rng = engine_for(seed, static_cast<std::uint64_t>(p));
            const std::size_t leaf = sample_atom(t, tm.measure, deepest, rng);
            atom_center(t, deepest, leaf, x);
            cumulative_diffs(t, f, deepest, leaf, x, cum_f);
            cumulative_diffs(t, tm.tilted, deepest, leaf, x, cum_ft);
            cum_v.assign(nsteps_used + 1, 0.0);
            cum_pce.assign(nsteps_used + 1, 0.0);
            for (std::size_t si = 0; si < nsteps_used; ++si) {
                const std::size_t idx = leaf >> (deepest - f.steps[si]);
                cum_v[si + 1] = cum_v[si] + ce_abs[si].v[idx];
                cum_pce[si + 1] = cum_pce[si] + ce_p[si].v[idx];
            }

            double prev_v = 0.0;
            bool quarter_ok = true;
            for (int gi = 0; gi < ng; ++gi) {
                const int si = f.step_index_at(grid[gi]);
                const double V = cum_v[static_cast<std::size_t>(si + 1)];
                if (V < prev_v) ++lmono;
                prev_v = V;
                const bool in_quarter = static_cast<std::size_t>(gi) + quarter >= grid.size();
                if (!(V > 0.0)) {
                    ++lskip[gi];
                    if (in_quarter) quarter_ok = false;
                    continue;
                }
                const double fn = cum_f[static_cast<std::size_t>(si + 1)];
                const double ftn = cum_ft[static_cast<std::size_t>(si + 1)];
                const double ratio = fn / V;
                res.ratios[gi][static_cast<std::size_t>(p)] = ratio;
                const double resid = std::abs(
                    ratio - (tm.lambda * cum_pce[static_cast<std::size_t>(si + 1)] + ftn) / V);
                lresid = std::max(lresid, resid);
                if (in_quarter && !(ratio >= res.threshold)) quarter_ok = false;
                if (gi == ng - 1 && ratio >= res.threshold) ++ldeep;
            }
            if (quarter_ok) ++lquarter;
        }
#pragma omp critical(variation_merge)
        {
            for (std::size_t gi = 0; gi < lskip.size(); ++gi) skipped[gi] += lskip[gi];
            above_deep += ldeep;
            above_quarter += lquarter;
            mono_bad += lmono;
            max_resid = std::max(max_resid, lresid);
        }
    }

    res.skipped = skipped;
    res.frac_above_deepest = static_cast<double>(above_deep) / static_cast<double>(n_points);
    res.frac_above_last_quarter =
        static_cast<double>(above_quarter) / static_cast<double>(n_points);
    res.max_identity_residual = max_resid;
    res.monotone_ok = mono_bad == 0;
    return res;
}

std::vector<SurvivorSet> variation_survivors(const PartitionTree& t, const Smartingale& f,
                                             const std::vector<int>& levels, double threshold,
                                             bool parallel) {
    const std::vector<int> grid = checked_grid(t, levels, "variation_survivors");
    const int deepest = grid.back();
    const int si_max = f.step_index_at(deepest);
    std::vector<LevelValues> ce_abs(static_cast<std::size_t>(si_max + 1));
    for (int si = 0; si <= si_max; ++si)
        ce_abs[static_cast<std::size_t>(si)] =
            abs_conditional_expectation(t, f.space, f.diffs[si], f.steps[si], f.base, 8, parallel);

    std::vector<SurvivorSet> out;
    for (int n : grid) {
        SurvivorSet s;
        s.level = n;
        s.threshold = threshold;
        const long long cells = static_cast<long long>(t.level_size(n));
        std::vector<char> keep(static_cast<std::size_t>(cells), 0);
        const int si_n = f.step_index_at(n);
#pragma omp parallel for schedule(static) if (parallel)
        for (long long i = 0; i < cells; ++i) {
            const std::size_t idx = static_cast<std::size_t>(i);
            double V = 0.0;
            for (int si = 0; si <= si_n; ++si)
                V += ce_abs[static_cast<std::size_t>(si)].v[idx >> (n - f.steps[si])];
            if (!(V > 0.0)) continue;
            double x[8];
            atom_center(t, n, idx, x);
            double fn = 0.0;
            for (int si = 0; si <= si_n; ++si)
                fn += f.diffs[si].eval_at(t, f.space, idx >> (n - f.steps[si]), x);
            if (fn / V >= threshold) keep[idx] = 1;
        }
        for (long long i = 0; i < cells; ++i)
            if (keep[static_cast<std::size_t>(i)]) s.atoms.push_back(static_cast<std::size_t>(i));
        out.push_back(std::move(s));
    }
    return out;
}

BoxDimensionFit box_dimension(const std::vector<SurvivorSet>& survivors, const PartitionTree& t) {
    if (survivors.size() < 3)
        throw std::invalid_argument("box_dimension: need at least three levels");
    std::vector<double> x, y;
    int prev_level = -1;
    for (const SurvivorSet& s : survivors) {
        if (s.level <= prev_level)
            throw std::invalid_argument("box_dimension: levels must be increasing");
        prev_level = s.level;
        if (s.level < 0 || s.level > t.depth())
            throw std::invalid_argument("box_dimension: level outside the tree");
        if (s.atoms.empty())
            throw std::invalid_argument("box_dimension: empty survivor level");
        x.push_back(std::log(1.0 / t.max_diam(s.level)));
        y.push_back(std::log(static_cast<double>(s.atoms.size())));
    }
    const OlsFit fit = ols_slope(x, y);
    BoxDimensionFit out;
    out.slope = fit.slope;
    out.std_error = fit.std_error;
    out.levels = static_cast<int>(survivors.size());
    return out;
}

} // namespace smartlab
