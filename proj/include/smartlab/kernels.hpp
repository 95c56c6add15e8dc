#pragma once

#include <cstddef>
#include <vector>

#include "smartlab/partition.hpp"
#include "smartlab/quadrature.hpp"

namespace smartlab::kernels {

// Per-cell quadrature kernel. For every atom ("cell") of the given level the
// integrand callback is sampled on a tensor Gauss-Legendre grid and the
// weighted sums land in out[cell * nvals + j]. The callback signature is
//   void f(std::size_t cell, const double* x, double* vals)
// and must write nvals values for the node x; weights carry raw Lebesgue
// cell volume. The functor is copied once per worker, so it may keep
// mutable per-cell caches (for example the current atom's basis). The
// serial variant is the reference implementation; the omp variant
// distributes cells over threads and produces bitwise identical results
// because each cell's arithmetic is unchanged.

template <class F>
inline void one_cell_integral(const PartitionTree& t, int level, std::size_t cell, const Quad1D& q,
                              int nvals, double* out, double* scratch, F&& f) {
    for (int j = 0; j < nvals; ++j) out[j] = 0.0;
    for_each_node(t.lo(level, cell), t.hi(level, cell), t.dim(), q, [&](const double* x, double w) {
        f(cell, x, scratch);
        for (int j = 0; j < nvals; ++j) out[j] += w * scratch[j];
    });
}

template <class F>
void cell_integrals_serial(const PartitionTree& t, int level, const Quad1D& q, int nvals,
                           double* out, F&& f) {
    const std::size_t n = t.level_size(level);
    std::vector<double> scratch(nvals);
    auto fn = f;
    for (std::size_t c = 0; c < n; ++c)
        one_cell_integral(t, level, c, q, nvals, out + c * nvals, scratch.data(), fn);
}

template <class F>
void cell_integrals_omp(const PartitionTree& t, int level, const Quad1D& q, int nvals,
                        double* out, F&& f) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.level_size(level));
#pragma omp parallel
    {
        std::vector<double> scratch(nvals);
        auto fn = f;
#pragma omp for schedule(static)
        for (std::ptrdiff_t c = 0; c < n; ++c)
            one_cell_integral(t, level, static_cast<std::size_t>(c), q, nvals,
                              out + static_cast<std::size_t>(c) * nvals, scratch.data(), fn);
    }
}

template <class F>
void cell_integrals(const PartitionTree& t, int level, const Quad1D& q, int nvals, double* out,
                    bool parallel, F&& f) {
    if (parallel)
        cell_integrals_omp(t, level, q, nvals, out, f);
    else
        cell_integrals_serial(t, level, q, nvals, out, f);
}

// Sum blocks of 2^(from - to) consecutive entries: values attached to atoms
// at level `from` aggregate to their ancestors at level `to`. Exact for
// additive quantities because descendants occupy contiguous index ranges.
void aggregate_to_level(const std::vector<double>& vals, int nvals, int from, int to,
                        std::vector<double>& out);

// Pyramid of aggregates for every level 0..from (index by level).
std::vector<std::vector<double>> aggregate_all_levels(const std::vector<double>& vals, int nvals,
                                                      int from);

// Copy per-atom values at level `from` onto every descendant at level
// `to` >= `from` (pointwise lift of a piecewise-constant function).
std::vector<double> lift_values(const std::vector<double>& v, int from, int to);

} // namespace smartlab::kernels
