#pragma once

#include <cassert>
#include <vector>

namespace smartlab {

// Gauss-Legendre rule on [0, 1]; n nodes integrate polynomials of degree
// <= 2n - 1 exactly.
struct Quad1D {
    std::vector<double> x;
    std::vector<double> w;
    int size() const { return static_cast<int>(x.size()); }
};

// Cached; the returned reference stays valid for the process lifetime.
const Quad1D& gauss_legendre_01(int n);

// Tensor-product iteration over a box. Calls f(point, weight) at every node;
// weights include the box volume, so summing f_values * weight integrates
// over the box in raw Lebesgue measure. dim <= 8.
template <class F>
inline void for_each_node(const double* lo, const double* hi, int dim, const Quad1D& q, F&& f) {
    assert(dim >= 1 && dim <= 8);
    const int n = q.size();
    double scale = 1.0;
    for (int a = 0; a < dim; ++a) scale *= hi[a] - lo[a];

    int idx[8] = {0};
    double pt[8];
    for (;;) {
        double w = scale;
        for (int a = 0; a < dim; ++a) {
            pt[a] = lo[a] + (hi[a] - lo[a]) * q.x[idx[a]];
            w *= q.w[idx[a]];
        }
        f(static_cast<const double*>(pt), w);
        int a = 0;
        while (a < dim && ++idx[a] == n) {
            idx[a] = 0;
            ++a;
        }
        if (a == dim) break;
    }
}

// Raw Lebesgue integral of a scalar callback over a box.
template <class F>
inline double integrate_box(const double* lo, const double* hi, int dim, const Quad1D& q, F&& f) {
    double s = 0.0;
    for_each_node(lo, hi, dim, q, [&](const double* x, double w) { s += w * f(x); });
    return s;
}

} // namespace smartlab
