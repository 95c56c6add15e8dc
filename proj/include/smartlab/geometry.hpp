#pragma once

#include <cassert>
#include <cmath>
#include <vector>

namespace smartlab {

// Axis-aligned box. Cells are treated as half-open [lo, hi) on every axis
// except the upper domain face, so point location is unambiguous.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    Box() = default;
    Box(std::vector<double> lo_, std::vector<double> hi_)
        : lo(std::move(lo_)), hi(std::move(hi_)) {
        assert(lo.size() == hi.size());
    }

    static Box unit_cube(int dim) {
        return Box(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
    }

    int dim() const { return static_cast<int>(lo.size()); }

    double side(int axis) const { return hi[axis] - lo[axis]; }

    double volume() const {
        double v = 1.0;
        for (int a = 0; a < dim(); ++a) v *= side(a);
        return v;
    }

    // Euclidean diameter: length of the main diagonal.
    double diam() const {
        double s = 0.0;
        for (int a = 0; a < dim(); ++a) s += side(a) * side(a);
        return std::sqrt(s);
    }

    // Width: smallest distance between parallel supporting hyperplanes,
    // which for a box is the shortest side.
    double width() const {
        double w = side(0);
        for (int a = 1; a < dim(); ++a) w = std::min(w, side(a));
        return w;
    }

    int longest_axis() const {
        int best = 0;
        for (int a = 1; a < dim(); ++a)
            if (side(a) > side(best)) best = a;
        return best;
    }

    bool contains(const double* x) const {
        for (int a = 0; a < dim(); ++a)
            if (x[a] < lo[a] || x[a] > hi[a]) return false;
        return true;
    }

    double center(int axis) const { return 0.5 * (lo[axis] + hi[axis]); }
};

inline double euclid_diam(const double* lo, const double* hi, int dim) {
    double s = 0.0;
    for (int a = 0; a < dim; ++a) {
        const double d = hi[a] - lo[a];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace smartlab
