#pragma once

#include <cstdint>
#include <vector>

#include "smartlab/geometry.hpp"
#include "smartlab/partition.hpp"

namespace smartlab {

// The local polynomial space S attached to every atom. Two kinds:
//   total_degree: all polynomials of total degree <= degree in dim variables;
//                 contains constants, the reference weight g is identically 1.
//   span_affine:  the one-dimensional span of a fixed affine g; g must be
//                 positive on the domain of interest (range inside (0, 1]).
// S2 denotes span{u * v : u, v in S}: total degree 2r resp. span{g^2}.
class PolySpace {
public:
    enum class Kind { total_degree, span_affine };

    static PolySpace total_degree(int dim, int degree);
    // g(x) = coef[0] + sum_a coef[1 + a] * x_a
    static PolySpace span_affine(std::vector<double> g_coef);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    int degree() const { return degree_; }
    bool contains_constants() const { return kind_ == Kind::total_degree; }

    int dim_s() const { return static_cast<int>(multi_s_.size()); }
    int dim_s2() const { return static_cast<int>(multi_s2_.size()); }
    int basis_size(bool squared) const { return squared ? dim_s2() : dim_s(); }

    // Quadrature nodes per axis that integrate products of two S2 elements
    // exactly (degree up to 4r).
    int quad_points() const;

    double eval_g(const double* x) const;
    // min and max of g over a box (affine: attained at corners)
    std::pair<double, double> g_range(const Box& b) const;
    double c3(const Box& domain) const { return g_range(domain).first; }
    const std::vector<double>& g_coef() const { return g_coef_; }

    const std::vector<std::vector<int>>& multi_indices(bool squared) const {
        return squared ? multi_s2_ : multi_s_;
    }

private:
    Kind kind_ = Kind::total_degree;
    int dim_ = 1;
    int degree_ = 0;
    std::vector<double> g_coef_;
    std::vector<std::vector<int>> multi_s_;
    std::vector<std::vector<int>> multi_s2_;
};

// Basis of S (or S2) on one box, orthonormal with respect to raw Lebesgue
// measure on that box. total_degree: tensorized shifted Legendre divided by
// sqrt(volume); span_affine: g / ||g||_L2(box).
class LocalBasis {
public:
    LocalBasis(const PolySpace& space, const Box& box, bool squared = false);
    LocalBasis(const PolySpace& space, const double* lo, const double* hi, bool squared = false);

    int size() const { return size_; }
    int dim() const { return dim_; }

    void eval(const double* x, double* out) const;            // out[size]
    void grad(const double* x, double* out) const;            // out[size * dim], row-major
    double eval_one(int j, const double* x) const;
    double eval_combo(const double* coef, const double* x) const;

private:
    const PolySpace* space_;
    bool squared_;
    int dim_;
    int size_;
    double lo_[8];
    double side_[8];
    double scale_;   // vol^{-1/2} (total_degree) or 1/||g^power|| (span_affine)
};

// Piecewise element of S (or S2): one coefficient vector per atom of the
// given level, in that atom's LocalBasis.
struct PiecewisePoly {
    int level = 0;
    int ncoef = 0;
    bool squared = false;
    std::vector<double> coef; // level_size(level) * ncoef

    static PiecewisePoly zero(const PartitionTree& t, const PolySpace& s, int level, bool squared = false);

    double* at(std::size_t idx) { return coef.data() + idx * ncoef; }
    const double* at(std::size_t idx) const { return coef.data() + idx * ncoef; }

    // value at x given the index of the containing atom at this poly's level
    double eval_at(const PartitionTree& t, const PolySpace& s, std::size_t idx, const double* x) const;
    double eval(const PartitionTree& t, const PolySpace& s, const double* x) const;
};

// Grid sup-norm estimate. grid_max never exceeds the true sup and is at
// least (1 - delta) of it, with delta = dim * degree^2 / (pts_per_axis - 1)
// from the Markov brothers inequality applied per axis. upper = grid_max /
// (1 - delta) bounds the true sup from above.
struct SupNormEstimate {
    double grid_max = 0.0;
    double upper = 0.0;
    double delta = 0.0;
    int pts_per_axis = 0;
};
SupNormEstimate sup_norm(const PolySpace& space, const Box& box, const double* coef,
                         bool squared = false, int pts_per_axis = 0);

// Empirical per-function diagnostics behind the inequality constants: sup
// norm, Lipschitz constant times diameter over sup, and the relative measure
// of {|f| >= c1 * sup}.
struct FunctionStats {
    double sup = 0.0;
    double lip_diam_over_sup = 0.0;
    double level_set_fraction = 0.0;
};
FunctionStats function_stats(const PolySpace& space, const Box& box, const double* coef,
                             double c1, int grid = 65);

// Worst constants observed over random coefficient draws on random boxes:
//   c1, c2: measure lower bound mu(|f| >= c1 ||f||) >= c2 mu(A)
//   markov: Lip(f) * diam(A) / ||f||
//   product: ||f|| * ||u||_L1 / ||f u||_L1 for independent f, u from S
struct PolyConstants {
    double c1 = 0.5;
    double c2 = 1.0;
    double markov = 0.0;
    double product = 1.0;
    int samples = 0;
};
PolyConstants estimate_constants(const PolySpace& space, int n_samples, std::uint64_t seed,
                                 int grid = 65);

// Exact expansion of the parent-box S (or S2) basis in the child-box basis:
// row i holds the child-basis coefficients of parent basis element i.
// Requires child inside parent.
std::vector<double> expansion_matrix(const PolySpace& space, const Box& parent, const Box& child,
                                     bool squared = false);

// Rewrite f on the finer level's atoms (exact: restriction stays in the space).
PiecewisePoly refine(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                     int to_level);

// Pointwise square of an S-valued piecewise polynomial as an S2-valued one (exact).
PiecewisePoly square_poly(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f);

} // namespace smartlab
