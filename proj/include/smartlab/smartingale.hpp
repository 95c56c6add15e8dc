#pragma once

#include <cstdint>
#include <vector>

#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"

namespace smartlab {

// How the per-atom difference coefficients are drawn (always inside the
// orthogonal complement of S(A) in S(A') + S(A'')):
//   rademacher_like - i.i.d. signs on the complement basis
//   gaussian_coeff  - i.i.d. standard normals
//   haar            - the one-dimensional complement with a random sign
//                     (requires dim S = 1; classical Haar for degree 0)
enum class DiffRule { rademacher_like, gaussian_coeff, haar };

// A sequence (f_n) of piecewise-S functions whose differences are orthogonal
// to the previous level's space under `base`: the projection of f_n onto
// level n-1 recovers f_{n-1}. Only `steps` carry nonzero differences, and
// consecutive active levels differ by at least sparsity + 1.
struct Smartingale {
    PolySpace space;
    MeasureTree base;
    double bound_L = 1.0;
    int sparsity = 0;
    std::vector<int> steps;           // active levels, increasing, >= 1
    std::vector<PiecewisePoly> diffs; // diffs[k] lives at level steps[k]

    int last_step() const { return steps.empty() ? 0 : steps.back(); }
    // index into steps of the last active level <= n, or -1 if none
    int step_index_at(int n) const;
    // f_n(x): sum of the active differences at levels <= n
    double eval(const PartitionTree& t, int n, const double* x) const;
};

Smartingale generate_smartingale(const PartitionTree& t, const PolySpace& s,
                                 const MeasureTree& base, int sparsity, double L,
                                 std::uint64_t seed, DiffRule rule, int first_level = 1,
                                 int max_level = -1);

// Max over steps, atoms at the parent level, and local S basis elements of
// |int_A (difference) * b dm|. Zero for a smartingale under m.
double verify_smartingale(const PartitionTree& t, const Smartingale& f, const MeasureTree& m,
                          bool parallel = true);

// S_n^2 = sum_{k<=n} (E_k + E_{k-1})(diff_k)^2, piecewise constant at level n.
LevelValues square_function(const PartitionTree& t, const Smartingale& f, int n,
                            const MeasureTree& m);

// The projected sequence M_n = E_n(g f_n) and its differences; a classical
// martingale whenever f is a smartingale under m (g is the space's fixed
// positive function, identically 1 for total-degree spaces).
struct MartingaleView {
    std::vector<LevelValues> values; // M_n for n = 0..max_level
    std::vector<LevelValues> diffs;  // diffs[n-1] = M_n - M_{n-1} at level n
};

MartingaleView associated_martingale(const PartitionTree& t, const Smartingale& f, int max_level,
                                     const MeasureTree& m);

// S_{M,n}^2 = sum_{k<=n} E_{k-1}|M_k - M_{k-1}|^2, piecewise constant at level n.
LevelValues martingale_square_function(const PartitionTree& t, const MartingaleView& mv, int n,
                                       const MeasureTree& m);

// Max over steps and split atoms A of
//   sup_{A''}|diff| * m(A) / (sup_{A'}|diff| * m(A'))
// where A' is the smaller child; atoms with zero difference on A' are skipped.
double sibling_bound_check(const PartitionTree& t, const Smartingale& f, const MeasureTree& m);

} // namespace smartlab
