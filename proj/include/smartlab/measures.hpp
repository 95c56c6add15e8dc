#pragma once

#include <iosfwd>
#include <vector>

#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"

namespace smartlab {

// One value per atom of a level (conditional expectations, martingale
// values, square functions).
struct LevelValues {
    int level = 0;
    std::vector<double> v;
};

// A measure on the partition given by a piecewise-constant density with
// respect to the normalized base measure P (Lebesgue scaled so P(domain) =
// 1). The density is resolved at atoms of `resolution`; below that the
// measure is proportional to P.
class MeasureTree {
public:
    static MeasureTree lebesgue(const PartitionTree& t);
    static MeasureTree from_weights(const PartitionTree& t, int resolution, std::vector<double> weights);

    int resolution() const { return resolution_; }
    const std::vector<double>& weights() const { return weight_; }
    double weight(std::size_t cell) const { return weight_[cell]; }
    // density on any atom at level >= resolution
    double weight_at(int level, std::size_t idx) const { return weight_[idx >> (level - resolution_)]; }

    // mass of the atom (level, idx); levels above the resolution come from
    // the cached pyramid, deeper atoms scale with base mass
    double mass(const PartitionTree& t, int level, std::size_t idx) const;
    double total_mass() const { return mass_[0][0]; }
    const std::vector<double>& level_masses(int level) const { return mass_[level]; }

    void serialize(std::ostream& os) const;
    static MeasureTree deserialize(std::istream& is, const PartitionTree& t);

private:
    int resolution_ = 0;
    std::vector<double> weight_;            // 2^resolution densities wrt P
    std::vector<std::vector<double>> mass_; // levels 0..resolution
};

// Integrals of f against m over every atom of `level`.
std::vector<double> integrate_on_level(const PartitionTree& t, const PolySpace& s,
                                       const PiecewisePoly& f, int level, const MeasureTree& m,
                                       bool parallel = true);

// E_level(f) under m: piecewise constant, one value per atom.
LevelValues conditional_expectation(const PartitionTree& t, const PolySpace& s,
                                    const PiecewisePoly& f, int level, const MeasureTree& m,
                                    bool parallel = true);

// E_level(|f|) under m; the absolute value is integrated with `panels`
// composite Gauss-Legendre panels per cell and axis, so values are
// quadrature approximations, not exact.
LevelValues abs_conditional_expectation(const PartitionTree& t, const PolySpace& s,
                                        const PiecewisePoly& f, int level, const MeasureTree& m,
                                        int panels = 8, bool parallel = true);

// L2(m)-orthogonal projection of f onto piecewise-S functions at `level`.
// Per-atom Gram systems are solved by partially pivoted LU; a Gram matrix
// with 1-norm condition estimate above cond_guard raises
// ill_conditioned_error.
PiecewisePoly project(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                      int level, const MeasureTree& m, bool parallel = true,
                      double cond_guard = 1e12);

double integrate(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                 const MeasureTree& m);
double inner_product(const PartitionTree& t, const PolySpace& s, const PiecewisePoly& f,
                     const PiecewisePoly& h, const MeasureTree& m);

} // namespace smartlab
