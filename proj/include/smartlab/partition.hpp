#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "smartlab/geometry.hpp"

namespace smartlab {

enum class SplitRule { midpoint, fixed_ratio, seeded_random };

// How an atom is cut: always along its longest axis (ties -> lowest axis
// index), at fraction `ratio` <= 1/2 from the lower end. The lower part is
// the small child and sits at child index 2*i, the larger at 2*i + 1.
struct SplitSpec {
    SplitRule rule = SplitRule::midpoint;
    double ratio = 0.5;      // fixed_ratio cut fraction
    double ratio_lo = 0.3;   // seeded_random draws the fraction from [ratio_lo, ratio_hi]
    double ratio_hi = 0.5;
    std::uint64_t seed = 0;
    double min_sibling_ratio = 1.0 / 3.0; // floor on mass(small)/mass(large)
};

struct ShapeReport {
    std::vector<double> level_max_diam;        // per level
    double min_sibling_mass_ratio = 1.0;       // over all splits
    double min_width_over_diam = 1.0;          // over all atoms
    double max_width_over_diam = 0.0;
    double min_mass_over_diam_d = 0.0;         // mass / diam^dim
    double max_mass_over_diam_d = 0.0;
    std::vector<double> distinct_mass_diam_ratios; // rounded, capped list
};

// Uniform-depth binary partition of a box. Every atom at every level splits,
// so level n holds exactly 2^n atoms stored in flat per-level arrays; the
// atom (n, i) has children (n+1, 2i) and (n+1, 2i+1), and its descendants at
// level n+t occupy the contiguous index range [i*2^t, (i+1)*2^t). Atom ids
// are heap style: id = 2^level + index.
class PartitionTree {
public:
    static PartitionTree build(const Box& domain, int depth, const SplitSpec& spec);

    int dim() const { return dim_; }
    int depth() const { return depth_; }
    const Box& domain() const { return domain_; }
    const SplitSpec& split_spec() const { return spec_; }

    std::size_t level_size(int level) const { return std::size_t{1} << level; }

    const double* lo(int level, std::size_t idx) const { return lo_[level].data() + idx * dim_; }
    const double* hi(int level, std::size_t idx) const { return hi_[level].data() + idx * dim_; }
    Box box(int level, std::size_t idx) const;

    // Lebesgue mass normalized so the root has mass 1.
    double mass(int level, std::size_t idx) const { return mass_[level][idx]; }
    double diam(int level, std::size_t idx) const { return euclid_diam(lo(level, idx), hi(level, idx), dim_); }
    double width(int level, std::size_t idx) const;
    double max_diam(int level) const { return maxdiam_[level]; }

    std::uint64_t heap_id(int level, std::size_t idx) const { return (std::uint64_t{1} << level) + idx; }
    static int id_level(std::uint64_t id);
    static std::size_t id_index(std::uint64_t id);

    // Index of the atom at `level` containing x (cells half-open, upper
    // domain face closed). Throws if x lies outside the domain.
    std::size_t locate(int level, const double* x) const;

    // Axis along which (level, idx) was split into its children.
    int split_axis(int level, std::size_t idx) const;

    ShapeReport shape_report() const;

    void serialize(std::ostream& os) const;
    static PartitionTree deserialize(std::istream& is);

private:
    PartitionTree() = default;

    int dim_ = 0;
    int depth_ = 0;
    SplitSpec spec_;
    Box domain_;
    std::vector<std::vector<double>> lo_;   // per level: 2^level * dim
    std::vector<std::vector<double>> hi_;
    std::vector<std::vector<double>> mass_; // per level: 2^level
    std::vector<double> maxdiam_;
};

} // namespace smartlab
