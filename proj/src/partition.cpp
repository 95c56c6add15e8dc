#include "smartlab/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "smartlab/rng.hpp"

namespace smartlab {

namespace {

void validate_fraction(double r, const SplitSpec& spec) {
    if (!(r > 0.0) || r > 0.5)
        throw std::invalid_argument("split fraction must lie in (0, 1/2]");
    if (r / (1.0 - r) < spec.min_sibling_ratio - 1e-15)
        throw std::invalid_argument("split fraction violates the sibling mass ratio floor");
}

} // namespace

PartitionTree PartitionTree::build(const Box& domain, int depth, const SplitSpec& spec) {
    const int d = domain.dim();
    if (d < 1 || d > 8) throw std::invalid_argument("PartitionTree: dim must be in [1, 8]");
    if (depth < 0 || depth > 26) throw std::invalid_argument("PartitionTree: depth must be in [0, 26]");
    for (int a = 0; a < d; ++a)
        if (!(domain.hi[a] > domain.lo[a]))
            throw std::invalid_argument("PartitionTree: degenerate domain box");
    if (spec.rule == SplitRule::fixed_ratio) validate_fraction(spec.ratio, spec);
    if (spec.rule == SplitRule::seeded_random) {
        validate_fraction(spec.ratio_lo, spec);
        validate_fraction(spec.ratio_hi, spec);
        if (spec.ratio_lo > spec.ratio_hi)
            throw std::invalid_argument("PartitionTree: ratio_lo > ratio_hi");
    }

    PartitionTree t;
    t.dim_ = d;
    t.depth_ = depth;
    t.spec_ = spec;
    t.domain_ = domain;
    t.lo_.resize(depth + 1);
    t.hi_.resize(depth + 1);
    t.mass_.resize(depth + 1);
    t.maxdiam_.resize(depth + 1);

    t.lo_[0] = domain.lo;
    t.hi_[0] = domain.hi;
    t.mass_[0] = {1.0};

    const double root_vol = domain.volume();

    for (int l = 0; l < depth; ++l) {
        const std::size_t n = t.level_size(l);
        t.lo_[l + 1].resize(2 * n * d);
        t.hi_[l + 1].resize(2 * n * d);
        t.mass_[l + 1].resize(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* lo = t.lo(l, i);
            const double* hi = t.hi(l, i);
            int axis = 0;
            for (int a = 1; a < d; ++a)
                if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;

            double frac = 0.5;
            switch (spec.rule) {
                case SplitRule::midpoint: break;
                case SplitRule::fixed_ratio: frac = spec.ratio; break;
                case SplitRule::seeded_random: {
                    auto rng = engine_for(spec.seed, t.heap_id(l, i));
                    frac = uniform(rng, spec.ratio_lo, spec.ratio_hi);
                    break;
                }
            }
            const double cut = lo[axis] + frac * (hi[axis] - lo[axis]);

            double* lo0 = t.lo_[l + 1].data() + (2 * i) * d;
            double* hi0 = t.hi_[l + 1].data() + (2 * i) * d;
            double* lo1 = t.lo_[l + 1].data() + (2 * i + 1) * d;
            double* hi1 = t.hi_[l + 1].data() + (2 * i + 1) * d;
            for (int a = 0; a < d; ++a) {
                lo0[a] = lo[a];
                hi0[a] = hi[a];
                lo1[a] = lo[a];
                hi1[a] = hi[a];
            }
            hi0[axis] = cut;
            lo1[axis] = cut;

            double v0 = 1.0, v1 = 1.0;
            for (int a = 0; a < d; ++a) {
                v0 *= hi0[a] - lo0[a];
                v1 *= hi1[a] - lo1[a];
            }
            t.mass_[l + 1][2 * i] = v0 / root_vol;
            t.mass_[l + 1][2 * i + 1] = v1 / root_vol;
        }
    }

    for (int l = 0; l <= depth; ++l) {
        double m = 0.0;
        for (std::size_t i = 0; i < t.level_size(l); ++i) m = std::max(m, t.diam(l, i));
        t.maxdiam_[l] = m;
    }
    return t;
}

Box PartitionTree::box(int level, std::size_t idx) const {
    const double* l = lo(level, idx);
    const double* h = hi(level, idx);
    return Box(std::vector<double>(l, l + dim_), std::vector<double>(h, h + dim_));
}

double PartitionTree::width(int level, std::size_t idx) const {
    const double* l = lo(level, idx);
    const double* h = hi(level, idx);
    double w = h[0] - l[0];
    for (int a = 1; a < dim_; ++a) w = std::min(w, h[a] - l[a]);
    return w;
}

int PartitionTree::id_level(std::uint64_t id) {
    if (id == 0) throw std::invalid_argument("atom id 0 is invalid");
    int l = -1;
    while (id) {
        id >>= 1;
        ++l;
    }
    return l;
}

std::size_t PartitionTree::id_index(std::uint64_t id) {
    const int l = id_level(id);
    return id - (std::uint64_t{1} << l);
}

int PartitionTree::split_axis(int level, std::size_t idx) const {
    if (level >= depth_) throw std::invalid_argument("split_axis: leaf level has no split");
    const double* hp = hi(level, idx);
    const double* hc = hi(level + 1, 2 * idx);
    for (int a = 0; a < dim_; ++a)
        if (hc[a] != hp[a]) return a;
    throw std::logic_error("split_axis: children identical to parent");
}

std::size_t PartitionTree::locate(int level, const double* x) const {
    if (level < 0 || level > depth_) throw std::invalid_argument("locate: bad level");
    if (!domain_.contains(x)) throw std::invalid_argument("locate: point outside the domain");
    std::size_t idx = 0;
    for (int l = 0; l < level; ++l) {
        const int axis = split_axis(l, idx);
        const double cut = hi(l + 1, 2 * idx)[axis];
        // half-open cells: the cut plane belongs to the upper sibling
        idx = (x[axis] < cut) ? 2 * idx : 2 * idx + 1;
    }
    return idx;
}

ShapeReport PartitionTree::shape_report() const {
    ShapeReport r;
    r.level_max_diam = maxdiam_;
    r.min_mass_over_diam_d = mass(0, 0) / std::pow(diam(0, 0), dim_);
    r.max_mass_over_diam_d = r.min_mass_over_diam_d;
    std::set<long long> distinct;
    for (int l = 0; l <= depth_; ++l) {
        for (std::size_t i = 0; i < level_size(l); ++i) {
            const double dm = diam(l, i);
            const double wd = width(l, i) / dm;
            const double md = mass(l, i) / std::pow(dm, dim_);
            r.min_width_over_diam = std::min(r.min_width_over_diam, wd);
            r.max_width_over_diam = std::max(r.max_width_over_diam, wd);
            r.min_mass_over_diam_d = std::min(r.min_mass_over_diam_d, md);
            r.max_mass_over_diam_d = std::max(r.max_mass_over_diam_d, md);
            if (distinct.size() < 64) distinct.insert(std::llround(md * 1e9));
            if (l < depth_) {
                const double ms = mass(l + 1, 2 * i);
                const double ml = mass(l + 1, 2 * i + 1);
                r.min_sibling_mass_ratio = std::min(r.min_sibling_mass_ratio, ms / ml);
            }
        }
    }
    for (long long v : distinct) r.distinct_mass_diam_ratios.push_back(static_cast<double>(v) * 1e-9);
    return r;
}

void PartitionTree::serialize(std::ostream& os) const {
    char buf[512];
    os << "# partition-tree v1\n";
    std::snprintf(buf, sizeof buf, "# dim %d depth %d\n", dim_, depth_);
    os << buf;
    const char* rule = spec_.rule == SplitRule::midpoint     ? "midpoint"
                       : spec_.rule == SplitRule::fixed_ratio ? "fixed_ratio"
                                                              : "seeded_random";
    std::snprintf(buf, sizeof buf,
                  "# split %s ratio %.17g ratio_lo %.17g ratio_hi %.17g seed %llu min_sibling_ratio %.17g\n",
                  rule, spec_.ratio, spec_.ratio_lo, spec_.ratio_hi,
                  static_cast<unsigned long long>(spec_.seed), spec_.min_sibling_ratio);
    os << buf;
    std::uint64_t count = 0;
    for (int l = 0; l <= depth_; ++l) count += level_size(l);
    os << "# atoms " << count << "\n";
    for (int l = 0; l <= depth_; ++l) {
        for (std::size_t i = 0; i < level_size(l); ++i) {
            const std::uint64_t id = heap_id(l, i);
            os << id << ' ' << l << ' ' << (l == 0 ? 0 : id >> 1);
            for (int a = 0; a < dim_; ++a) {
                std::snprintf(buf, sizeof buf, " %.17g", lo(l, i)[a]);
                os << buf;
            }
            for (int a = 0; a < dim_; ++a) {
                std::snprintf(buf, sizeof buf, " %.17g", hi(l, i)[a]);
                os << buf;
            }
            std::snprintf(buf, sizeof buf, " %.17g\n", mass(l, i));
            os << buf;
        }
    }
}

PartitionTree PartitionTree::deserialize(std::istream& is) {
    PartitionTree t;
    std::string line;
    std::uint64_t expected_atoms = 0;
    bool have_dims = false;
    std::uint64_t seen = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            std::string key;
            ls >> key;
            if (key == "dim") {
                ls >> t.dim_;
                std::string kw;
                ls >> kw >> t.depth_;
                if (kw != "depth") throw std::runtime_error("tree parse: bad dim/depth header");
                if (t.dim_ < 1 || t.dim_ > 8 || t.depth_ < 0 || t.depth_ > 26)
                    throw std::runtime_error("tree parse: dim/depth out of range");
                t.lo_.resize(t.depth_ + 1);
                t.hi_.resize(t.depth_ + 1);
                t.mass_.resize(t.depth_ + 1);
                for (int l = 0; l <= t.depth_; ++l) {
                    t.lo_[l].resize(t.level_size(l) * t.dim_);
                    t.hi_[l].resize(t.level_size(l) * t.dim_);
                    t.mass_[l].resize(t.level_size(l));
                }
                have_dims = true;
            } else if (key == "split") {
                std::string rule, kw;
                ls >> rule;
                if (rule == "midpoint") t.spec_.rule = SplitRule::midpoint;
                else if (rule == "fixed_ratio") t.spec_.rule = SplitRule::fixed_ratio;
                else if (rule == "seeded_random") t.spec_.rule = SplitRule::seeded_random;
                else throw std::runtime_error("tree parse: unknown split rule");
                unsigned long long seed = 0;
                ls >> kw >> t.spec_.ratio >> kw >> t.spec_.ratio_lo >> kw >> t.spec_.ratio_hi >> kw >> seed >> kw >>
                    t.spec_.min_sibling_ratio;
                t.spec_.seed = seed;
            } else if (key == "atoms") {
                ls >> expected_atoms;
            }
            continue;
        }
        if (!have_dims) throw std::runtime_error("tree parse: atom row before header");
        std::istringstream ls(line);
        std::uint64_t id = 0, parent = 0;
        int lvl = 0;
        ls >> id >> lvl >> parent;
        if (!ls) throw std::runtime_error("tree parse: bad atom row");
        if (lvl != id_level(id)) throw std::runtime_error("tree parse: id does not match depth");
        if (lvl > 0 && parent != id >> 1) throw std::runtime_error("tree parse: bad parent id");
        const std::size_t idx = id_index(id);
        for (int a = 0; a < t.dim_; ++a) ls >> t.lo_[lvl][idx * t.dim_ + a];
        for (int a = 0; a < t.dim_; ++a) ls >> t.hi_[lvl][idx * t.dim_ + a];
        ls >> t.mass_[lvl][idx];
        if (!ls) throw std::runtime_error("tree parse: truncated atom row");
        ++seen;
    }
    if (!have_dims) throw std::runtime_error("tree parse: missing header");
    if (expected_atoms && seen != expected_atoms) throw std::runtime_error("tree parse: atom count mismatch");
    std::uint64_t want = 0;
    for (int l = 0; l <= t.depth_; ++l) want += t.level_size(l);
    if (seen != want) throw std::runtime_error("tree parse: incomplete tree");
    t.domain_ = t.box(0, 0);
    t.maxdiam_.resize(t.depth_ + 1);
    for (int l = 0; l <= t.depth_; ++l) {
        double m = 0.0;
        for (std::size_t i = 0; i < t.level_size(l); ++i) m = std::max(m, t.diam(l, i));
        t.maxdiam_[l] = m;
    }
    return t;
}

} // namespace smartlab
