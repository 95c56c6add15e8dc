#include "smartlab/chains.hpp"

#include <cstdio>
#include <stdexcept>

namespace smartlab {

FullChain full_chain(const PartitionTree& t, const double* x) {
    FullChain c;
    c.atoms.resize(static_cast<std::size_t>(t.depth()) + 1);
    // one descent to the deepest level; ancestors are the suffix-shifted ids
    std::size_t idx = t.locate(t.depth(), x);
    for (int l = t.depth(); l >= 0; --l) {
        c.atoms[static_cast<std::size_t>(l)] = idx;
        idx >>= 1;
    }
    return c;
}

FullChain full_chain(const PartitionTree& t, int level, std::size_t idx) {
    if (level < 0 || level > t.depth())
        throw std::invalid_argument("full_chain: level out of range");
    if (idx >= t.level_size(level))
        throw std::invalid_argument("full_chain: atom index out of range");
    FullChain c;
    c.atoms.resize(static_cast<std::size_t>(level) + 1);
    for (int l = level; l >= 0; --l) {
        c.atoms[static_cast<std::size_t>(l)] = idx;
        idx >>= 1;
    }
    return c;
}

std::pair<std::size_t, std::size_t> FatChainDecomposition::segment_range(std::size_t j) const {
    if (j >= starts.size()) throw std::invalid_argument("segment_range: no such segment");
    const std::size_t first = starts[j];
    const std::size_t last = (j + 1 < starts.size()) ? starts[j + 1] - 1 : atoms.size() - 1;
    return {first, last};
}

FatChainDecomposition decompose_fat(const PartitionTree& t, const FullChain& chain,
                                    const MeasureTree& m) {
    if (chain.atoms.empty()) throw std::invalid_argument("decompose_fat: empty chain");

    FatChainDecomposition d;
    d.atoms.resize(chain.atoms.size());
    for (std::size_t p = 0; p < chain.atoms.size(); ++p) {
        const int level = static_cast<int>(p);
        const std::size_t idx = chain.atoms[p];
        ChainAtom& a = d.atoms[p];
        a.level = level;
        a.index = idx;
        a.id = t.heap_id(level, idx);
        a.mass = m.mass(t, level, idx);
        a.diam = t.diam(level, idx);
        if (!(a.mass > 0.0))
            throw std::logic_error("decompose_fat: zero-mass atom in the chain");
    }

    // Greedy cuts: open a new segment at the first position whose mass falls
    // strictly below half the mass at the current segment's start.
    d.starts.push_back(0);
    double head_mass = d.atoms[0].mass;
    for (std::size_t p = 1; p < d.atoms.size(); ++p) {
        if (d.atoms[p].mass < 0.5 * head_mass) {
            d.starts.push_back(p);
            head_mass = d.atoms[p].mass;
        }
    }
    return d;
}

DiamDecayReport check_diam_decay(const FatChainDecomposition& d, double ceiling) {
    DiamDecayReport r;
    r.ceiling = ceiling;
    double inv_sum = 0.0;
    for (std::size_t j = 0; j < d.segments(); ++j) {
        inv_sum += 1.0 / d.smallest(j).diam;
        const double c = d.largest(j).diam * inv_sum;
        if (c > r.c_decay) {
            r.c_decay = c;
            r.worst_segment = j;
        }
    }
    r.ok = r.c_decay <= ceiling;
    return r;
}

std::string decomposition_csv(const FatChainDecomposition& d) {
    std::string out = "segment,atom-id,depth,mass,diam\n";
    std::size_t seg = 0;
    char buf[128];
    for (std::size_t p = 0; p < d.atoms.size(); ++p) {
        if (seg + 1 < d.starts.size() && p >= d.starts[seg + 1]) ++seg;
        const ChainAtom& a = d.atoms[p];
        std::snprintf(buf, sizeof buf, "%zu,%llu,%d,%.17g,%.17g\n", seg,
                      static_cast<unsigned long long>(a.id), a.level, a.mass, a.diam);
        out += buf;
    }
    return out;
}

} // namespace smartlab
