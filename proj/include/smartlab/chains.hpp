#pragma once

// Nested chains of atoms — one atom per level, each a child of its
// predecessor — together with the greedy mass-halving decomposition into
// "fat" segments (every atom of a segment keeps at least half the mass of
// the segment's first atom) and the geometric diameter-decay constant that
// controls sums of inverse diameters along such a decomposition.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"

namespace smartlab {

// A maximal nested sequence of atoms: atoms[n] is the index (within level n)
// of the chain's atom at level n, and atoms[n+1] is a child of atoms[n].
// atoms[0] == 0 is the root.
struct FullChain {
    std::vector<std::size_t> atoms;

    std::size_t depth() const { return atoms.empty() ? 0 : atoms.size() - 1; }
};

// Chain of atoms containing the point x, from the root down to the deepest
// level of the tree.  Throws std::invalid_argument if x lies outside the
// domain.
FullChain full_chain(const PartitionTree& t, const double* x);

// Chain through the ancestors of atom (level, idx), ending at that atom.
FullChain full_chain(const PartitionTree& t, int level, std::size_t idx);

struct ChainAtom {
    int level = 0;
    std::size_t index = 0;  // index within the level
    std::uint64_t id = 0;   // heap id (1-rooted breadth-first)
    double mass = 0.0;      // under the measure the decomposition used
    double diam = 0.0;      // Euclidean diameter of the atom's box
};

// Greedy decomposition of a chain: a segment starts at position s, and the
// next segment starts at the first later position whose mass drops strictly
// below mass(s)/2.  Consequences kept as invariants (and tested):
//   - segments tile the chain,
//   - within a segment every mass lies in [mass(first)/2, mass(first)],
//   - first masses decay geometrically (factor < 1/2) across segments.
struct FatChainDecomposition {
    std::vector<ChainAtom> atoms;     // one entry per chain position
    std::vector<std::size_t> starts;  // position opening each segment; starts[0] == 0

    std::size_t segments() const { return starts.size(); }

    // Inclusive position range [first, last] of segment j.
    std::pair<std::size_t, std::size_t> segment_range(std::size_t j) const;

    // First atom of segment j: the one of largest mass and diameter.
    const ChainAtom& largest(std::size_t j) const { return atoms[starts[j]]; }
    // Last atom of segment j: the one of smallest mass and diameter.
    const ChainAtom& smallest(std::size_t j) const { return atoms[segment_range(j).second]; }
};

// Decompose a nonempty chain under the measure m (std::invalid_argument if
// the chain is empty, std::logic_error if a chain atom has zero mass, since
// the halving rule is undefined there).
FatChainDecomposition decompose_fat(const PartitionTree& t, const FullChain& chain,
                                    const MeasureTree& m);

struct DiamDecayReport {
    double c_decay = 0.0;          // max_l diam(largest_l) * sum_{j<=l} 1/diam(smallest_j)
    std::size_t worst_segment = 0; // segment attaining the max
    double ceiling = 0.0;
    bool ok = true;                // c_decay <= ceiling
};

// Empirical constant of the diameter-decay inequality over the decomposition:
// for each segment l, the diameter of its largest atom times the sum of
// inverse diameters of the smallest atoms of segments 0..l.  Bounded for
// splitting rules whose cells stay comparable in shape; the ceiling flags
// pathologies.
DiamDecayReport check_diam_decay(const FatChainDecomposition& d, double ceiling = 32.0);

// CSV dump, one row per chain atom: "segment,atom-id,depth,mass,diam"
// (atom-id is the heap id; doubles use max round-trip precision).
std::string decomposition_csv(const FatChainDecomposition& d);

} // namespace smartlab
