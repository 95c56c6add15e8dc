#pragma once

// Text serialization for piecewise polynomials and smartingales, plus
// comment-tolerant loaders for the artifact files written by the pipelines
// (lines starting with '#' are metadata such as the config hash and are
// skipped when reading).

#include <iosfwd>
#include <string>

#include "smartlab/measures.hpp"
#include "smartlab/partition.hpp"
#include "smartlab/polyspace.hpp"
#include "smartlab/smartingale.hpp"

namespace smartlab {

// One header line, then one "heap-id: c0,c1,..." line per atom of the level.
void serialize_poly(std::ostream& os, const PartitionTree& t, const PiecewisePoly& p);
PiecewisePoly deserialize_poly(std::istream& is, const PartitionTree& t);

// Space, base measure, bound, sparsity, steps, then the difference blocks.
void serialize_smartingale(std::ostream& os, const PartitionTree& t, const Smartingale& f);
Smartingale deserialize_smartingale(std::istream& is, const PartitionTree& t);

// Read a pipeline artifact file, dropping '#' comment lines, and parse the
// payload with the matching deserializer.  Throw std::runtime_error when the
// file cannot be opened and std::invalid_argument on malformed content.
PartitionTree load_tree(const std::string& path);
MeasureTree load_measure(const std::string& path, const PartitionTree& t);
Smartingale load_smartingale(const std::string& path, const PartitionTree& t);

} // namespace smartlab
