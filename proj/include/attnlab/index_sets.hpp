#pragma once

#include "attnlab/graph.hpp"

#include <vector>

namespace attnlab {

// Zero-based positions per sample.
struct SampleIndexSets {
  std::vector<int> O, Obar, R, Rbar;
};

using IndexSets = std::vector<SampleIndexSets>;

// Throws GraphMismatch when a sample's query token has no decomposition.
IndexSets index_sets(const Dataset& ds, const SccMap& decomps);

struct CyclicSplit {
  Dataset subdataset;       // reduced samples for idx_I, query token preserved
  std::vector<int> idx_I;
  std::vector<int> idx_Ibar;
  int full_n = 0;           // normaliser of the cyclic loss

  bool empty() const { return idx_I.empty(); }
};

CyclicSplit cyclic_split(const Dataset& ds, const SccMap& decomps);

}  // namespace attnlab
