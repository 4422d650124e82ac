#include "attnlab/index_sets.hpp"

namespace attnlab {

namespace {

const SccDecomposition& decomposition_for(const SccMap& decomps, TokenId k, int sample) {
  auto it = decomps.find(k);
  if (it == decomps.end())
    throw Error(ErrorKind::GraphMismatch,
                "sample " + std::to_string(sample) + " has query token " + std::to_string(k) + " without a graph");
  return it->second;
}

}  // namespace

IndexSets index_sets(const Dataset& ds, const SccMap& decomps) {
  IndexSets out(ds.samples.size());
  for (int i = 0; i < ds.n(); ++i) {
    const Sample& s = ds.samples[i];
    const SccDecomposition& d = decomposition_for(decomps, s.query(), i);
    if (d.local(s.label) < 0)
      throw Error(ErrorKind::GraphMismatch, "label of sample " + std::to_string(i) + " missing from its graph");
    const int cy = d.component(s.label);
    auto& sets = out[i];
    for (int t = 0; t < s.length(); ++t) {
      const TokenId x = s.tokens[t];
      if (x == s.label) {
        sets.O.push_back(t);
        sets.R.push_back(t);
      } else if (d.component(x) == cy) {
        sets.Obar.push_back(t);
        sets.R.push_back(t);
      } else {
        sets.Obar.push_back(t);
        sets.Rbar.push_back(t);
      }
    }
  }
  return out;
}

CyclicSplit cyclic_split(const Dataset& ds, const SccMap& decomps) {
  const IndexSets sets = index_sets(ds, decomps);
  CyclicSplit split{Dataset{ds.embedding, ds.head, {}, ds.seed}, {}, {}, ds.n()};
  for (int i = 0; i < ds.n(); ++i) {
    const auto& si = sets[i];
    if (si.R.size() == si.O.size()) {
      split.idx_Ibar.push_back(i);
      continue;
    }
    split.idx_I.push_back(i);
    const Sample& s = ds.samples[i];
    Sample r;
    r.label = s.label;
    for (int t : si.R) r.tokens.push_back(s.tokens[t]);
    if (r.tokens.back() != s.query()) r.query_override = s.query();
    split.subdataset.samples.push_back(std::move(r));
  }
  return split;
}

}  // namespace attnlab
