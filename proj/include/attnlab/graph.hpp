#pragma once

#include "attnlab/dataset.hpp"

#include <map>
#include <vector>

namespace attnlab {

// G^(k): edges label -> token over the samples whose query token is k.
struct TokenPriorityGraph {
  TokenId last_token = 0;
  std::vector<TokenId> nodes;          // sorted
  std::vector<std::vector<int>> adj;   // local indices, sorted, no self-loops

  int size() const { return static_cast<int>(nodes.size()); }
  // Local index of a token, -1 when absent.
  int local(TokenId t) const;
  bool has_edge(TokenId from, TokenId to) const;
  int edge_count() const;
};

using TpgMap = std::map<TokenId, TokenPriorityGraph>;

enum class PairRelation { StrictPriority, SameScc, Unrelated };

struct SccDecomposition {
  std::vector<TokenId> nodes;                 // same order as the graph
  std::vector<int> comp_of;                   // local node -> component
  std::vector<std::vector<TokenId>> components;
  std::vector<std::vector<int>> condensation; // component DAG, sorted successors
  std::vector<int> levels;                    // component -> priority, sinks = 1
  std::vector<std::vector<bool>> reach;       // reach[a][b]: b reachable from a (reflexive)

  int local(TokenId t) const;
  int component(TokenId t) const;  // throws UnknownNode
  int level_of(TokenId t) const { return levels[component(t)]; }
  bool singleton_only() const { return components.size() == nodes.size(); }
};

using SccMap = std::map<TokenId, SccDecomposition>;

TpgMap build_tpgs(const Dataset& ds);
TokenPriorityGraph make_graph(TokenId last_token, const std::vector<std::pair<TokenId, TokenId>>& edges,
                              const std::vector<TokenId>& extra_nodes = {});
SccDecomposition scc(const TokenPriorityGraph& g);
SccMap scc_all(const TpgMap& tpgs);
// Relation of i to j; throws UnknownNode.
PairRelation relation(const SccDecomposition& d, TokenId i, TokenId j);
bool is_acyclic(const SccMap& decomps);
std::map<TokenId, int> priority_assignment(const SccDecomposition& d);
int total_scc_count(const SccMap& decomps);

const char* to_string(PairRelation r);

}  // namespace attnlab
