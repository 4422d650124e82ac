#include "attnlab/graph.hpp"

#include <algorithm>
#include <set>

namespace attnlab {

int TokenPriorityGraph::local(TokenId t) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), t);
  return (it != nodes.end() && *it == t) ? static_cast<int>(it - nodes.begin()) : -1;
}

bool TokenPriorityGraph::has_edge(TokenId from, TokenId to) const {
  const int a = local(from), b = local(to);
  if (a < 0 || b < 0) return false;
  return std::binary_search(adj[a].begin(), adj[a].end(), b);
}

int TokenPriorityGraph::edge_count() const {
  int m = 0;
  for (const auto& a : adj) m += static_cast<int>(a.size());
  return m;
}

TokenPriorityGraph make_graph(TokenId last_token, const std::vector<std::pair<TokenId, TokenId>>& edges,
                              const std::vector<TokenId>& extra_nodes) {
  std::set<TokenId> nodes(extra_nodes.begin(), extra_nodes.end());
  for (auto [a, b] : edges) {
    nodes.insert(a);
    nodes.insert(b);
  }
  TokenPriorityGraph g;
  g.last_token = last_token;
  g.nodes.assign(nodes.begin(), nodes.end());
  g.adj.assign(g.nodes.size(), {});
  for (auto [a, b] : edges) {
    if (a == b) continue;
    g.adj[g.local(a)].push_back(g.local(b));
  }
  for (auto& a : g.adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return g;
}

TpgMap build_tpgs(const Dataset& ds) {
  std::map<TokenId, std::vector<std::pair<TokenId, TokenId>>> edges;
  std::map<TokenId, std::vector<TokenId>> nodes;
  for (const auto& s : ds.samples) {
    const TokenId k = s.query();
    auto& e = edges[k];
    auto& v = nodes[k];
    v.push_back(s.label);
    for (TokenId x : s.tokens) {
      v.push_back(x);
      if (x != s.label) e.emplace_back(s.label, x);
    }
  }
  TpgMap out;
  for (auto& [k, e] : edges) out.emplace(k, make_graph(k, e, nodes[k]));
  return out;
}

int SccDecomposition::local(TokenId t) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), t);
  return (it != nodes.end() && *it == t) ? static_cast<int>(it - nodes.begin()) : -1;
}

int SccDecomposition::component(TokenId t) const {
  const int v = local(t);
  if (v < 0) throw Error(ErrorKind::UnknownNode, "token " + std::to_string(t) + " is not in the graph");
  return comp_of[v];
}

SccDecomposition scc(const TokenPriorityGraph& g) {
  const int n = g.size();
  SccDecomposition d;
  d.nodes = g.nodes;
  d.comp_of.assign(n, -1);

  // Iterative Tarjan. Components complete in reverse topological order.
  std::vector<int> index(n, -1), low(n, 0), stack;
  std::vector<char> on_stack(n, 0);
  std::vector<std::pair<int, std::size_t>> call;  // (node, next edge)
  int counter = 0, ncomp = 0;
  for (int root = 0; root < n; ++root) {
    if (index[root] >= 0) continue;
    call.emplace_back(root, 0);
    while (!call.empty()) {
      auto& [v, e] = call.back();
      if (e == 0 && index[v] < 0) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack[v] = 1;
      }
      if (e < g.adj[v].size()) {
        const int w = g.adj[v][e++];
        if (index[w] < 0) {
          call.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        std::vector<TokenId> comp;
        int w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          d.comp_of[w] = ncomp;
          comp.push_back(g.nodes[w]);
        } while (w != v);
        std::sort(comp.begin(), comp.end());
        d.components.push_back(std::move(comp));
        ++ncomp;
      }
      const int done = v;
      call.pop_back();
      if (!call.empty()) {
        const int parent = call.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
    }
  }

  d.condensation.assign(ncomp, {});
  for (int v = 0; v < n; ++v)
    for (int w : g.adj[v])
      if (d.comp_of[v] != d.comp_of[w]) d.condensation[d.comp_of[v]].push_back(d.comp_of[w]);
  for (auto& s : d.condensation) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }

  // Successors always carry a smaller component index, so one forward pass
  // suffices for both the layering and the closure.
  d.levels.assign(ncomp, 1);
  d.reach.assign(ncomp, std::vector<bool>(ncomp, false));
  for (int c = 0; c < ncomp; ++c) {
    d.reach[c][c] = true;
    for (int s : d.condensation[c]) {
      d.levels[c] = std::max(d.levels[c], d.levels[s] + 1);
      for (int t = 0; t <= s; ++t)
        if (d.reach[s][t]) d.reach[c][t] = true;
    }
  }
  return d;
}

SccMap scc_all(const TpgMap& tpgs) {
  SccMap out;
  for (const auto& [k, g] : tpgs) out.emplace(k, scc(g));
  return out;
}

PairRelation relation(const SccDecomposition& d, TokenId i, TokenId j) {
  const int a = d.component(i), b = d.component(j);
  if (a == b) return PairRelation::SameScc;
  if (d.reach[a][b] && !d.reach[b][a]) return PairRelation::StrictPriority;
  return PairRelation::Unrelated;
}

bool is_acyclic(const SccMap& decomps) {
  return std::all_of(decomps.begin(), decomps.end(), [](const auto& kv) { return kv.second.singleton_only(); });
}

std::map<TokenId, int> priority_assignment(const SccDecomposition& d) {
  std::map<TokenId, int> m;
  for (std::size_t v = 0; v < d.nodes.size(); ++v) m[d.nodes[v]] = d.levels[d.comp_of[v]];
  return m;
}

int total_scc_count(const SccMap& decomps) {
  int c = 0;
  for (const auto& [k, d] : decomps) c += static_cast<int>(d.components.size());
  return c;
}

const char* to_string(PairRelation r) {
  switch (r) {
    case PairRelation::StrictPriority: return "strict_priority";
    case PairRelation::SameScc: return "same_scc";
    case PairRelation::Unrelated: return "unrelated";
  }
  return "unknown";
}

}  // namespace attnlab
