// Helpers shared by the unit, property and acceptance binaries: random small
// HINs, random legal episodes and brute-force recounts that do not go through
// the plan builder.
#pragma once

#include "rlhgnn/agg_plan.hpp"
#include "rlhgnn/hgnn.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace testsupport {

using namespace rlhgnn;

struct RandomHinOptions {
  int max_nodes = 50;
  int max_types = 4;
  int max_relations = 8;
  int max_attr_dim = 5;
  double edge_density = 0.15;
};

inline HinGraph random_hin(std::uint64_t seed, const RandomHinOptions& o = {}) {
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  HinSchema s;
  const int nt = uni(1, o.max_types);
  for (int t = 0; t < nt; ++t) {
    s.node_types.push_back("T" + std::to_string(t));
    s.attribute_dims.push_back(uni(1, o.max_attr_dim));
  }
  const int nr = uni(1, o.max_relations);
  for (int r = 0; r < nr; ++r) {
    const TypeId a = uni(0, nt - 1), b = uni(0, nt - 1);
    s.relations.push_back({"r" + std::to_string(r), a, b});
  }
  s.target_type = 0;
  s.num_classes = uni(2, 4);
  std::vector<int> counts(nt);
  int budget = o.max_nodes;
  for (int t = 0; t < nt; ++t) {
    const int remaining_types = nt - t - 1;
    const int hi = std::max(2, (budget - 2 * remaining_types) / (t == nt - 1 ? 1 : 2));
    counts[t] = uni(2, hi);
    budget -= counts[t];
  }
  std::vector<Matrix> attrs(nt);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < nt; ++t) {
    attrs[t].resize(counts[t], s.attribute_dims[t]);
    for (Eigen::Index i = 0; i < attrs[t].size(); ++i) attrs[t].data()[i] = normal(rng);
  }
  std::bernoulli_distribution edge(o.edge_density), dup(0.1);
  std::vector<std::vector<Edge>> edges(nr);
  for (int r = 0; r < nr; ++r)
    for (int i = 0; i < counts[s.relations[r].src]; ++i)
      for (int j = 0; j < counts[s.relations[r].dst]; ++j)
        if (edge(rng)) {
          edges[r].emplace_back(i, j);
          if (dup(rng)) edges[r].emplace_back(i, j);  // multi-edge
        }
  std::vector<int> labels(counts[0]);
  for (auto& y : labels) y = uni(0, s.num_classes - 1);
  return make_hin(std::move(s), std::move(counts), std::move(attrs), std::move(edges), std::move(labels));
}

/// Each target node takes up to T random legal actions (Stop included);
/// dead ends stop the episode with the path unchanged.
inline std::vector<Episode> random_legal_episodes(const HinGraph& g, int T, std::uint64_t seed,
                                                  int fanout_cap = 0, bool allow_stop = true) {
  std::mt19937_64 rng(seed);
  const auto& s = g.schema();
  std::vector<Episode> out;
  const ExpandOptions xo{fanout_cap, seed};
  for (int i = 0; i < g.node_count(s.target_type); ++i) {
    const NodeRef start{s.target_type, i};
    Episode e{start, MetaPath{s.target_type, {}}, Frontier::at(start)};
    for (int t = 0; t < T; ++t) {
      auto legal = valid_actions(s, e.trace.type, false).actions();
      if (!allow_stop) legal.pop_back();
      if (legal.empty()) break;
      const Action a = legal[std::uniform_int_distribution<std::size_t>(0, legal.size() - 1)(rng)];
      if (a.is_stop(s)) break;
      Frontier f = expand_frontier(g, e.trace, a.relation(), xo);
      if (f.reached.empty()) break;
      e.path = extend_path(e.path, a.relation(), s);
      e.trace = std::move(f);
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Every node sequence following `path` from `start`, by depth-first search over
/// the graph's adjacency (multi-edges give repeated sequences).
inline std::vector<std::vector<LocalId>> enumerate_instances(const HinGraph& g, NodeRef start,
                                                             const MetaPath& path) {
  std::vector<std::vector<LocalId>> out;
  std::vector<LocalId> cur{start.local};
  const auto types = path.type_sequence(g.schema());
  auto dfs = [&](auto&& self, std::size_t k) -> void {
    if (k == path.length()) {
      out.push_back(cur);
      return;
    }
    for (LocalId c : g.neighbors({types[k], cur.back()}, path.relations[k])) {
      cur.push_back(c);
      self(self, k + 1);
      cur.pop_back();
    }
  };
  dfs(dfs, 0);
  return out;
}

/// Instances realised by a trace, enumerated edge by edge from the trace lists.
inline std::size_t trace_instances(const Episode& e) {
  const int L = static_cast<int>(e.path.length());
  if (L == 0) return 0;
  std::size_t n = 0;
  auto dfs = [&](auto&& self, int k, LocalId node) -> void {
    if (k == L) {
      ++n;
      return;
    }
    for (const auto& edge : e.trace.steps[k])
      if (edge.parent == node) self(self, k + 1, edge.child);
  };
  dfs(dfs, 0, e.start.local);
  return n;
}

inline std::size_t naive_recount(const std::vector<Episode>& eps) {
  std::size_t n = 0;
  for (const auto& e : eps) n += trace_instances(e) * e.path.length();
  return n;
}

/// Distinct aggregation values per layer, keyed by a recursive canonical string
/// (node, relation, sorted child values with repetition).
inline std::vector<std::size_t> merged_recount(const HinGraph& g, const std::vector<Episode>& eps) {
  std::map<int, std::set<std::string>> per_layer;
  const auto& s = g.schema();
  for (const auto& e : eps) {
    const int L = static_cast<int>(e.path.length());
    if (L == 0) continue;
    const auto types = e.path.type_sequence(s);
    std::map<std::pair<int, LocalId>, std::string> memo;
    auto value = [&](auto&& self, int k, LocalId node) -> std::string {
      if (k == L) return "raw " + std::to_string(types[k]) + ":" + std::to_string(node);
      auto key = std::make_pair(k, node);
      if (auto it = memo.find(key); it != memo.end()) return it->second;
      std::vector<std::string> kids;
      for (const auto& edge : e.trace.steps[k])
        if (edge.parent == node) {
          auto v = self(self, k + 1, edge.child);
          if (!v.empty()) kids.push_back(std::move(v));
        }
      std::string out;
      if (!kids.empty()) {
        std::sort(kids.begin(), kids.end());
        out = "(" + std::to_string(types[k]) + ":" + std::to_string(node) + " r" +
              std::to_string(e.path.relations[k]);
        for (const auto& c : kids) out += " " + c;
        out += ")";
        per_layer[L - k].insert(out);
      }
      memo[key] = out;
      return out;
    };
    value(value, 0, e.start.local);
  }
  std::vector<std::size_t> counts;
  for (int l = 1; !per_layer.empty() && l <= per_layer.rbegin()->first; ++l)
    counts.push_back(per_layer.count(l) ? per_layer[l].size() : 0);
  return counts;
}

/// Worst row-wise relative error max|a_i - b_i| / max|a_i|; a row that is zero
/// in both counts as exact.
inline double max_relative_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double scale = std::max(a.row(i).cwiseAbs().maxCoeff(), b.row(i).cwiseAbs().maxCoeff());
    const double diff = (a.row(i) - b.row(i)).cwiseAbs().maxCoeff();
    if (scale > 0.0) worst = std::max(worst, diff / scale);
  }
  return worst;
}

/// Small model suitable for exhaustive checks.
inline HgnnParams small_params(const HinSchema& s, int T, std::uint64_t seed, int d = 16, int heads = 4) {
  HgnnConfig c;
  c.hidden_dim = d;
  c.heads = heads;
  c.max_timesteps = T;
  return HgnnParams::initialize(s, c, seed);
}

}  // namespace testsupport
