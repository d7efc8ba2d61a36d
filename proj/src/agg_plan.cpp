#include "rlhgnn/agg_plan.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <unordered_map>

namespace rlhgnn {

std::size_t AggregationDag::step_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

std::vector<std::size_t> AggregationDag::layer_counts() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) out.push_back(l.size());
  return out;
}

namespace {

// Children lists restricted to nodes that lie on at least one full-length
// instance. kids[k] maps a depth-k node to its surviving depth-(k+1) children.
struct PrunedTrace {
  int length = 0;
  std::vector<std::vector<LocalId>> alive;  // alive[k], sorted
  std::vector<std::unordered_map<LocalId, std::vector<LocalId>>> kids;
  std::vector<TypeId> types;
  std::vector<RelationId> relations;
};

PrunedTrace prune(const HinGraph& g, const Episode& e) {
  const auto& schema = g.schema();
  const auto& tr = e.trace;
  PrunedTrace p;
  p.length = static_cast<int>(e.path.length());
  if (tr.step() != p.length)
    throw Error("inconsistent trace: " + std::to_string(tr.step()) + " steps for a path of length " +
                std::to_string(p.length));
  if (e.start != tr.start || e.start.type != e.path.start_type)
    throw Error("inconsistent trace: start node disagrees with trace or path");
  check_metapath(e.path, schema);
  p.types = e.path.type_sequence(schema);
  p.relations = e.path.relations;
  if (e.start.local < 0 || e.start.local >= g.node_count(e.start.type))
    throw Error("inconsistent trace: start node id out of range");

  p.kids.resize(p.length);
  std::vector<std::vector<LocalId>> level(p.length + 1);
  level[0] = {e.start.local};
  for (int k = 0; k < p.length; ++k) {
    std::vector<LocalId>& nxt = level[k + 1];
    for (const auto& edge : tr.steps[k]) {
      if (edge.relation != p.relations[k])
        throw Error("inconsistent trace: edge relation differs from the path at step " +
                    std::to_string(k));
      if (!std::binary_search(level[k].begin(), level[k].end(), edge.parent))
        throw Error("inconsistent trace: edge refers to unknown node " +
                    std::to_string(edge.parent) + " at step " + std::to_string(k));
      if (edge.child < 0 || edge.child >= g.node_count(p.types[k + 1]))
        throw Error("inconsistent trace: edge refers to unknown node " +
                    std::to_string(edge.child) + " at step " + std::to_string(k + 1));
      p.kids[k][edge.parent].push_back(edge.child);
      nxt.push_back(edge.child);
    }
    std::sort(nxt.begin(), nxt.end());
    nxt.erase(std::unique(nxt.begin(), nxt.end()), nxt.end());
  }
  if (level[p.length].empty()) throw Error("inconsistent trace: empty final frontier");

  p.alive.resize(p.length + 1);
  p.alive[p.length] = level[p.length];
  for (int k = p.length - 1; k >= 0; --k) {
    const auto& below = p.alive[k + 1];
    for (LocalId j : level[k]) {
      auto it = p.kids[k].find(j);
      if (it == p.kids[k].end()) continue;
      auto& ch = it->second;
      std::erase_if(ch, [&](LocalId c) { return !std::binary_search(below.begin(), below.end(), c); });
      std::sort(ch.begin(), ch.end());
      if (ch.empty())
        p.kids[k].erase(it);
      else
        p.alive[k].push_back(j);
    }
  }
  return p;
}

struct RawTable {
  std::vector<NodeRef> nodes;
  std::vector<int> by_global;
  int operator()(const HinGraph& g, NodeRef n) const { return by_global[g.global_index(n)]; }
};

RawTable raw_table(const HinGraph& g, const std::vector<Episode>& episodes,
                   const std::vector<PrunedTrace>& pruned) {
  RawTable t;
  t.by_global.assign(g.total_nodes(), -1);
  std::vector<char> used(g.total_nodes(), 0);
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    used[g.global_index(episodes[e].start)] = 1;
    const auto& p = pruned[e];
    for (int k = 0; k <= p.length; ++k)
      for (LocalId j : p.alive[k]) used[g.global_index({p.types[k], j})] = 1;
  }
  for (int i = 0; i < g.total_nodes(); ++i)
    if (used[i]) {
      t.by_global[i] = static_cast<int>(t.nodes.size());
      t.nodes.push_back(g.node_at(i));
    }
  return t;
}

std::vector<PrunedTrace> prune_all(const HinGraph& g, const std::vector<Episode>& episodes) {
  std::vector<PrunedTrace> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(prune(g, e));
  return out;
}

AggregationDag empty_dag(const std::vector<Episode>& episodes, const std::vector<PrunedTrace>& p,
                         RawTable raw) {
  AggregationDag dag;
  dag.raw_nodes = std::move(raw.nodes);
  int depth = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    dag.episode_starts.push_back(episodes[e].start);
    dag.episode_lengths.push_back(p[e].length);
    depth = std::max(depth, p[e].length);
  }
  dag.layers.resize(depth);
  dag.outputs.resize(episodes.size());
  return dag;
}

struct StepKey {
  RelationId relation;
  LocalId target;
  std::vector<PlanSource> sources;
  auto operator<=>(const StepKey&) const = default;
};

}  // namespace

AggregationDag build_plan(const HinGraph& g, const std::vector<Episode>& episodes) {
  const auto pruned = prune_all(g, episodes);
  RawTable raw = raw_table(g, episodes, pruned);
  AggregationDag dag = empty_dag(episodes, pruned, raw);

  // value[e]: node at the current depth of episode e -> index in the previous layer.
  std::vector<std::unordered_map<LocalId, int>> value(episodes.size());
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& p = pruned[e];
    if (p.length == 0) {
      dag.outputs[e] = {0, raw(g, episodes[e].start)};
      continue;
    }
    for (LocalId j : p.alive[p.length]) value[e][j] = raw(g, {p.types[p.length], j});
  }

  struct Pending {
    std::size_t episode;
    LocalId node;
    int key_slot;
  };
  for (int l = 1; l <= dag.depth(); ++l) {
    std::map<StepKey, int> keys;
    std::vector<std::map<StepKey, int>::iterator> slots;
    std::vector<Pending> pending;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const auto& p = pruned[e];
      if (p.length < l) continue;
      const int k = p.length - l;
      for (LocalId j : p.alive[k]) {
        std::vector<int> ids;
        for (LocalId c : p.kids[k].at(j)) ids.push_back(value[e].at(c));
        std::sort(ids.begin(), ids.end());
        StepKey key{p.relations[k], j, {}};
        for (int v : ids) {
          if (!key.sources.empty() && key.sources.back().index == v)
            ++key.sources.back().multiplicity;
          else
            key.sources.push_back({v, 1});
        }
        auto [it, inserted] = keys.try_emplace(std::move(key), -1);
        slots.push_back(it);
        pending.push_back({e, j, static_cast<int>(slots.size()) - 1});
      }
    }
    auto& layer = dag.layers[l - 1];
    layer.reserve(keys.size());
    for (auto& [key, id] : keys) {
      id = static_cast<int>(layer.size());
      const TypeId t = g.schema().relations[key.relation].src;
      PlanStep step;
      step.target = {t, key.target};
      step.target_raw = raw(g, step.target);
      step.relation = key.relation;
      step.sources = key.sources;
      layer.push_back(std::move(step));
    }
    std::vector<std::unordered_map<LocalId, int>> next(episodes.size());
    for (const auto& pd : pending) next[pd.episode][pd.node] = slots[pd.key_slot]->second;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      if (pruned[e].length == l) dag.outputs[e] = {l, next[e].at(episodes[e].start.local)};
      if (pruned[e].length >= l) value[e] = std::move(next[e]);
    }
  }
  return dag;
}

namespace {

constexpr std::size_t kNaiveStepLimit = 20'000'000;

std::size_t instances_of(const PrunedTrace& p) {
  if (p.length == 0) return 0;
  std::unordered_map<LocalId, std::size_t> below;
  for (LocalId j : p.alive[p.length]) below[j] = 1;
  for (int k = p.length - 1; k >= 0; --k) {
    std::unordered_map<LocalId, std::size_t> cur;
    for (LocalId j : p.alive[k]) {
      std::size_t n = 0;
      for (LocalId c : p.kids[k].at(j)) n += below.at(c);
      cur[j] = n;
    }
    below = std::move(cur);
  }
  return below.begin()->second;
}

struct NaiveBuilder {
  const HinGraph& g;
  const PrunedTrace& p;
  const RawTable& raw;
  AggregationDag& dag;
  std::vector<std::size_t> base;  // per layer index (h-1), offset of this episode's replicas
  std::size_t counter = 0;

  // Returns the first local instance index of the subtree rooted at (k, j).
  std::pair<std::size_t, std::size_t> visit(int k, LocalId j) {
    if (k == p.length) return {counter++, 1};
    std::vector<PlanSource> sources;
    std::size_t first = 0, count = 0;
    bool have_first = false;
    const int h = p.length - k;
    for (LocalId c : p.kids[k].at(j)) {
      auto [f, n] = visit(k + 1, c);
      if (!have_first) {
        first = f;
        have_first = true;
      }
      count += n;
      const int idx = (h == 1) ? raw(g, {p.types[k + 1], c}) : static_cast<int>(base[h - 2] + f);
      sources.push_back({idx, 1});
    }
    PlanStep step;
    step.target = {p.types[k], j};
    step.target_raw = raw(g, step.target);
    step.relation = p.relations[k];
    step.sources = std::move(sources);
    auto& layer = dag.layers[h - 1];
    for (std::size_t q = first; q < first + count; ++q) layer[base[h - 1] + q] = step;
    return {first, count};
  }
};

}  // namespace

AggregationDag naive_plan(const HinGraph& g, const std::vector<Episode>& episodes) {
  const auto pruned = prune_all(g, episodes);
  RawTable raw = raw_table(g, episodes, pruned);
  AggregationDag dag = empty_dag(episodes, pruned, raw);

  std::vector<std::size_t> n_inst(episodes.size());
  std::size_t total = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    n_inst[e] = instances_of(pruned[e]);
    total += n_inst[e] * pruned[e].length;
  }
  if (total > kNaiveStepLimit)
    throw Error("naive plan too large: " + std::to_string(total) + " steps");
  std::vector<std::size_t> sizes(dag.depth(), 0);
  for (std::size_t e = 0; e < episodes.size(); ++e)
    for (int h = 1; h <= pruned[e].length; ++h) sizes[h - 1] += n_inst[e];
  for (int h = 0; h < dag.depth(); ++h) dag.layers[h].resize(sizes[h]);

  std::vector<std::size_t> offset(dag.depth(), 0);
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& p = pruned[e];
    if (p.length == 0) {
      dag.outputs[e] = {0, raw(g, episodes[e].start)};
      continue;
    }
    NaiveBuilder b{g, p, raw, dag, offset, 0};
    b.visit(0, episodes[e].start.local);
    dag.outputs[e] = {p.length, static_cast<int>(offset[p.length - 1])};
    for (int h = 1; h <= p.length; ++h) offset[h - 1] += n_inst[e];
  }
  return dag;
}

std::size_t count_instances(const Episode& episode) {
  // Pruning needs a graph only for range checks; reuse the trace's own data.
  PrunedTrace p;
  p.length = static_cast<int>(episode.path.length());
  if (p.length == 0) return 0;
  p.kids.resize(p.length);
  std::vector<std::vector<LocalId>> level(p.length + 1);
  level[0] = {episode.start.local};
  for (int k = 0; k < p.length; ++k) {
    for (const auto& e : episode.trace.steps.at(k)) {
      p.kids[k][e.parent].push_back(e.child);
      level[k + 1].push_back(e.child);
    }
    std::sort(level[k + 1].begin(), level[k + 1].end());
    level[k + 1].erase(std::unique(level[k + 1].begin(), level[k + 1].end()), level[k + 1].end());
  }
  std::unordered_map<LocalId, std::size_t> below;
  for (LocalId j : level[p.length]) below[j] = 1;
  for (int k = p.length - 1; k >= 0; --k) {
    std::unordered_map<LocalId, std::size_t> cur;
    for (LocalId j : level[k]) {
      std::size_t n = 0;
      if (auto it = p.kids[k].find(j); it != p.kids[k].end())
        for (LocalId c : it->second)
          if (auto b = below.find(c); b != below.end()) n += b->second;
      cur[j] = n;
    }
    below = std::move(cur);
  }
  return below[episode.start.local];
}

AggregationStats plan_stats(const AggregationDag& naive, const AggregationDag& merged) {
  if (naive.episode_starts != merged.episode_starts ||
      naive.episode_lengths != merged.episode_lengths)
    throw Error("plan_stats: plans were built from different episode sets");
  AggregationStats s;
  s.naive_steps = naive.step_count();
  s.merged_steps = merged.step_count();
  s.naive_per_layer = naive.layer_counts();
  s.merged_per_layer = merged.layer_counts();
  s.reduction_ratio =
      s.naive_steps == 0 ? 0.0
                         : 1.0 - static_cast<double>(s.merged_steps) / static_cast<double>(s.naive_steps);
  return s;
}

std::string plan_to_json(const HinGraph& g, const AggregationDag& dag,
                         const AggregationStats* stats) {
  using nlohmann::json;
  const auto& s = g.schema();
  auto node_name = [&](NodeRef n) { return s.node_types[n.type] + ":" + std::to_string(n.local); };
  json js;
  json raw = json::array();
  for (const auto& n : dag.raw_nodes) raw.push_back(node_name(n));
  js["raw_nodes"] = raw;
  json layers = json::array();
  for (std::size_t l = 0; l < dag.layers.size(); ++l) {
    json steps = json::array();
    for (const auto& st : dag.layers[l]) {
      json src = json::array();
      for (const auto& x : st.sources) src.push_back({x.index, x.multiplicity});
      steps.push_back({{"target", node_name(st.target)},
                       {"relation", s.relations[st.relation].name},
                       {"sources", src}});
    }
    layers.push_back({{"layer", l + 1}, {"steps", steps}});
  }
  js["layers"] = layers;
  json outs = json::array();
  for (std::size_t e = 0; e < dag.outputs.size(); ++e)
    outs.push_back({{"start", node_name(dag.episode_starts[e])},
                    {"length", dag.episode_lengths[e]},
                    {"layer", dag.outputs[e].layer},
                    {"index", dag.outputs[e].index}});
  js["outputs"] = outs;
  if (stats)
    js["stats"] = {{"naive_steps", stats->naive_steps},
                   {"merged_steps", stats->merged_steps},
                   {"reduction_ratio", stats->reduction_ratio},
                   {"naive_per_layer", stats->naive_per_layer},
                   {"merged_per_layer", stats->merged_per_layer}};
  return js.dump(2);
}

}  // namespace rlhgnn
