#pragma once

#include "rlhgnn/metapath.hpp"

#include <string>
#include <vector>

namespace rlhgnn {

/// One designed meta-path together with the frontier trace that realised it.
struct Episode {
  NodeRef start;
  MetaPath path;
  Frontier trace;
};

/// Layer-0 sources index the plan's raw node table; layer-l sources index the
/// steps of layer l-1.
struct PlanSource {
  std::int32_t index = 0;
  std::int32_t multiplicity = 1;
  auto operator<=>(const PlanSource&) const = default;
};

struct PlanStep {
  NodeRef target;
  std::int32_t target_raw = 0;  // index of the target in the raw node table
  RelationId relation = 0;
  std::vector<PlanSource> sources;
};

struct OutputSlot {
  std::int32_t layer = 0;  // 0: raw node table
  std::int32_t index = 0;
};

/// Layered aggregation plan. Information flows from the far end of every
/// meta-path toward its start node, so layer l holds the l-th aggregation
/// counted from the leaves and is evaluated with aggregator l.
struct AggregationDag {
  std::vector<NodeRef> raw_nodes;         // sorted, distinct
  std::vector<std::vector<PlanStep>> layers;  // layers[0] is layer 1
  std::vector<OutputSlot> outputs;        // one per episode, input order
  std::vector<NodeRef> episode_starts;
  std::vector<int> episode_lengths;

  int depth() const { return static_cast<int>(layers.size()); }
  std::size_t step_count() const;
  std::vector<std::size_t> layer_counts() const;
};

/// Redundancy-free plan: aggregation steps with identical (layer, target,
/// relation, source values) are emitted once and shared across the batch.
AggregationDag build_plan(const HinGraph& g, const std::vector<Episode>& episodes);

/// Unshared plan with one step per (meta-path instance, hop); evaluates to the
/// same representations as build_plan and serves as its oracle.
AggregationDag naive_plan(const HinGraph& g, const std::vector<Episode>& episodes);

struct AggregationStats {
  std::size_t naive_steps = 0;
  std::size_t merged_steps = 0;
  double reduction_ratio = 0.0;
  std::vector<std::size_t> naive_per_layer;
  std::vector<std::size_t> merged_per_layer;
};

AggregationStats plan_stats(const AggregationDag& naive, const AggregationDag& merged);

/// Diagnostic document: layers, steps (target, relation, sources) and stats.
std::string plan_to_json(const HinGraph& g, const AggregationDag& dag,
                         const AggregationStats* stats = nullptr);

/// Number of full-length meta-path instances realised by an episode's trace.
std::size_t count_instances(const Episode& episode);

}  // namespace rlhgnn
