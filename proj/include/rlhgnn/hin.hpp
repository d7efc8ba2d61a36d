#pragma once

#include "rlhgnn/common.hpp"

#include <compare>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rlhgnn {

/// A node is addressed by its type and a dense zero-based id within that type.
struct NodeRef {
  TypeId type = 0;
  LocalId local = 0;

  auto operator<=>(const NodeRef&) const = default;
};

struct RelationType {
  std::string name;
  TypeId src = 0;
  TypeId dst = 0;
};

struct HinSchema {
  std::vector<std::string> node_types;
  std::vector<RelationType> relations;
  std::vector<int> attribute_dims;  // one per node type
  TypeId target_type = 0;
  int num_classes = 0;

  int num_types() const { return static_cast<int>(node_types.size()); }
  int num_relations() const { return static_cast<int>(relations.size()); }

  /// Throws on unknown names.
  TypeId type_id(std::string_view name) const;
  RelationId relation_id(std::string_view name) const;

  /// Invariant violations of the schema itself (empty when valid).
  std::vector<std::string> violations() const;
};

using Edge = std::pair<LocalId, LocalId>;

/// Immutable typed multi-relational graph. The constructor stores what it is
/// given (so validate_hin can report on malformed input) and builds per-relation
/// CSR adjacency; use load_hin or make_hin for validated construction.
class HinGraph {
 public:
  HinGraph() = default;
  HinGraph(HinSchema schema, std::vector<int> node_counts, std::vector<Matrix> attributes,
           std::vector<std::vector<Edge>> edges, std::vector<int> labels);

  const HinSchema& schema() const { return schema_; }
  int node_count(TypeId t) const { return node_counts_.at(t); }
  const std::vector<int>& node_counts() const { return node_counts_; }
  int total_nodes() const { return offsets_.empty() ? 0 : offsets_.back(); }

  /// Flat index over all nodes, ordered by (type, local).
  int global_index(NodeRef n) const { return offsets_[n.type] + n.local; }
  NodeRef node_at(int global) const;

  const Matrix& attributes(TypeId t) const { return attributes_.at(t); }
  auto attribute(NodeRef n) const { return attributes_[n.type].row(n.local); }

  /// Edges exactly as supplied, per relation.
  const std::vector<Edge>& edges(RelationId r) const { return edges_.at(r); }

  /// Targets of `relation` from `node`, ascending, duplicates kept for multi-edges.
  std::span<const LocalId> neighbors(NodeRef node, RelationId relation) const;

  /// Label of a target-type node, -1 when unlabelled.
  int label(LocalId target_local) const { return labels_.at(target_local); }
  const std::vector<int>& labels() const { return labels_; }
  std::vector<LocalId> labelled_nodes() const;

 private:
  friend std::vector<std::string> validate_hin(const HinGraph& g);

  HinSchema schema_;
  std::vector<int> node_counts_;
  std::vector<int> offsets_;
  std::vector<Matrix> attributes_;
  std::vector<std::vector<Edge>> edges_;
  std::vector<int> labels_;
  // CSR per relation; rows indexed by source local id.
  std::vector<std::vector<int>> row_ptr_;
  std::vector<std::vector<LocalId>> col_;
};

/// Every invariant violation, one message per entry; empty iff the graph is valid.
std::vector<std::string> validate_hin(const HinGraph& g);

/// Constructs and validates; throws Error listing the first violation.
HinGraph make_hin(HinSchema schema, std::vector<int> node_counts, std::vector<Matrix> attributes,
                  std::vector<std::vector<Edge>> edges, std::vector<int> labels);

struct DataSplit {
  std::vector<LocalId> train;
  std::vector<LocalId> validation;
  std::vector<LocalId> test;
};

/// Uniform random disjoint draw over labelled target nodes; the remainder is test.
DataSplit split_nodes(const HinGraph& g, int train_count, int validation_count, std::uint64_t seed);

enum class GraphFormat { JsonGraph, CsvTriples };

/// json-graph files parse as one document. csv-triples files carry one edge per
/// line ("relation,src_type:src_id,dst_type:dst_id") next to sidecars sharing the
/// stem: <stem>.schema.json (the json-graph "schema" object, plus optional
/// "nodes" counts), <stem>.attributes.csv ("type:id,v1,...") and
/// <stem>.labels.csv ("type:id,class").
HinGraph load_hin(const std::filesystem::path& path, GraphFormat format);

HinGraph parse_hin_json(std::string_view document);
std::string dump_hin_json(const HinGraph& g, const DataSplit* split = nullptr);

/// Split stored alongside a json-graph document (optional "split" key).
std::optional<DataSplit> load_split(const std::filesystem::path& json_graph);

void save_hin_json(const HinGraph& g, const std::filesystem::path& path,
                   const DataSplit* split = nullptr);

GraphFormat format_from_path(const std::filesystem::path& path);

}  // namespace rlhgnn
