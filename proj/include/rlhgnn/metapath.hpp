#pragma once

#include "rlhgnn/hin.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rlhgnn {

/// Schema-level relation sequence omega_1 -r_1-> omega_2 ... rooted at start_type.
struct MetaPath {
  TypeId start_type = 0;
  std::vector<RelationId> relations;

  std::size_t length() const { return relations.size(); }
  TypeId terminal_type(const HinSchema& schema) const;
  std::vector<TypeId> type_sequence(const HinSchema& schema) const;
  bool operator==(const MetaPath&) const = default;
};

/// Throws when the chaining is broken anywhere along the path.
void check_metapath(const MetaPath& path, const HinSchema& schema);

/// "Movie -M-A-> Actor -A-M-> Movie"; a zero-length path prints its start type.
std::string to_string(const MetaPath& path, const HinSchema& schema);
MetaPath parse_metapath(std::string_view text, const HinSchema& schema);

/// An action is an index into the fixed-width head: relation ids 0..|R|-1, then Stop.
struct Action {
  int index = 0;

  static Action stop(const HinSchema& s) { return {s.num_relations()}; }
  static Action extend(RelationId r) { return {r}; }
  bool is_stop(const HinSchema& s) const { return index == s.num_relations(); }
  RelationId relation() const { return index; }
  bool operator==(const Action&) const = default;
};

std::string action_name(const Action& a, const HinSchema& schema);

/// Legal-action mask of width |R| + 1.
struct ActionMask {
  std::vector<std::uint8_t> legal;

  int width() const { return static_cast<int>(legal.size()); }
  bool allows(int index) const { return legal.at(index) != 0; }
  std::vector<Action> actions() const;
  int count() const;
};

ActionMask valid_actions(const HinSchema& schema, TypeId terminal_type, bool at_max_depth);

MetaPath extend_path(const MetaPath& path, RelationId relation, const HinSchema& schema);

struct TraversedEdge {
  LocalId parent = 0;
  LocalId child = 0;
  RelationId relation = 0;
  bool operator==(const TraversedEdge&) const = default;
};

/// Nodes reached by one episode; `reached` is the step-t node set D(i) and
/// `steps[k]` holds the edges traversed from step k to step k+1.
struct Frontier {
  NodeRef start;
  TypeId type = 0;
  std::vector<LocalId> reached;
  std::vector<std::vector<TraversedEdge>> steps;

  int step() const { return static_cast<int>(steps.size()); }
  static Frontier at(NodeRef start) { return {start, start.type, {start.local}, {}}; }
};

struct ExpandOptions {
  int fanout_cap = 64;  // <= 0 disables sampling
  std::uint64_t seed = 0;
};

/// Next frontier along `relation`; children of each parent are sampled without
/// replacement down to the fan-out cap. The returned frontier may be empty
/// (a dead end); the caller decides what that means.
Frontier expand_frontier(const HinGraph& g, const Frontier& frontier, RelationId relation,
                         const ExpandOptions& options = {});

/// Mean attribute row over the reached set; throws "dead-end frontier" when empty.
Vector arrived_mean(const HinGraph& g, const Frontier& frontier);

}  // namespace rlhgnn
