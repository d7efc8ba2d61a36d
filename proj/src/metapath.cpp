#include "rlhgnn/metapath.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace rlhgnn {

TypeId MetaPath::terminal_type(const HinSchema& schema) const {
  return relations.empty() ? start_type : schema.relations.at(relations.back()).dst;
}

std::vector<TypeId> MetaPath::type_sequence(const HinSchema& schema) const {
  std::vector<TypeId> out{start_type};
  for (RelationId r : relations) out.push_back(schema.relations.at(r).dst);
  return out;
}

void check_metapath(const MetaPath& path, const HinSchema& schema) {
  if (path.start_type < 0 || path.start_type >= schema.num_types())
    throw Error("meta-path start type is not declared");
  TypeId cur = path.start_type;
  for (std::size_t k = 0; k < path.relations.size(); ++k) {
    const RelationId r = path.relations[k];
    if (r < 0 || r >= schema.num_relations()) throw Error("meta-path relation id out of range");
    if (schema.relations[r].src != cur)
      throw Error("illegal chaining: relation " + schema.relations[r].name + " starts at " +
                  schema.node_types[schema.relations[r].src] + ", path is at " +
                  schema.node_types[cur]);
    cur = schema.relations[r].dst;
  }
}

std::string to_string(const MetaPath& path, const HinSchema& schema) {
  std::string out = schema.node_types.at(path.start_type);
  for (RelationId r : path.relations) {
    const auto& rel = schema.relations.at(r);
    out += " -" + rel.name + "-> " + schema.node_types.at(rel.dst);
  }
  return out;
}

MetaPath parse_metapath(std::string_view text, const HinSchema& schema) {
  std::istringstream ss{std::string(text)};
  std::string tok;
  MetaPath p;
  if (!(ss >> tok)) throw Error("empty meta-path string");
  p.start_type = schema.type_id(tok);
  TypeId cur = p.start_type;
  while (ss >> tok) {
    if (tok.size() < 4 || tok.front() != '-' || tok.substr(tok.size() - 2) != "->")
      throw Error("malformed meta-path token: " + tok);
    const RelationId r = schema.relation_id(tok.substr(1, tok.size() - 3));
    std::string type_tok;
    if (!(ss >> type_tok)) throw Error("meta-path ends after a relation");
    p = extend_path(p, r, schema);
    cur = schema.relations[r].dst;
    if (schema.type_id(type_tok) != cur)
      throw Error("meta-path node type " + type_tok + " does not match relation target");
  }
  return p;
}

std::string action_name(const Action& a, const HinSchema& schema) {
  return a.is_stop(schema) ? std::string("STOP") : schema.relations.at(a.relation()).name;
}

std::vector<Action> ActionMask::actions() const {
  std::vector<Action> out;
  for (int i = 0; i < width(); ++i)
    if (legal[i]) out.push_back({i});
  return out;
}

int ActionMask::count() const { return static_cast<int>(std::count(legal.begin(), legal.end(), 1)); }

ActionMask valid_actions(const HinSchema& schema, TypeId terminal_type, bool at_max_depth) {
  if (terminal_type < 0 || terminal_type >= schema.num_types())
    throw Error("valid_actions: unknown node type " + std::to_string(terminal_type));
  ActionMask m;
  m.legal.assign(schema.num_relations() + 1, 0);
  m.legal.back() = 1;
  if (!at_max_depth)
    for (RelationId r = 0; r < schema.num_relations(); ++r)
      if (schema.relations[r].src == terminal_type) m.legal[r] = 1;
  return m;
}

MetaPath extend_path(const MetaPath& path, RelationId relation, const HinSchema& schema) {
  if (relation < 0 || relation >= schema.num_relations())
    throw Error("extend_path: relation id out of range");
  const TypeId terminal = path.terminal_type(schema);
  if (schema.relations[relation].src != terminal)
    throw Error("illegal chaining: relation " + schema.relations[relation].name + " starts at " +
                schema.node_types[schema.relations[relation].src] + ", path ends at " +
                schema.node_types[terminal]);
  MetaPath out = path;
  out.relations.push_back(relation);
  return out;
}

Frontier expand_frontier(const HinGraph& g, const Frontier& frontier, RelationId relation,
                         const ExpandOptions& options) {
  const auto& schema = g.schema();
  if (relation < 0 || relation >= schema.num_relations())
    throw Error("expand_frontier: relation id out of range");
  if (schema.relations[relation].src != frontier.type)
    throw Error("expand_frontier: type mismatch, frontier is at " +
                schema.node_types[frontier.type] + " but relation " +
                schema.relations[relation].name + " starts at " +
                schema.node_types[schema.relations[relation].src]);
  Frontier next;
  next.start = frontier.start;
  next.type = schema.relations[relation].dst;
  next.steps = frontier.steps;
  auto& traversed = next.steps.emplace_back();
  const int step = frontier.step();
  std::vector<LocalId> sampled;
  for (LocalId parent : frontier.reached) {
    auto children = g.neighbors({frontier.type, parent}, relation);
    if (options.fanout_cap > 0 && static_cast<int>(children.size()) > options.fanout_cap) {
      sampled.assign(children.begin(), children.end());
      std::mt19937_64 rng(mix64(options.seed, static_cast<std::uint64_t>(step),
                                mix64(static_cast<std::uint64_t>(frontier.type),
                                      static_cast<std::uint64_t>(parent))));
      for (int i = 0; i < options.fanout_cap; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, sampled.size() - 1);
        std::swap(sampled[i], sampled[pick(rng)]);
      }
      sampled.resize(options.fanout_cap);
      std::sort(sampled.begin(), sampled.end());
      for (LocalId c : sampled) traversed.push_back({parent, c, relation});
    } else {
      for (LocalId c : children) traversed.push_back({parent, c, relation});
    }
  }
  next.reached.reserve(traversed.size());
  for (const auto& e : traversed) next.reached.push_back(e.child);
  std::sort(next.reached.begin(), next.reached.end());
  next.reached.erase(std::unique(next.reached.begin(), next.reached.end()), next.reached.end());
  return next;
}

Vector arrived_mean(const HinGraph& g, const Frontier& frontier) {
  if (frontier.reached.empty()) throw Error("dead-end frontier: no nodes reached");
  const Matrix& a = g.attributes(frontier.type);
  Vector sum = Vector::Zero(a.cols());
  for (LocalId j : frontier.reached) sum += a.row(j).transpose();
  return sum / static_cast<double>(frontier.reached.size());
}

}  // namespace rlhgnn
