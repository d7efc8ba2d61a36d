#include "rlhgnn/hin.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace rlhgnn {

using nlohmann::json;

TypeId HinSchema::type_id(std::string_view name) const {
  for (std::size_t i = 0; i < node_types.size(); ++i)
    if (node_types[i] == name) return static_cast<TypeId>(i);
  throw Error("unknown node type: " + std::string(name));
}

RelationId HinSchema::relation_id(std::string_view name) const {
  for (std::size_t i = 0; i < relations.size(); ++i)
    if (relations[i].name == name) return static_cast<RelationId>(i);
  throw Error("unknown relation type: " + std::string(name));
}

std::vector<std::string> HinSchema::violations() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : node_types)
    if (!seen.insert(t).second) out.push_back("duplicate node type name: " + t);
  seen.clear();
  for (const auto& r : relations) {
    if (!seen.insert(r.name).second) out.push_back("duplicate relation name: " + r.name);
    if (r.src < 0 || r.src >= num_types() || r.dst < 0 || r.dst >= num_types())
      out.push_back("relation " + r.name + " refers to an undeclared node type");
  }
  if (static_cast<int>(attribute_dims.size()) != num_types())
    out.push_back("attribute_dims has " + std::to_string(attribute_dims.size()) +
                  " entries for " + std::to_string(num_types()) + " node types");
  if (target_type < 0 || target_type >= num_types()) out.push_back("target type is not declared");
  if (num_classes < 1) out.push_back("num_classes must be positive");
  return out;
}

HinGraph::HinGraph(HinSchema schema, std::vector<int> node_counts, std::vector<Matrix> attributes,
                   std::vector<std::vector<Edge>> edges, std::vector<int> labels)
    : schema_(std::move(schema)),
      node_counts_(std::move(node_counts)),
      attributes_(std::move(attributes)),
      edges_(std::move(edges)),
      labels_(std::move(labels)) {
  node_counts_.resize(schema_.num_types(), 0);
  attributes_.resize(schema_.num_types());
  edges_.resize(schema_.num_relations());
  offsets_.assign(node_counts_.size() + 1, 0);
  for (std::size_t t = 0; t < node_counts_.size(); ++t)
    offsets_[t + 1] = offsets_[t] + std::max(0, node_counts_[t]);

  row_ptr_.resize(edges_.size());
  col_.resize(edges_.size());
  for (std::size_t r = 0; r < edges_.size(); ++r) {
    const auto& rel = schema_.relations[r];
    const int n_src = (rel.src >= 0 && rel.src < schema_.num_types()) ? node_counts_[rel.src] : 0;
    auto& ptr = row_ptr_[r];
    auto& col = col_[r];
    ptr.assign(static_cast<std::size_t>(std::max(0, n_src)) + 1, 0);
    for (const auto& [s, d] : edges_[r])
      if (s >= 0 && s < n_src) ++ptr[s + 1];
    std::partial_sum(ptr.begin(), ptr.end(), ptr.begin());
    col.assign(ptr.back(), 0);
    std::vector<int> fill(ptr.begin(), ptr.end() - 1);
    for (const auto& [s, d] : edges_[r])
      if (s >= 0 && s < n_src) col[fill[s]++] = d;
    for (int s = 0; s < n_src; ++s) std::sort(col.begin() + ptr[s], col.begin() + ptr[s + 1]);
  }
}

NodeRef HinGraph::node_at(int global) const {
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global);
  const auto t = static_cast<TypeId>(std::distance(offsets_.begin(), it) - 1);
  return {t, global - offsets_[t]};
}

std::span<const LocalId> HinGraph::neighbors(NodeRef node, RelationId relation) const {
  if (relation < 0 || relation >= schema_.num_relations())
    throw Error("relation id out of range: " + std::to_string(relation));
  const auto& rel = schema_.relations[relation];
  if (node.type != rel.src)
    throw Error("neighbors: node of type " + schema_.node_types.at(node.type) +
                " is not the source type of relation " + rel.name);
  if (node.local < 0 || node.local >= node_counts_[node.type])
    throw Error("neighbors: node id out of range");
  const auto& ptr = row_ptr_[relation];
  return {col_[relation].data() + ptr[node.local],
          static_cast<std::size_t>(ptr[node.local + 1] - ptr[node.local])};
}

std::vector<LocalId> HinGraph::labelled_nodes() const {
  std::vector<LocalId> out;
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] >= 0) out.push_back(static_cast<LocalId>(i));
  return out;
}

std::vector<std::string> validate_hin(const HinGraph& g) {
  const auto& s = g.schema_;
  std::vector<std::string> out = s.violations();
  // Relation endpoint checks below index into node types; stop if those are broken.
  if (!out.empty()) return out;

  for (TypeId t = 0; t < s.num_types(); ++t) {
    const auto& name = s.node_types[t];
    const int n = g.node_counts_[t];
    if (n < 0) out.push_back("negative node count for type " + name);
    const auto& a = g.attributes_[t];
    if (a.rows() != n)
      out.push_back("attribute rows for type " + name + ": " + std::to_string(a.rows()) +
                    ", expected " + std::to_string(n));
    if (a.rows() > 0 && a.cols() != s.attribute_dims[t])
      out.push_back("attribute dimension mismatch for type " + name + ": " +
                    std::to_string(a.cols()) + " vs declared " +
                    std::to_string(s.attribute_dims[t]));
    if (!a.allFinite()) out.push_back("non-finite attribute values for type " + name);
  }
  for (RelationId r = 0; r < s.num_relations(); ++r) {
    const auto& rel = s.relations[r];
    const int ns = g.node_counts_[rel.src];
    const int nd = g.node_counts_[rel.dst];
    std::size_t bad = 0;
    for (const auto& [a, b] : g.edges_[r])
      if (a < 0 || a >= ns || b < 0 || b >= nd) ++bad;
    if (bad > 0)
      out.push_back("relation " + rel.name + ": " + std::to_string(bad) +
                    " edge(s) with endpoints outside the declared " + s.node_types[rel.src] +
                    "/" + s.node_types[rel.dst] + " id ranges");
  }
  const int nt = g.node_counts_[s.target_type];
  if (!g.labels_.empty() && static_cast<int>(g.labels_.size()) != nt)
    out.push_back("label vector length " + std::to_string(g.labels_.size()) + " != target count " +
                  std::to_string(nt));
  for (std::size_t i = 0; i < g.labels_.size(); ++i) {
    const int y = g.labels_[i];
    if (y < -1 || y >= s.num_classes)
      out.push_back("label " + std::to_string(y) + " of node " + std::to_string(i) +
                    " outside [0, " + std::to_string(s.num_classes) + ")");
  }
  return out;
}

HinGraph make_hin(HinSchema schema, std::vector<int> node_counts, std::vector<Matrix> attributes,
                  std::vector<std::vector<Edge>> edges, std::vector<int> labels) {
  HinGraph g(std::move(schema), std::move(node_counts), std::move(attributes), std::move(edges),
             std::move(labels));
  auto report = validate_hin(g);
  if (!report.empty()) throw Error("invalid graph: " + report.front());
  return g;
}

DataSplit split_nodes(const HinGraph& g, int train_count, int validation_count,
                      std::uint64_t seed) {
  auto pool = g.labelled_nodes();
  if (train_count < 0 || validation_count < 0 ||
      static_cast<std::size_t>(train_count) + validation_count > pool.size())
    throw Error("split_nodes: requested " + std::to_string(train_count) + "+" +
                std::to_string(validation_count) + " nodes but only " +
                std::to_string(pool.size()) + " are labelled");
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  DataSplit split;
  split.train.assign(pool.begin(), pool.begin() + train_count);
  split.validation.assign(pool.begin() + train_count, pool.begin() + train_count + validation_count);
  split.test.assign(pool.begin() + train_count + validation_count, pool.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// --- json-graph -------------------------------------------------------------

namespace {

HinSchema schema_from_json(const json& js) {
  HinSchema s;
  for (const auto& t : js.at("node_types")) s.node_types.push_back(t.get<std::string>());
  for (const auto& r : js.at("relation_types")) {
    RelationType rel;
    rel.name = r.at("name").get<std::string>();
    rel.src = s.type_id(r.at("src").get<std::string>());
    rel.dst = s.type_id(r.at("dst").get<std::string>());
    s.relations.push_back(std::move(rel));
  }
  s.target_type = s.type_id(js.at("target_type").get<std::string>());
  s.num_classes = js.at("num_classes").get<int>();
  s.attribute_dims.assign(s.node_types.size(), -1);
  if (js.contains("attribute_dims"))
    for (const auto& [name, dim] : js.at("attribute_dims").items())
      s.attribute_dims[s.type_id(name)] = dim.get<int>();
  return s;
}

json schema_to_json(const HinSchema& s) {
  json js;
  js["node_types"] = s.node_types;
  js["relation_types"] = json::array();
  for (const auto& r : s.relations)
    js["relation_types"].push_back(
        {{"name", r.name}, {"src", s.node_types[r.src]}, {"dst", s.node_types[r.dst]}});
  js["target_type"] = s.node_types[s.target_type];
  js["num_classes"] = s.num_classes;
  json dims = json::object();
  for (TypeId t = 0; t < s.num_types(); ++t) dims[s.node_types[t]] = s.attribute_dims[t];
  js["attribute_dims"] = dims;
  return js;
}

// Fills undeclared dims from data; a ragged row is reported as a dimension mismatch.
Matrix rows_to_matrix(const json& rows, int& dim, const std::string& type_name) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0) return Matrix(0, std::max(dim, 0));
  const auto width = static_cast<int>(rows.at(0).size());
  if (dim < 0) dim = width;
  Matrix m(n, width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows.at(i);
    if (static_cast<int>(row.size()) != width)
      throw Error("dimension mismatch in attribute rows of type " + type_name + ": row " +
                  std::to_string(i) + " has " + std::to_string(row.size()) + " values, expected " +
                  std::to_string(width));
    for (int j = 0; j < width; ++j) m(i, j) = row.at(j).get<double>();
  }
  return m;
}

std::vector<LocalId> ids_from_json(const json& js) { return js.get<std::vector<LocalId>>(); }

}  // namespace

HinGraph parse_hin_json(std::string_view document) {
  json js;
  try {
    js = json::parse(document);
  } catch (const json::exception& e) {
    throw Error(std::string("json-graph parse failure: ") + e.what());
  }
  try {
    HinSchema s = schema_from_json(js.at("schema"));
    std::vector<int> counts(s.num_types(), 0);
    for (const auto& [name, n] : js.at("nodes").items()) counts[s.type_id(name)] = n.get<int>();

    std::vector<Matrix> attrs(s.num_types());
    const json empty = json::object();
    const json& attr_js = js.contains("attributes") ? js.at("attributes") : empty;
    for (TypeId t = 0; t < s.num_types(); ++t) {
      const auto& name = s.node_types[t];
      if (attr_js.contains(name)) {
        attrs[t] = rows_to_matrix(attr_js.at(name), s.attribute_dims[t], name);
      } else {
        if (s.attribute_dims[t] < 0) s.attribute_dims[t] = 0;
        attrs[t] = Matrix(0, s.attribute_dims[t]);
      }
      if (attrs[t].rows() != counts[t])
        throw Error("dimension mismatch in attribute rows of type " + name + ": " +
                    std::to_string(attrs[t].rows()) + " rows for " + std::to_string(counts[t]) +
                    " nodes");
    }

    std::vector<std::vector<Edge>> edges(s.num_relations());
    if (js.contains("edges"))
      for (const auto& [name, list] : js.at("edges").items()) {
        auto& out = edges[s.relation_id(name)];
        for (const auto& e : list) out.emplace_back(e.at(0).get<LocalId>(), e.at(1).get<LocalId>());
      }

    std::vector<int> labels(counts[s.target_type], -1);
    if (js.contains("labels"))
      for (const auto& [key, y] : js.at("labels").items()) {
        const int id = std::stoi(key);
        if (id < 0 || id >= static_cast<int>(labels.size()))
          throw Error("label for unknown node id " + key);
        labels[id] = y.get<int>();
      }
    return make_hin(std::move(s), std::move(counts), std::move(attrs), std::move(edges),
                    std::move(labels));
  } catch (const json::exception& e) {
    throw Error(std::string("json-graph parse failure: ") + e.what());
  }
}

std::string dump_hin_json(const HinGraph& g, const DataSplit* split) {
  const auto& s = g.schema();
  json js;
  js["schema"] = schema_to_json(s);
  json nodes = json::object(), attrs = json::object(), edges = json::object(),
       labels = json::object();
  for (TypeId t = 0; t < s.num_types(); ++t) {
    nodes[s.node_types[t]] = g.node_count(t);
    json rows = json::array();
    const auto& a = g.attributes(t);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
      rows.push_back(std::move(row));
    }
    attrs[s.node_types[t]] = std::move(rows);
  }
  for (RelationId r = 0; r < s.num_relations(); ++r) {
    json list = json::array();
    for (const auto& [a, b] : g.edges(r)) list.push_back({a, b});
    edges[s.relations[r].name] = std::move(list);
  }
  for (std::size_t i = 0; i < g.labels().size(); ++i)
    if (g.labels()[i] >= 0) labels[std::to_string(i)] = g.labels()[i];
  js["nodes"] = nodes;
  js["attributes"] = attrs;
  js["labels"] = labels;
  js["edges"] = edges;
  if (split)
    js["split"] = {{"train", split->train}, {"validation", split->validation}, {"test", split->test}};
  return js.dump();
}

void save_hin_json(const HinGraph& g, const std::filesystem::path& path, const DataSplit* split) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << dump_hin_json(g, split);
}

std::optional<DataSplit> load_split(const std::filesystem::path& json_graph) {
  std::ifstream in(json_graph);
  if (!in) throw Error("cannot open " + json_graph.string());
  json js;
  try {
    js = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(std::string("json-graph parse failure: ") + e.what());
  }
  if (!js.contains("split")) return std::nullopt;
  const auto& sp = js.at("split");
  return DataSplit{ids_from_json(sp.at("train")), ids_from_json(sp.at("validation")),
                   ids_from_json(sp.at("test"))};
}

// --- csv-triples ------------------------------------------------------------

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

NodeRef parse_node_token(const HinSchema& s, const std::string& token, int line_no) {
  const auto colon = token.rfind(':');
  if (colon == std::string::npos)
    throw Error("csv-triples line " + std::to_string(line_no) + ": expected type:id, got '" +
                token + "'");
  try {
    return {s.type_id(token.substr(0, colon)), std::stoi(token.substr(colon + 1))};
  } catch (const std::logic_error&) {
    throw Error("csv-triples line " + std::to_string(line_no) + ": bad node id '" + token + "'");
  }
}

template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::istringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    fn(line, n);
  }
}

std::filesystem::path sidecar(const std::filesystem::path& p, const char* suffix) {
  auto out = p;
  out.replace_extension();
  out += suffix;
  return out;
}

HinGraph load_csv_triples(const std::filesystem::path& path) {
  json schema_js;
  try {
    schema_js = json::parse(read_file(sidecar(path, ".schema.json")));
  } catch (const json::exception& e) {
    throw Error(std::string("csv-triples schema parse failure: ") + e.what());
  }
  HinSchema s;
  try {
    s = schema_from_json(schema_js.contains("schema") ? schema_js.at("schema") : schema_js);
  } catch (const json::exception& e) {
    throw Error(std::string("csv-triples schema parse failure: ") + e.what());
  }
  std::vector<int> counts(s.num_types(), 0);
  const bool explicit_counts = schema_js.contains("nodes");
  if (explicit_counts)
    for (const auto& [name, n] : schema_js.at("nodes").items()) counts[s.type_id(name)] = n;
  auto bump = [&](NodeRef n) {
    if (!explicit_counts) counts[n.type] = std::max(counts[n.type], n.local + 1);
  };

  std::vector<std::vector<Edge>> edges(s.num_relations());
  for_each_line(read_file(path), [&](const std::string& line, int n) {
    auto cells = split_csv(line);
    if (cells.size() != 3)
      throw Error("csv-triples line " + std::to_string(n) + ": expected 3 fields");
    const RelationId r = s.relation_id(cells[0]);
    const NodeRef a = parse_node_token(s, cells[1], n);
    const NodeRef b = parse_node_token(s, cells[2], n);
    const auto& rel = s.relations[r];
    if (a.type != rel.src || b.type != rel.dst)
      throw Error("csv-triples line " + std::to_string(n) + ": endpoint type mismatch for relation " +
                  rel.name + " (" + s.node_types[a.type] + "->" + s.node_types[b.type] +
                  ", declared " + s.node_types[rel.src] + "->" + s.node_types[rel.dst] + ")");
    bump(a);
    bump(b);
    edges[r].emplace_back(a.local, b.local);
  });

  std::vector<std::map<LocalId, std::vector<double>>> rows(s.num_types());
  const auto attr_path = sidecar(path, ".attributes.csv");
  if (std::filesystem::exists(attr_path))
    for_each_line(read_file(attr_path), [&](const std::string& line, int n) {
      auto cells = split_csv(line);
      const NodeRef node = parse_node_token(s, cells.at(0), n);
      std::vector<double> v;
      for (std::size_t i = 1; i < cells.size(); ++i) v.push_back(std::stod(cells[i]));
      auto& dim = s.attribute_dims[node.type];
      if (dim < 0) dim = static_cast<int>(v.size());
      if (static_cast<int>(v.size()) != dim)
        throw Error("dimension mismatch in attribute rows of type " + s.node_types[node.type] +
                    " (line " + std::to_string(n) + ")");
      bump(node);
      rows[node.type][node.local] = std::move(v);
    });

  std::map<LocalId, int> label_rows;
  const auto label_path = sidecar(path, ".labels.csv");
  if (std::filesystem::exists(label_path))
    for_each_line(read_file(label_path), [&](const std::string& line, int n) {
      auto cells = split_csv(line);
      const NodeRef node = parse_node_token(s, cells.at(0), n);
      if (node.type != s.target_type)
        throw Error("labels line " + std::to_string(n) + ": node is not of the target type");
      bump(node);
      label_rows[node.local] = std::stoi(cells.at(1));
    });

  std::vector<Matrix> attrs(s.num_types());
  for (TypeId t = 0; t < s.num_types(); ++t) {
    if (s.attribute_dims[t] < 0) s.attribute_dims[t] = 0;
    attrs[t] = Matrix::Zero(counts[t], s.attribute_dims[t]);
    if (counts[t] > 0 && s.attribute_dims[t] > 0 &&
        static_cast<int>(rows[t].size()) != counts[t])
      throw Error("dimension mismatch in attribute rows of type " + s.node_types[t] + ": " +
                  std::to_string(rows[t].size()) + " rows for " + std::to_string(counts[t]) +
                  " nodes");
    for (const auto& [id, v] : rows[t]) {
      if (id < 0 || id >= counts[t]) throw Error("attribute row for unknown node id");
      for (int j = 0; j < s.attribute_dims[t]; ++j) attrs[t](id, j) = v[j];
    }
  }
  std::vector<int> labels(counts[s.target_type], -1);
  for (const auto& [id, y] : label_rows) {
    if (id < 0 || id >= static_cast<int>(labels.size())) throw Error("label for unknown node id");
    labels[id] = y;
  }
  return make_hin(std::move(s), std::move(counts), std::move(attrs), std::move(edges),
                  std::move(labels));
}

}  // namespace

HinGraph load_hin(const std::filesystem::path& path, GraphFormat format) {
  if (!std::filesystem::exists(path)) throw Error("graph file not found: " + path.string());
  if (format == GraphFormat::CsvTriples) return load_csv_triples(path);
  return parse_hin_json(read_file(path));
}

GraphFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? GraphFormat::CsvTriples : GraphFormat::JsonGraph;
}

}  // namespace rlhgnn
