#include "rlhgnn/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

namespace rlhgnn {

namespace {

std::vector<LocalId> sample_without_replacement(const std::vector<LocalId>& pool, int k,
                                                std::mt19937_64& rng) {
  std::vector<LocalId> v = pool;
  k = std::min<int>(k, static_cast<int>(v.size()));
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
    std::swap(v[i], v[pick(rng)]);
  }
  v.resize(k);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

std::pair<HinGraph, DataSplit> generate_planted_hin(const SyntheticSpec& spec) {
  HinSchema s;
  for (const auto& t : spec.node_types) {
    s.node_types.push_back(t.name);
    s.attribute_dims.push_back(t.attribute_dim);
  }
  for (const auto& r : spec.relations)
    s.relations.push_back({r.name, s.type_id(r.src), s.type_id(r.dst)});
  s.target_type = s.type_id(spec.target_type);
  s.num_classes = spec.num_classes;
  if (auto v = s.violations(); !v.empty()) throw Error("synthetic spec: " + v.front());
  if (spec.signal < 0.0 || spec.signal > 1.0) throw Error("synthetic spec: signal outside [0,1]");
  if (spec.planted_path.empty()) throw Error("synthetic spec: planted path is empty");

  // Planted path chaining.
  std::vector<TypeId> path_types{s.target_type};
  std::set<RelationId> planted;
  for (const auto& name : spec.planted_path) {
    const RelationId r = s.relation_id(name);
    if (s.relations[r].src != path_types.back())
      throw Error("synthetic spec: planted path is not schema-valid at relation " + name);
    path_types.push_back(s.relations[r].dst);
    planted.insert(r);
  }
  const TypeId end_type = path_types.back();
  if (end_type == s.target_type)
    throw Error("synthetic spec: planted path must end at a type other than the target type");
  if (s.attribute_dims[end_type] < s.num_classes)
    throw Error("synthetic spec: end type attribute dim smaller than num_classes");

  std::mt19937_64 rng(spec.seed);
  const int nt = s.num_types();
  std::vector<int> counts(nt);
  for (TypeId t = 0; t < nt; ++t) counts[t] = spec.node_types[t].count;

  // Balanced latent classes on every type that lies on the planted path.
  std::vector<std::vector<int>> latent(nt);
  std::set<TypeId> latent_types(path_types.begin(), path_types.end());
  for (TypeId t : latent_types) {
    auto& z = latent[t];
    z.resize(counts[t]);
    for (int i = 0; i < counts[t]; ++i) z[i] = i % s.num_classes;
    std::shuffle(z.begin(), z.end(), rng);
  }

  std::vector<std::vector<Edge>> edges(s.num_relations());
  auto base_of = [&](RelationId r) -> RelationId {
    const auto& inv = spec.relations[r].inverse_of;
    return inv.empty() ? r : s.relation_id(inv);
  };
  for (RelationId r = 0; r < s.num_relations(); ++r) {
    if (!spec.relations[r].inverse_of.empty()) {
      const RelationId b = base_of(r);
      if (!spec.relations[b].inverse_of.empty())
        throw Error("synthetic spec: inverse_of must name a base relation");
      if (s.relations[b].src != s.relations[r].dst || s.relations[b].dst != s.relations[r].src)
        throw Error("synthetic spec: inverse relation " + s.relations[r].name +
                    " does not mirror " + s.relations[b].name);
      continue;
    }
    bool homophilous = planted.count(r) > 0;
    for (RelationId q = 0; q < s.num_relations(); ++q)
      if (planted.count(q) && base_of(q) == r) homophilous = true;
    const auto& rel = s.relations[r];
    const auto& rs = spec.relations[r];
    std::vector<std::vector<LocalId>> pools(homophilous ? s.num_classes : 1);
    for (LocalId j = 0; j < counts[rel.dst]; ++j)
      pools[homophilous ? latent[rel.dst][j] : 0].push_back(j);
    std::uniform_int_distribution<int> deg(rs.min_degree, std::max(rs.min_degree, rs.max_degree));
    for (LocalId i = 0; i < counts[rel.src]; ++i) {
      const auto& pool = pools[homophilous ? latent[rel.src][i] : 0];
      for (LocalId j : sample_without_replacement(pool, deg(rng), rng)) edges[r].emplace_back(i, j);
    }
  }
  for (RelationId r = 0; r < s.num_relations(); ++r)
    if (!spec.relations[r].inverse_of.empty())
      for (const auto& [a, b] : edges[base_of(r)]) edges[r].emplace_back(b, a);

  std::bernoulli_distribution noise(spec.noise_density);
  std::vector<Matrix> attrs(nt);
  for (TypeId t = 0; t < nt; ++t) {
    attrs[t] = Matrix::Zero(counts[t], s.attribute_dims[t]);
    const int first_noise = (t == end_type) ? s.num_classes : 0;
    for (int i = 0; i < counts[t]; ++i) {
      if (t == end_type) attrs[t](i, latent[t][i]) = 1.0;
      for (int j = first_noise; j < s.attribute_dims[t]; ++j) attrs[t](i, j) = noise(rng) ? 1.0 : 0.0;
    }
  }

  std::vector<int> labels(counts[s.target_type]);
  std::bernoulli_distribution keep(spec.signal);
  std::uniform_int_distribution<int> any_class(0, s.num_classes - 1);
  for (int i = 0; i < counts[s.target_type]; ++i) {
    const bool informative = keep(rng);
    const int random_label = any_class(rng);
    labels[i] = informative ? latent[s.target_type][i] : random_label;
  }

  HinGraph g = make_hin(std::move(s), std::move(counts), std::move(attrs), std::move(edges),
                        std::move(labels));
  DataSplit split;
  if (spec.train_count + spec.validation_count > 0)
    split = split_nodes(g, spec.train_count, spec.validation_count, mix64(spec.seed, 0x5117));
  else
    split.test = g.labelled_nodes();
  return {std::move(g), std::move(split)};
}

SyntheticSpec parse_synthetic_spec(std::string_view json_document) {
  using nlohmann::json;
  try {
    const json js = json::parse(json_document);
    SyntheticSpec spec;
    if (js.contains("preset")) {
      const auto preset = js.at("preset").get<std::string>();
      const auto seed = js.value("seed", std::uint64_t{1});
      const auto& c = js.at("counts");
      if (preset == "imdb")
        spec = imdb_shaped_spec(c.at(0), c.at(1), c.at(2), seed);
      else if (preset == "dblp")
        spec = dblp_shaped_spec(c.at(0), c.at(1), c.at(2), c.at(3), seed);
      else
        throw Error("unknown synthetic preset: " + preset);
    }
    if (js.contains("node_types")) {
      spec.node_types.clear();
      for (const auto& t : js.at("node_types"))
        spec.node_types.push_back({t.at("name"), t.at("count"), t.value("attribute_dim", 8)});
    }
    if (js.contains("relations")) {
      spec.relations.clear();
      for (const auto& r : js.at("relations"))
        spec.relations.push_back({r.at("name"), r.at("src"), r.at("dst"), r.value("min_degree", 1),
                                  r.value("max_degree", 3), r.value("inverse_of", std::string())});
    }
    spec.target_type = js.value("target_type", spec.target_type);
    spec.num_classes = js.value("num_classes", spec.num_classes);
    if (js.contains("planted_path"))
      spec.planted_path = js.at("planted_path").get<std::vector<std::string>>();
    spec.signal = js.value("signal", spec.signal);
    spec.noise_density = js.value("noise_density", spec.noise_density);
    spec.train_count = js.value("train_count", spec.train_count);
    spec.validation_count = js.value("validation_count", spec.validation_count);
    spec.seed = js.value("seed", spec.seed);
    return spec;
  } catch (const json::exception& e) {
    throw Error(std::string("synthetic spec parse failure: ") + e.what());
  }
}

SyntheticSpec imdb_shaped_spec(int movies, int directors, int actors, std::uint64_t seed) {
  SyntheticSpec s;
  s.node_types = {{"Movie", movies, 16}, {"Director", directors, 16}, {"Actor", actors, 16}};
  s.relations = {{"M-D", "Movie", "Director", 1, 1, ""},
                 {"D-M", "Director", "Movie", 0, 0, "M-D"},
                 {"M-A", "Movie", "Actor", 2, 4, ""},
                 {"A-M", "Actor", "Movie", 0, 0, "M-A"}};
  s.target_type = "Movie";
  s.num_classes = 3;
  s.planted_path = {"M-A"};
  s.seed = seed;
  return s;
}

SyntheticSpec dblp_shaped_spec(int authors, int papers, int terms, int venues, std::uint64_t seed) {
  SyntheticSpec s;
  s.node_types = {{"Author", authors, 16},
                  {"Paper", papers, 16},
                  {"Term", terms, 16},
                  {"Venue", venues, 16}};
  s.relations = {{"A-P", "Author", "Paper", 2, 4, ""},
                 {"P-A", "Paper", "Author", 0, 0, "A-P"},
                 {"P-T", "Paper", "Term", 1, 3, ""},
                 {"T-P", "Term", "Paper", 0, 0, "P-T"},
                 {"P-V", "Paper", "Venue", 1, 1, ""},
                 {"V-P", "Venue", "Paper", 0, 0, "P-V"}};
  s.target_type = "Author";
  s.num_classes = 3;
  s.planted_path = {"A-P", "P-V"};
  s.seed = seed;
  return s;
}

}  // namespace rlhgnn
