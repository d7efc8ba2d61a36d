#include "rlhgnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rlhgnn {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'H', 'G', 'N', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("checkpoint truncated");
  return v;
}

}  // namespace

void write_archive(const std::filesystem::path& path, nlohmann::json header,
                   const std::vector<std::string>& names, const std::vector<const Matrix*>& tensors) {
  if (names.size() != tensors.size()) throw Error("write_archive: name count mismatch");
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    list.push_back({{"name", names[i]}, {"rows", tensors[i]->rows()}, {"cols", tensors[i]->cols()}});
  header["tensors"] = list;
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* m : tensors)
    os.write(reinterpret_cast<const char*>(m->data()),
             static_cast<std::streamsize>(m->size() * sizeof(double)));
  if (!os) throw Error("write failed: " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("not a checkpoint file: " + path.string());
  if (get<std::uint32_t>(is) != kVersion) throw Error("unsupported checkpoint version");
  const auto n = get<std::uint64_t>(is);
  std::string text(n, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(n))) throw Error("checkpoint truncated");
  TensorArchive a;
  a.header = nlohmann::json::parse(text);
  for (const auto& t : a.header.at("tensors")) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw Error("checkpoint truncated");
    a.names.push_back(t.at("name").get<std::string>());
    a.tensors.push_back(std::move(m));
  }
  return a;
}

void save_hgnn(const std::filesystem::path& path, const HgnnParams& params, std::uint64_t seed) {
  const auto& c = params.config;
  nlohmann::json h = {{"kind", "hgnn"},
                      {"T", c.max_timesteps},
                      {"d", c.hidden_dim},
                      {"heads", c.heads},
                      {"dropout", c.dropout},
                      {"leaky_slope", c.leaky_slope},
                      {"literal_target_message", c.literal_target_message},
                      {"num_types", params.projections.size()},
                      {"seed", seed}};
  write_archive(path, h, params.tensor_names(), params.tensors());
}

HgnnParams load_hgnn(const std::filesystem::path& path) {
  auto a = read_archive(path);
  const auto& h = a.header;
  if (h.value("kind", "") != "hgnn") throw Error("checkpoint does not hold HGNN parameters");
  HgnnParams p;
  p.config.max_timesteps = h.at("T");
  p.config.hidden_dim = h.at("d");
  p.config.heads = h.at("heads");
  p.config.dropout = h.at("dropout");
  p.config.leaky_slope = h.at("leaky_slope");
  p.config.literal_target_message = h.at("literal_target_message");
  const std::size_t types = h.at("num_types");
  const std::size_t expected = types + 2 * p.config.max_timesteps + 2;
  if (a.tensors.size() != expected) throw Error("HGNN checkpoint has the wrong tensor count");
  std::size_t i = 0;
  for (; i < types; ++i) p.projections.push_back(std::move(a.tensors[i]));
  for (int l = 0; l < p.config.max_timesteps; ++l) {
    AggregatorParams ag;
    ag.weight = std::move(a.tensors[i++]);
    ag.attention = std::move(a.tensors[i++]);
    p.aggregators.push_back(std::move(ag));
  }
  p.classifier = std::move(a.tensors[i++]);
  p.classifier_bias = std::move(a.tensors[i++]);
  return p;
}

void save_agent(const std::filesystem::path& path, const DqnAgent& agent,
                const Normalizer* normalizer, const nlohmann::json& extra) {
  nlohmann::json h = extra;
  h["kind"] = "agent";
  h["gamma"] = agent.config.gamma;
  h["sync_every"] = agent.config.sync_every;
  h["batch_size"] = agent.config.batch_size;
  h["updates"] = agent.updates;
  const auto q = agent.q.tensors();
  const auto t = agent.target.tensors();
  h["q_tensors"] = q.size();
  std::vector<const Matrix*> all(q.begin(), q.end());
  all.insert(all.end(), t.begin(), t.end());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < q.size(); ++i) names.push_back("q." + std::to_string(i));
  for (std::size_t i = 0; i < t.size(); ++i) names.push_back("target." + std::to_string(i));
  Matrix mean, sigma;
  if (normalizer && normalizer->frozen()) {
    mean = normalizer->mean().transpose();
    sigma = normalizer->stddev().transpose();
    h["normalizer"] = {{"dim", normalizer->dim()}, {"fitted_on", normalizer->observed()}};
    all.push_back(&mean);
    all.push_back(&sigma);
    names.push_back("normalizer.mean");
    names.push_back("normalizer.std");
  }
  write_archive(path, h, names, all);
}

AgentCheckpoint load_agent(const std::filesystem::path& path) {
  auto a = read_archive(path);
  if (a.header.value("kind", "") != "agent") throw Error("checkpoint does not hold an agent");
  const std::size_t nq = a.header.at("q_tensors");
  if (a.tensors.size() < 2 * nq) throw Error("agent checkpoint has too few tensors");
  AgentCheckpoint c;
  c.header = a.header;
  c.q = QNetwork::from_tensors({a.tensors.begin(), a.tensors.begin() + nq});
  c.target = QNetwork::from_tensors({a.tensors.begin() + nq, a.tensors.begin() + 2 * nq});
  if (a.header.contains("normalizer")) {
    const int dim = a.header["normalizer"].at("dim");
    c.normalizer = Normalizer(dim);
    c.normalizer.restore(a.tensors[2 * nq].row(0).transpose(), a.tensors[2 * nq + 1].row(0).transpose());
    c.has_normalizer = true;
  }
  return c;
}

}  // namespace rlhgnn
