#pragma once

#include "rlhgnn/agent.hpp"
#include "rlhgnn/hgnn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace rlhgnn {

// File layout, all integers little-endian:
//   8 bytes   magic "RLHGNNCK"
//   4 bytes   format version (1)
//   8 bytes   header length n
//   n bytes   UTF-8 JSON header; "tensors" lists {name, rows, cols} in body order
//   body      each tensor's rows*cols float64 values, row-major
struct TensorArchive {
  nlohmann::json header;
  std::vector<std::string> names;
  std::vector<Matrix> tensors;
};

void write_archive(const std::filesystem::path& path, nlohmann::json header,
                   const std::vector<std::string>& names, const std::vector<const Matrix*>& tensors);
TensorArchive read_archive(const std::filesystem::path& path);

void save_hgnn(const std::filesystem::path& path, const HgnnParams& params, std::uint64_t seed);
HgnnParams load_hgnn(const std::filesystem::path& path);

struct AgentCheckpoint {
  QNetwork q;
  QNetwork target;
  Normalizer normalizer;
  bool has_normalizer = false;
  nlohmann::json header;
};

/// Header carries gamma, epsilon position, sync period, update counter and the
/// normalizer statistics; both networks go in the body.
void save_agent(const std::filesystem::path& path, const DqnAgent& agent,
                const Normalizer* normalizer, const nlohmann::json& extra);
AgentCheckpoint load_agent(const std::filesystem::path& path);

}  // namespace rlhgnn
