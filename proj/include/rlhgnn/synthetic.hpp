#pragma once

#include "rlhgnn/hin.hpp"

#include <string>
#include <utility>
#include <vector>

namespace rlhgnn {

struct SyntheticNodeType {
  std::string name;
  int count = 0;
  int attribute_dim = 8;
};

struct SyntheticRelation {
  std::string name;
  std::string src;
  std::string dst;
  // Out-degree of every source node is drawn uniformly from [min_degree, max_degree].
  int min_degree = 1;
  int max_degree = 3;
  // When set, edges are the transpose of the named relation and degrees are ignored.
  std::string inverse_of;
};

/// Planted-meta-path generator input. Every node on a type of the planted path
/// gets a latent class; planted relations only connect nodes of equal latent
/// class, the path's end type encodes the class as a one-hot attribute block,
/// and all other attributes are Bernoulli noise. Target labels copy the start
/// node's latent class with probability `signal`, otherwise they are uniform.
struct SyntheticSpec {
  std::vector<SyntheticNodeType> node_types;
  std::vector<SyntheticRelation> relations;
  std::string target_type;
  int num_classes = 3;
  std::vector<std::string> planted_path;  // relation names, starting at target_type
  double signal = 1.0;
  double noise_density = 0.2;
  int train_count = 0;
  int validation_count = 0;
  std::uint64_t seed = 1;
};

std::pair<HinGraph, DataSplit> generate_planted_hin(const SyntheticSpec& spec);

SyntheticSpec parse_synthetic_spec(std::string_view json_document);

/// M/D/A graph with M-D, D-M, M-A, A-M; labels ride on actors (planted M-A).
SyntheticSpec imdb_shaped_spec(int movies, int directors, int actors, std::uint64_t seed);

/// A/P/T/V graph with A-P, P-A, P-T, T-P, P-V, V-P; labels ride on venues
/// (planted A-P then P-V).
SyntheticSpec dblp_shaped_spec(int authors, int papers, int terms, int venues, std::uint64_t seed);

}  // namespace rlhgnn
