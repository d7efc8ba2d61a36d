#pragma once

#include "rlhgnn/agent.hpp"
#include "rlhgnn/agg_plan.hpp"
#include "rlhgnn/hgnn.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rlhgnn {

enum class Variant { RlHgnn, RlHgnnPP };

std::string variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct TrainConfig {
  Variant variant = Variant::RlHgnnPP;
  int max_timesteps = 2;  // T
  int rounds = 0;         // K; 0 picks the variant default (20 for rl-hgnn, 200 for rl-hgnn-pp)
  int inner_rounds = 10;  // B: HGNN steps per design step (rl-hgnn), normalizer fit rounds (rl-hgnn-pp)
  int batch_size = 256;   // nodes whose transitions are stored per step; capped at the target count

  double gamma = 0.95;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.5;
  int sync_every = 20;
  int reward_window = 5;
  int buffer_multiplier = 50;  // capacity = multiplier * |validation|
  int dqn_batch = 32;
  double q_learning_rate = 1e-3;

  double learning_rate = 0.005;
  double weight_decay = 1e-4;
  int hidden_dim = 128;
  int heads = 8;
  double dropout = 0.5;
  double leaky_slope = 0.2;
  bool literal_target_message = false;
  bool serial_kernel = false;

  int fanout_cap = 64;
  std::uint64_t seed = 1;
  int train_count = 0;  // used when the graph carries no split
  int validation_count = 0;
  int threads = 0;      // 0 leaves the OpenMP default

  int resolved_rounds() const;
  HgnnConfig hgnn_config() const;
  void validate() const;
};

TrainConfig parse_train_config(std::string_view json_document);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
};

/// Pooled and per-class F1 over `nodes`; classes absent from both predictions
/// and labels are left out of the macro mean.
F1Scores evaluate_f1(std::span<const int> predictions, std::span<const int> labels,
                     std::span<const int> nodes, int num_classes);

struct StepRecord {
  int step = 0;
  int round = 0;     // rl-hgnn: round k; rl-hgnn-pp: design cycle
  int timestep = 0;  // rl-hgnn: t in 0..T; rl-hgnn-pp: t in 1..T
  std::vector<int> actions;  // per target node, -1 when the node did not act
  double reward = 0.0;
  F1Scores validation;
  F1Scores test;
  std::optional<double> q_loss;
  double hgnn_loss = 0.0;
  double wall_ms = 0.0;
};

struct EpisodeReport {
  Variant variant = Variant::RlHgnnPP;
  int max_timesteps = 0;
  std::vector<std::string> action_names;
  std::vector<StepRecord> steps;
  int best_round = -1;
  F1Scores best_validation;
  F1Scores best_test;
  std::vector<std::string> best_paths;          // per target node
  std::vector<std::vector<int>> best_actions;   // [decision][node], -1 when not acting
  double design_ms = 0.0;

  /// One row per step. Timing is the last column.
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static EpisodeReport from_json(const nlohmann::json& j);
};

struct ActionStats {
  std::vector<std::string> action_names;
  std::vector<std::vector<double>> per_timestep;  // [decision][action], sums to 1 where anyone acted
  std::vector<int> acting;                        // nodes acting per decision
  std::vector<std::pair<std::string, double>> path_table;  // non-empty paths, descending
  double stop_at_zero = 0.0;

  std::string to_text() const;
};

ActionStats action_report(const EpisodeReport& report);

struct RunResult {
  TrainConfig config;
  HgnnParams params;  // snapshot from the best round
  DqnAgent agent;     // state at the end of training
  QNetwork best_q;    // Q-network as it was at the best round
  Normalizer normalizer;
  EpisodeReport report;
  std::vector<Episode> best_episodes;
  DataSplit split;
};

RunResult run_rl_hgnn(const TrainConfig& config, const HinGraph& g, const DataSplit& split,
                      const QNetwork* initial_q = nullptr);
RunResult run_rl_hgnn_pp(const TrainConfig& config, const HinGraph& g, const DataSplit& split,
                         const QNetwork* initial_q = nullptr);
RunResult run_training(const TrainConfig& config, const HinGraph& g, const DataSplit& split);

/// Split from the graph file when present, otherwise drawn from the config counts.
DataSplit resolve_split(const TrainConfig& config, const HinGraph& g,
                        const std::optional<DataSplit>& stored);

struct FixedPathResult {
  F1Scores validation;
  F1Scores test;
};

/// Ablation: every target node uses `path`; one persistent HGNN trained for
/// resolved_rounds() steps, best validation step reported.
FixedPathResult run_fixed_path(const TrainConfig& config, const HinGraph& g, const DataSplit& split,
                               const MetaPath& path);

/// Episodes of every target node, in local-id order, built by following
/// `path` as far as the graph allows.
std::vector<Episode> fixed_path_episodes(const HinGraph& g, const MetaPath& path, int fanout_cap,
                                         std::uint64_t seed);

void write_run(const std::filesystem::path& dir, const RunResult& run);

struct EvalResult {
  Variant variant = Variant::RlHgnnPP;
  F1Scores validation;
  F1Scores test;
  ActionStats paths;
};

/// Reloads a run directory, designs paths greedily with the saved agent and
/// scores the saved HGNN on `g`.
EvalResult evaluate_checkpoint(const std::filesystem::path& dir, const HinGraph& g,
                               const std::optional<DataSplit>& split);

struct BenchAggRow {
  int timesteps = 0;
  AggregationStats stats;
  std::size_t enumerated_naive = 0;  // recount from instance enumeration
};

/// Random legal relation sequences (one per target node, no Stop), truncated to
/// each T so that larger T extends the same paths.
std::vector<BenchAggRow> bench_aggregation(const HinGraph& g, const std::vector<int>& timesteps,
                                           int batch_size, int fanout_cap, std::uint64_t seed);
std::vector<Episode> random_episodes(const HinGraph& g, int length, int batch_size, int fanout_cap,
                                     std::uint64_t seed);

struct RuntimeRow {
  int inner_rounds = 0;
  double rl_hgnn_ms = 0.0;
  double rl_hgnn_pp_ms = 0.0;
  std::vector<double> rl_hgnn_runs;
  std::vector<double> rl_hgnn_pp_runs;
  double ratio() const { return rl_hgnn_pp_ms / rl_hgnn_ms; }
};

/// Mean design-phase wall time for both variants under otherwise equal configs.
std::vector<RuntimeRow> bench_runtime(const TrainConfig& base, const HinGraph& g,
                                      const DataSplit& split, const std::vector<int>& inner_rounds,
                                      int runs);

}  // namespace rlhgnn
