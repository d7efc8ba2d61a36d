#pragma once

#include "rlhgnn/metapath.hpp"
#include "rlhgnn/optim.hpp"

#include <deque>
#include <optional>
#include <random>
#include <vector>

namespace rlhgnn {

/// Plain ReLU MLP; the last layer is linear and has one output per action.
class QNetwork {
 public:
  QNetwork() = default;
  static QNetwork initialize(int input_dim, int actions, std::uint64_t seed,
                             const std::vector<int>& hidden = {32, 64, 128, 64, 32});
  /// Rebuilds from (weight, bias) pairs in tensors() order.
  static QNetwork from_tensors(std::vector<Matrix> tensors);

  int input_dim() const { return static_cast<int>(weights_.front().cols()); }
  int output_dim() const { return static_cast<int>(weights_.back().rows()); }
  std::size_t layers() const { return weights_.size(); }

  /// Raw action values; used for argmax and TD targets.
  Vector q_values(const Vector& state) const;
  /// One row per state.
  Matrix q_batch(const Matrix& states) const;
  /// Gradients of sum_i <d_out_i, Q(states_i)> in tensors() order.
  std::vector<Matrix> backward(const Matrix& states, const Matrix& d_out) const;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

 private:
  Matrix forward(const Matrix& states, std::vector<Matrix>* acts) const;
  std::vector<Matrix> weights_;  // out x in
  std::vector<Matrix> biases_;   // out x 1
};

/// Softmax of the value vector; reporting only.
Vector action_probabilities(const Vector& q);

struct Transition {
  Vector state;
  int action = 0;
  Vector next_state;
  std::vector<std::uint8_t> next_legal;  // legal mask at next_state
  double reward = 0.0;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }  // 0 = oldest
  /// Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;
  std::deque<Transition>& items() { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// Per-dimension standardiser. Observed states pass through until fit() freezes it.
class Normalizer {
 public:
  explicit Normalizer(int dim = 0) : dim_(dim) {}

  int dim() const { return dim_; }
  bool frozen() const { return frozen_; }
  std::size_t observed() const { return count_; }
  void observe(const Vector& v);
  void fit();
  Vector transform(const Vector& v) const;
  const Vector& mean() const { return mean_; }
  const Vector& stddev() const { return sigma_; }
  void restore(Vector mean, Vector sigma);

  static constexpr double kSigmaFloor = 1e-6;

 private:
  int dim_;
  bool frozen_ = false;
  std::size_t count_ = 0;
  Vector sum_, sum_sq_;
  Vector mean_, sigma_;
};

/// Before freezing: records the state and returns it unchanged.
Vector state_pp(Normalizer& normalizer, const Vector& rep);

/// (arrived mean + previous) / 2; the mean is zero padded or truncated to the
/// previous state's width when the frontier type has a different attribute size.
Vector state_static(const HinGraph& g, const Frontier& frontier, const Vector& prev_state);

class RewardHistory {
 public:
  explicit RewardHistory(int window = 5);
  int window() const { return window_; }
  const std::deque<double>& values() const { return values_; }
  /// Mean of the stored entries; nullopt when empty.
  std::optional<double> baseline() const;
  void record(double metric);

 private:
  int window_;
  std::deque<double> values_;
};

/// current - baseline (0 on an empty history), then records current.
double compute_reward(RewardHistory& history, double current);

/// Legal argmax with ties to the lowest index.
Action greedy_action(const Vector& q, const ActionMask& mask);
Action select_action(const Vector& q, const ActionMask& mask, double epsilon, std::mt19937_64& rng);

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  long decay_steps = 1;  // linear from start to end over this many steps

  double value(long step) const;
};

double td_loss(const QNetwork& q, const QNetwork& target, const std::vector<const Transition*>& batch,
               double gamma);

struct DqnConfig {
  double gamma = 0.95;
  int sync_every = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
};

/// Samples a batch, applies one optimizer step to q only. Returns the TD loss
/// measured before the step.
double dqn_step(QNetwork& q, const QNetwork& target, const ReplayBuffer& buffer, OptState& opt,
                double gamma, std::size_t batch_size, std::mt19937_64& rng);

void sync_target(const QNetwork& q, QNetwork& target);

/// Q-network, target network, buffer, optimizer and counters owned by one training loop.
struct DqnAgent {
  DqnConfig config;
  QNetwork q;
  QNetwork target;
  OptState opt;
  ReplayBuffer buffer;
  long updates = 0;
  std::mt19937_64 rng;

  DqnAgent() = default;
  DqnAgent(int state_dim, int actions, std::size_t capacity, const DqnConfig& config,
           std::uint64_t seed);

  /// One DQN update when the buffer holds a full batch; syncs the target every
  /// sync_every updates. Returns the loss, or nullopt when skipped.
  std::optional<double> update();
};

}  // namespace rlhgnn
