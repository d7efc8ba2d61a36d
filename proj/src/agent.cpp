#include "rlhgnn/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace rlhgnn {

QNetwork QNetwork::initialize(int input_dim, int actions, std::uint64_t seed,
                              const std::vector<int>& hidden) {
  if (input_dim <= 0 || actions <= 0) throw Error("QNetwork: non-positive dimensions");
  std::mt19937_64 rng(seed);
  QNetwork q;
  int in = input_dim;
  std::vector<int> widths = hidden;
  widths.push_back(actions);
  for (int out : widths) {
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    q.weights_.push_back(std::move(w));
    q.biases_.push_back(Matrix::Zero(out, 1));
    in = out;
  }
  return q;
}

QNetwork QNetwork::from_tensors(std::vector<Matrix> tensors) {
  if (tensors.empty() || tensors.size() % 2 != 0) throw Error("QNetwork: odd tensor count");
  QNetwork q;
  for (std::size_t i = 0; i < tensors.size(); i += 2) {
    if (tensors[i + 1].rows() != tensors[i].rows() || tensors[i + 1].cols() != 1 ||
        (i > 0 && tensors[i].cols() != q.weights_.back().rows()))
      throw Error("QNetwork: inconsistent layer shapes");
    q.weights_.push_back(std::move(tensors[i]));
    q.biases_.push_back(std::move(tensors[i + 1]));
  }
  return q;
}

Matrix QNetwork::forward(const Matrix& states, std::vector<Matrix>* acts) const {
  if (states.cols() != input_dim())
    throw Error("QNetwork: state width " + std::to_string(states.cols()) + ", expected " +
                std::to_string(input_dim()));
  require_finite(states, "Q-network input");
  Matrix h = states;
  if (acts) acts->push_back(h);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = h * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose().row(0);
    if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
    h = std::move(z);
    if (acts) acts->push_back(h);
  }
  return h;
}

Vector QNetwork::q_values(const Vector& state) const {
  Matrix s = state.transpose();
  return forward(s, nullptr).row(0).transpose();
}

Matrix QNetwork::q_batch(const Matrix& states) const { return forward(states, nullptr); }

std::vector<Matrix> QNetwork::backward(const Matrix& states, const Matrix& d_out) const {
  std::vector<Matrix> acts;
  forward(states, &acts);
  const std::size_t L = weights_.size();
  std::vector<Matrix> dw(L), db(L);
  Matrix delta = d_out;
  for (std::size_t l = L; l-- > 0;) {
    dw[l] = delta.transpose() * acts[l];
    db[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    delta = (delta * weights_[l]).cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
  }
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < L; ++l) {
    out.push_back(std::move(dw[l]));
    out.push_back(std::move(db[l]));
  }
  return out;
}

std::vector<Matrix*> QNetwork::tensors() {
  std::vector<Matrix*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Matrix*> QNetwork::tensors() const {
  std::vector<const Matrix*> out;
  for (auto* m : const_cast<QNetwork*>(this)->tensors()) out.push_back(m);
  return out;
}

Vector action_probabilities(const Vector& q) {
  Vector p = (q.array() - q.maxCoeff()).exp();
  return p / p.sum();
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (!std::isfinite(t.reward)) throw Error("non-finite reward");
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (n == 0) throw Error("sample size must be positive");
  if (n > items_.size())
    throw Error("replay buffer holds " + std::to_string(items_.size()) + " transitions, " +
                std::to_string(n) + " requested");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(n);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

void Normalizer::observe(const Vector& v) {
  if (frozen_) return;
  if (v.size() != dim_) throw Error("normalizer: dimension mismatch");
  if (count_ == 0) {
    sum_ = Vector::Zero(dim_);
    sum_sq_ = Vector::Zero(dim_);
  }
  sum_ += v;
  sum_sq_ += v.cwiseAbs2();
  ++count_;
}

void Normalizer::fit() {
  if (count_ == 0) throw Error("normalizer: no states observed before fit");
  const double n = static_cast<double>(count_);
  mean_ = sum_ / n;
  sigma_ = (sum_sq_ / n - mean_.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(kSigmaFloor);
  frozen_ = true;
}

Vector Normalizer::transform(const Vector& v) const {
  if (v.size() != dim_) throw Error("normalizer: dimension mismatch");
  if (!frozen_) return v;
  return (v - mean_).cwiseQuotient(sigma_);
}

void Normalizer::restore(Vector mean, Vector sigma) {
  if (mean.size() != dim_ || sigma.size() != dim_) throw Error("normalizer: dimension mismatch");
  mean_ = std::move(mean);
  sigma_ = sigma.cwiseMax(kSigmaFloor);
  frozen_ = true;
}

Vector state_pp(Normalizer& normalizer, const Vector& rep) {
  if (rep.size() != normalizer.dim()) throw Error("state_pp: dimension mismatch");
  if (!normalizer.frozen()) {
    normalizer.observe(rep);
    return rep;
  }
  return normalizer.transform(rep);
}

Vector state_static(const HinGraph& g, const Frontier& frontier, const Vector& prev_state) {
  const Vector mean = arrived_mean(g, frontier);
  Vector fitted = Vector::Zero(prev_state.size());
  const auto n = std::min(mean.size(), prev_state.size());
  fitted.head(n) = mean.head(n);
  return (fitted + prev_state) / 2.0;
}

RewardHistory::RewardHistory(int window) : window_(window) {
  if (window < 1) throw Error("reward window must be at least 1");
}

std::optional<double> RewardHistory::baseline() const {
  if (values_.empty()) return std::nullopt;
  double s = 0.0;
  for (double v : values_) s += v;
  return s / static_cast<double>(values_.size());
}

void RewardHistory::record(double metric) {
  values_.push_back(metric);
  while (static_cast<int>(values_.size()) > window_) values_.pop_front();
}

double compute_reward(RewardHistory& history, double current) {
  const auto base = history.baseline();
  const double r = base ? current - *base : 0.0;
  history.record(current);
  return r;
}

Action greedy_action(const Vector& q, const ActionMask& mask) {
  if (q.size() != mask.width()) throw Error("action mask width differs from the value head");
  int best = -1;
  for (int i = 0; i < mask.width(); ++i)
    if (mask.allows(i) && (best < 0 || q(i) > q(best))) best = i;
  if (best < 0) throw Error("empty action mask");
  return {best};
}

Action select_action(const Vector& q, const ActionMask& mask, double epsilon, std::mt19937_64& rng) {
  const Action greedy = greedy_action(q, mask);
  if (epsilon <= 0.0) return greedy;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) >= epsilon) return greedy;
  const auto legal = mask.actions();
  std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
  return legal[pick(rng)];
}

double EpsilonSchedule::value(long step) const {
  if (decay_steps <= 0 || step >= decay_steps) return end;
  const double f = static_cast<double>(std::max(step, 0L)) / static_cast<double>(decay_steps);
  return start + (end - start) * f;
}

namespace {

struct TdBatch {
  Matrix states;
  Vector targets;
  std::vector<int> actions;
};

TdBatch td_targets(const QNetwork& target, const std::vector<const Transition*>& batch, double gamma) {
  if (batch.empty()) throw Error("td_loss: empty batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int dim = static_cast<int>(batch.front()->state.size());
  TdBatch b;
  b.states.resize(n, dim);
  Matrix next(n, dim);
  b.targets.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = *batch[i];
    if (t.state.size() != dim || t.next_state.size() != dim) throw Error("td_loss: ragged states");
    b.states.row(i) = t.state.transpose();
    next.row(i) = t.next_state.transpose();
    b.actions.push_back(t.action);
  }
  const Matrix qn = target.q_batch(next);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = *batch[i];
    double bootstrap = 0.0;
    if (!t.terminal) {
      bootstrap = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < qn.cols(); ++a)
        if (t.next_legal.empty() || t.next_legal.at(a)) bootstrap = std::max(bootstrap, qn(i, a));
      if (!std::isfinite(bootstrap)) throw Error("td_loss: next state has no legal action");
    }
    b.targets(i) = t.reward + gamma * bootstrap;
  }
  return b;
}

}  // namespace

double td_loss(const QNetwork& q, const QNetwork& target, const std::vector<const Transition*>& batch,
               double gamma) {
  const TdBatch b = td_targets(target, batch, gamma);
  const Matrix pred = q.q_batch(b.states);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (b.actions[i] < 0 || b.actions[i] >= pred.cols()) throw Error("td_loss: action out of range");
    const double diff = b.targets(i) - pred(i, b.actions[i]);
    loss += diff * diff;
  }
  return loss / static_cast<double>(pred.rows());
}

double dqn_step(QNetwork& q, const QNetwork& target, const ReplayBuffer& buffer, OptState& opt,
                double gamma, std::size_t batch_size, std::mt19937_64& rng) {
  const auto batch = buffer.sample(batch_size, rng);
  const TdBatch b = td_targets(target, batch, gamma);
  const Matrix pred = q.q_batch(b.states);
  const auto n = pred.rows();
  Matrix d_out = Matrix::Zero(n, pred.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = b.actions[i];
    if (a < 0 || a >= pred.cols()) throw Error("dqn_step: action out of range");
    const double diff = b.targets(i) - pred(i, a);
    loss += diff * diff;
    d_out(i, a) = -2.0 * diff / static_cast<double>(n);
  }
  optimizer_step(q.tensors(), q.backward(b.states, d_out), opt);
  return loss / static_cast<double>(n);
}

void sync_target(const QNetwork& q, QNetwork& target) { target = q; }

DqnAgent::DqnAgent(int state_dim, int actions, std::size_t capacity, const DqnConfig& cfg,
                   std::uint64_t seed)
    : config(cfg),
      q(QNetwork::initialize(state_dim, actions, mix64(seed, 0x51))),
      target(q),
      buffer(capacity),
      rng(mix64(seed, 0x52)) {
  AdamConfig a;
  a.learning_rate = cfg.learning_rate;
  a.weight_decay = 0.0;
  opt = OptState::for_params(std::as_const(q).tensors(), a);
}

std::optional<double> DqnAgent::update() {
  if (buffer.size() < static_cast<std::size_t>(config.batch_size)) return std::nullopt;
  const double loss = dqn_step(q, target, buffer, opt, config.gamma, config.batch_size, rng);
  ++updates;
  if (config.sync_every > 0 && updates % config.sync_every == 0) sync_target(q, target);
  return loss;
}

}  // namespace rlhgnn
