#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rlhgnn/agent.hpp"
#include "support.hpp"

#include <map>

using namespace rlhgnn;

namespace {

ActionMask mask_of(std::vector<std::uint8_t> legal) { return {std::move(legal)}; }

Transition transition(Vector s, int a, double r, bool terminal, Vector next = {}) {
  Transition t;
  t.state = s;
  t.action = a;
  t.reward = r;
  t.terminal = terminal;
  t.next_state = next.size() ? next : s;
  return t;
}

}  // namespace

TEST_CASE("Q-network shapes, init and rebuild") {
  const auto q = QNetwork::initialize(7, 5, 3);
  CHECK(q.input_dim() == 7);
  CHECK(q.output_dim() == 5);
  CHECK(q.layers() == 6);
  for (std::size_t i = 1; i < q.tensors().size(); i += 2) CHECK(q.tensors()[i]->cwiseAbs().maxCoeff() == 0.0);
  std::vector<Matrix> copy;
  for (const auto* t : q.tensors()) copy.push_back(*t);
  const auto r = QNetwork::from_tensors(copy);
  const Vector s = Vector::LinSpaced(7, -1, 1);
  CHECK(r.q_values(s) == q.q_values(s));
  CHECK_THROWS_AS(q.q_values(Vector::Zero(3)), Error);
  CHECK_THROWS_AS(QNetwork::initialize(0, 3, 1), Error);
  copy.pop_back();
  CHECK_THROWS_AS(QNetwork::from_tensors(copy), Error);
}

TEST_CASE("Q-network backward matches finite differences") {
  auto q = QNetwork::initialize(4, 3, 8, {6, 5});
  // nonzero biases so every unit is exercised
  for (std::size_t i = 1; i < q.tensors().size(); i += 2) q.tensors()[i]->setConstant(0.05);
  Matrix S = Matrix::Random(5, 4);
  Matrix D = Matrix::Random(5, 3);
  auto loss = [&] { return (q.q_batch(S).array() * D.array()).sum(); };
  const auto grads = q.backward(S, D);
  const auto res = finite_diff_check(q.tensors(), grads, loss, 1e-6, 200, 1);
  CHECK(res.max_relative_error < 1e-5);
}

TEST_CASE("greedy and epsilon-greedy selection respect the mask") {
  Vector q(4);
  q << 1.0, 3.0, 3.0, 9.0;
  CHECK(greedy_action(q, mask_of({1, 1, 1, 0})).index == 1);  // tie to lowest index
  CHECK(greedy_action(q, mask_of({1, 1, 1, 1})).index == 3);
  CHECK(greedy_action(Vector::Zero(4), mask_of({0, 1, 1, 1})).index == 1);
  CHECK_THROWS_AS(greedy_action(q, mask_of({0, 0, 0, 0})), Error);
  CHECK_THROWS_AS(greedy_action(q, mask_of({1, 1})), Error);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) CHECK(select_action(q, mask_of({1, 1, 1, 0}), 0.0, rng).index == 1);
  std::map<int, int> seen;
  for (int i = 0; i < 3000; ++i) ++seen[select_action(q, mask_of({1, 0, 1, 1}), 1.0, rng).index];
  CHECK(seen.count(1) == 0);
  for (int a : {0, 2, 3}) CHECK(seen[a] > 850);
}

TEST_CASE("epsilon schedule is linear then flat") {
  EpsilonSchedule e{1.0, 0.05, 100};
  CHECK(e.value(0) == 1.0);
  CHECK(e.value(50) == doctest::Approx(0.525));
  CHECK(e.value(100) == 0.05);
  CHECK(e.value(10000) == 0.05);
  CHECK(e.value(-3) == 1.0);
}

TEST_CASE("replay buffer is FIFO with a capacity") {
  ReplayBuffer b(3);
  for (int i = 0; i < 5; ++i) b.push(transition(Vector::Zero(2), 0, i, true));
  CHECK(b.size() == 3);
  CHECK(b.at(0).reward == 2.0);
  CHECK(b.at(2).reward == 4.0);
  std::mt19937_64 rng(2);
  CHECK(b.sample(3, rng).size() == 3);
  CHECK_THROWS_AS(b.sample(4, rng), Error);
  CHECK_THROWS_AS(b.sample(0, rng), Error);
  CHECK_THROWS_AS(b.push(transition(Vector::Zero(2), 0, std::nan(""), true)), Error);
  CHECK_THROWS_AS(ReplayBuffer(0), Error);
}

TEST_CASE("normalizer: pass-through, fit, floor and restore") {
  Normalizer n(3);
  Vector a(3), b(3);
  a << 1, 5, 2;
  b << 3, 5, -2;
  CHECK(state_pp(n, a) == a);
  CHECK(state_pp(n, b) == b);
  CHECK(n.observed() == 2);
  n.fit();
  CHECK(n.frozen());
  CHECK(n.mean()(0) == 2.0);
  CHECK(n.stddev()(0) == 1.0);
  CHECK(n.stddev()(1) == Normalizer::kSigmaFloor);
  const Vector t = state_pp(n, a);
  CHECK(t(0) == -1.0);
  CHECK(t(1) == 0.0);
  CHECK(t(2) == 1.0);
  CHECK(n.observed() == 2);  // frozen: no more observations
  CHECK_THROWS_AS(n.transform(Vector::Zero(2)), Error);
  Normalizer m(3);
  CHECK_THROWS_AS(m.fit(), Error);
  m.restore(n.mean(), n.stddev());
  CHECK(m.transform(b) == n.transform(b));
}

TEST_CASE("state_static pads or truncates the arrived mean") {
  HinSchema s;
  s.node_types = {"A", "B"};
  s.relations = {{"A-B", 0, 1}};
  s.attribute_dims = {3, 1};
  s.num_classes = 2;
  Matrix xa(1, 3), xb(2, 1);
  xa << 1, 2, 3;
  xb << 2, 4;
  const auto g = make_hin(s, {1, 2}, {xa, xb}, {{{0, 0}, {0, 1}}}, {0});
  const Vector prev = xa.row(0).transpose();
  const auto f = expand_frontier(g, Frontier::at({0, 0}), 0);
  const Vector st = state_static(g, f, prev);
  REQUIRE(st.size() == 3);
  CHECK(st(0) == doctest::Approx((3.0 + 1.0) / 2));
  CHECK(st(1) == doctest::Approx(1.0));
  CHECK(st(2) == doctest::Approx(1.5));
  // truncation: a wide mean into a narrow state
  const Vector narrow = state_static(g, Frontier::at({0, 0}), Vector::Zero(1));
  CHECK(narrow.size() == 1);
  CHECK(narrow(0) == 0.5);
}

TEST_CASE("rewards against a sliding baseline") {
  RewardHistory h(3);
  CHECK_FALSE(h.baseline().has_value());
  CHECK(compute_reward(h, 0.5) == 0.0);
  CHECK(compute_reward(h, 0.7) == doctest::Approx(0.2));
  CHECK(compute_reward(h, 0.3) == doctest::Approx(0.3 - 0.6));
  CHECK(compute_reward(h, 0.9) == doctest::Approx(0.9 - 0.5));
  CHECK(h.values().size() == 3);
  CHECK(h.values().front() == 0.7);
  CHECK_THROWS_AS(RewardHistory(0), Error);
}

TEST_CASE("td loss by hand, with terminal and masked bootstraps") {
  const auto q = QNetwork::initialize(2, 3, 4, {4});
  const auto target = QNetwork::initialize(2, 3, 5, {4});
  Vector s0(2), s1(2);
  s0 << 0.3, -0.7;
  s1 << 1.0, 0.5;
  auto t_term = transition(s0, 2, 1.5, true, s1);
  auto t_boot = transition(s0, 0, -0.5, false, s1);
  t_boot.next_legal = {0, 1, 1};
  const double gamma = 0.9;
  const Vector qn = target.q_values(s1);
  const double y0 = 1.5, y1 = -0.5 + gamma * std::max(qn(1), qn(2));
  const Vector qs = q.q_values(s0);
  const double want = (std::pow(y0 - qs(2), 2) + std::pow(y1 - qs(0), 2)) / 2;
  CHECK(td_loss(q, target, {&t_term, &t_boot}, gamma) == doctest::Approx(want).epsilon(1e-12));
  auto no_legal = t_boot;
  no_legal.next_legal = {0, 0, 0};
  CHECK_THROWS_AS(td_loss(q, target, {&no_legal}, gamma), Error);
  CHECK_THROWS_AS(td_loss(q, target, {}, gamma), Error);
}

TEST_CASE("dqn updates fit a fixed target, sync period honoured") {
  DqnConfig cfg;
  cfg.batch_size = 4;
  cfg.sync_every = 3;
  DqnAgent agent(2, 2, 100, cfg, 7);
  CHECK_FALSE(agent.update().has_value());
  for (int i = 0; i < 8; ++i) {
    Vector s(2);
    s << (i % 2), 1.0;
    agent.buffer.push(transition(s, i % 2, i % 2 ? 1.0 : -1.0, true));
  }
  const std::vector<const Transition*> all = [&] {
    std::vector<const Transition*> v;
    for (const auto& t : agent.buffer.items()) v.push_back(&t);
    return v;
  }();
  const double before = td_loss(agent.q, agent.target, all, cfg.gamma);
  for (int i = 0; i < 3; ++i) REQUIRE(agent.update().has_value());
  CHECK(agent.updates == 3);
  CHECK(agent.target.q_values(Vector::Ones(2)) == agent.q.q_values(Vector::Ones(2)));
  agent.update();
  CHECK(agent.target.q_values(Vector::Ones(2)) != agent.q.q_values(Vector::Ones(2)));
  for (int i = 0; i < 400; ++i) agent.update();
  CHECK(td_loss(agent.q, agent.target, all, cfg.gamma) < 0.1 * before);
}

TEST_CASE("action probabilities are a softmax") {
  Vector q(3);
  q << 1, 2, 3;
  const Vector p = action_probabilities(q);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(2) > p(1));
}
