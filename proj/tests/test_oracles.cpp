// Independent oracles that the rest of the suite leans on.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rlhgnn/optim.hpp"
#include "rlhgnn/pipeline.hpp"
#include "rlhgnn/synthetic.hpp"
#include "support.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <set>

using namespace rlhgnn;
using namespace testsupport;

namespace {

// Majority vote over the one-hot class block of the planted path's end nodes.
int planted_vote(const HinGraph& g, LocalId movie, RelationId rel, int C) {
  std::vector<double> votes(C, 0.0);
  for (LocalId a : g.neighbors({g.schema().target_type, movie}, rel)) {
    const auto row = g.attribute({g.schema().relations[rel].dst, a});
    for (int c = 0; c < C; ++c) votes[c] += row(c);
  }
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::vector<std::vector<int>> confusion(std::span<const int> pred, std::span<const int> y,
                                        std::span<const int> nodes, int C) {
  std::vector<std::vector<int>> m(C, std::vector<int>(C, 0));
  for (int v : nodes) ++m[y[v]][pred[v]];
  return m;
}

// Scores from a confusion matrix, counting TP/FP/FN cell by cell.
F1Scores brute_f1(const std::vector<std::vector<int>>& m) {
  const int C = static_cast<int>(m.size());
  double tp_all = 0, fp_all = 0, fn_all = 0, macro = 0;
  int present = 0;
  for (int c = 0; c < C; ++c) {
    double tp = m[c][c], fp = 0, fn = 0;
    for (int o = 0; o < C; ++o)
      if (o != c) {
        fp += m[o][c];
        fn += m[c][o];
      }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    if (tp + fp + fn > 0) {
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      macro += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      ++present;
    }
  }
  // pooled F1 written as 2TP / (2TP + FP + FN) so that TP = 0 gives 0
  return {2 * tp_all / (2 * tp_all + fp_all + fn_all), macro / present};
}

}  // namespace

TEST_CASE("planted generator: path oracle is exact and target attributes carry nothing") {
  auto spec = imdb_shaped_spec(300, 60, 400, 5);
  spec.train_count = 150;
  spec.validation_count = 50;
  const auto [g, split] = generate_planted_hin(spec);
  const RelationId ma = g.schema().relation_id("M-A");
  const int C = g.schema().num_classes;

  int correct = 0;
  for (LocalId v : split.train) correct += planted_vote(g, v, ma, C) == g.label(v);
  CHECK(correct == static_cast<int>(split.train.size()));

  // Lookup-table classifier on the movie's own attributes: memorise train rows,
  // fall back to the majority class.
  std::map<std::vector<double>, std::vector<int>> table;
  std::vector<int> overall(C, 0);
  for (LocalId v : split.train) {
    const auto row = g.attribute({g.schema().target_type, v});
    auto& counts = table[std::vector<double>(row.data(), row.data() + row.size())];
    counts.resize(C, 0);
    ++counts[g.label(v)];
    ++overall[g.label(v)];
  }
  const int majority = static_cast<int>(std::max_element(overall.begin(), overall.end()) - overall.begin());
  int hits = 0;
  for (LocalId v : split.test) {
    const auto row = g.attribute({g.schema().target_type, v});
    auto it = table.find(std::vector<double>(row.data(), row.data() + row.size()));
    int guess = majority;
    if (it != table.end())
      guess = static_cast<int>(std::max_element(it->second.begin(), it->second.end()) - it->second.begin());
    hits += guess == g.label(v);
  }
  const double acc = static_cast<double>(hits) / split.test.size();
  CHECK(acc < 1.0 / C + 0.12);
}

TEST_CASE("planted generator: signal 0 leaves the path oracle at chance") {
  auto spec = imdb_shaped_spec(600, 60, 400, 9);
  spec.signal = 0.0;
  const auto [g, split] = generate_planted_hin(spec);
  const RelationId ma = g.schema().relation_id("M-A");
  int correct = 0;
  for (int v = 0; v < 600; ++v) correct += planted_vote(g, v, ma, 3) == g.label(v);
  CHECK(correct / 600.0 < 1.0 / 3 + 0.08);
}

TEST_CASE("planted generator: two-hop planted path is recovered by a two-hop vote") {
  auto spec = dblp_shaped_spec(120, 240, 40, 9, 3);
  const auto [g, split] = generate_planted_hin(spec);
  const auto& s = g.schema();
  const RelationId ap = s.relation_id("A-P"), pv = s.relation_id("P-V");
  for (int a = 0; a < 120; ++a) {
    std::vector<double> votes(3, 0.0);
    for (LocalId p : g.neighbors({s.target_type, a}, ap))
      for (LocalId v : g.neighbors({s.type_id("Paper"), p}, pv))
        for (int c = 0; c < 3; ++c) votes[c] += g.attribute({s.type_id("Venue"), v})(c);
    REQUIRE(static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin()) == g.label(a));
  }
}

TEST_CASE("F1 oracle: hand confusion matrix and random agreement with the brute-force scorer") {
  // [[2,1],[1,2]]: rows are true classes.
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  const std::vector<int> p = {0, 0, 1, 0, 1, 1};
  const std::vector<int> nodes = {0, 1, 2, 3, 4, 5};
  const auto f = evaluate_f1(p, y, nodes, 2);
  CHECK(f.micro == doctest::Approx(4.0 / 6.0));
  CHECK(f.macro == doctest::Approx(2.0 / 3.0));
  const auto b = brute_f1(confusion(p, y, nodes, 2));
  CHECK(b.micro == doctest::Approx(f.micro));
  CHECK(b.macro == doctest::Approx(f.macro));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int C = 2 + trial % 4;
    const int n = 5 + trial % 40;
    std::vector<int> yy(n), pp(n), all(n);
    for (int i = 0; i < n; ++i) {
      yy[i] = std::uniform_int_distribution<int>(0, C - 1)(rng);
      pp[i] = std::uniform_int_distribution<int>(0, C - 1)(rng);
      all[i] = i;
    }
    const auto got = evaluate_f1(pp, yy, all, C);
    const auto want = brute_f1(confusion(pp, yy, all, C));
    REQUIRE(got.micro == doctest::Approx(want.micro).epsilon(1e-12));
    REQUIRE(got.macro == doctest::Approx(want.macro).epsilon(1e-12));
  }
}

TEST_CASE("frontier oracle: uncapped expansion equals brute-force instance enumeration") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const HinGraph g = random_hin(seed, {.edge_density = 0.25});
    const auto eps = random_legal_episodes(g, 3, seed * 7, 0, false);
    for (const auto& e : eps) {
      const auto inst = enumerate_instances(g, e.start, e.path);
      if (e.path.length() == 0) continue;
      std::set<LocalId> ends;
      for (const auto& seq : inst) ends.insert(seq.back());
      REQUIRE(std::vector<LocalId>(ends.begin(), ends.end()) == e.trace.reached);
      REQUIRE(trace_instances(e) == inst.size());
      REQUIRE(count_instances(e) == inst.size());
    }
  }
}

TEST_CASE("plan count oracle: builder counts equal the independent recounts") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const HinGraph g = random_hin(seed + 100, {.edge_density = 0.3});
    const auto eps = random_legal_episodes(g, 4, seed, seed % 3 == 0 ? 2 : 0);
    const auto naive = naive_plan(g, eps);
    const auto merged = build_plan(g, eps);
    REQUIRE(naive.step_count() == naive_recount(eps));
    auto want = merged_recount(g, eps);
    auto got = merged.layer_counts();
    REQUIRE(got == want);
  }
}

TEST_CASE("Adam oracle: two scalar steps follow the moment recursion") {
  Matrix p(1, 1);
  p(0, 0) = 1.0;
  AdamConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.01;
  OptState st = OptState::for_params({&p}, c);
  const double g1 = 0.5, g2 = -0.2;
  Matrix g(1, 1);
  g(0, 0) = g1;
  optimizer_step({&p}, {g}, st);
  double m = 0.1 * g1, v = 0.001 * g1 * g1, x = 1.0;
  x -= 0.1 * ((m / 0.1) / (std::sqrt(v / 0.001) + 1e-8) + 0.01 * x);
  CHECK(p(0, 0) == doctest::Approx(x).epsilon(1e-14));
  g(0, 0) = g2;
  optimizer_step({&p}, {g}, st);
  m = 0.9 * m + 0.1 * g2;
  v = 0.999 * v + 0.001 * g2 * g2;
  const double bc1 = 1 - 0.81, bc2 = 1 - 0.999 * 0.999;
  x -= 0.1 * ((m / bc1) / (std::sqrt(v / bc2) + 1e-8) + 0.01 * x);
  CHECK(p(0, 0) == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("classifier gradient oracle: projection-only model matches the closed form") {
  const HinGraph g = random_hin(77);
  HgnnParams params = small_params(g.schema(), 1, 5);
  std::vector<Episode> eps;  // every target node stops at t=0
  for (int i = 0; i < g.node_count(0); ++i) eps.push_back({{0, i}, MetaPath{0, {}}, Frontier::at({0, i})});
  const auto dag = build_plan(g, eps);
  std::vector<int> rows(g.node_count(0));
  std::iota(rows.begin(), rows.end(), 0);
  const auto lg = loss_and_gradients(params, g, dag, g.labels(), rows, {});

  const Matrix X = g.attributes(0);
  const Matrix H = X * params.projections[0].transpose();
  Matrix logits = H * params.classifier.transpose();
  logits.rowwise() += params.classifier_bias.transpose().row(0);
  Matrix P = softmax_rows(logits);
  for (int i = 0; i < P.rows(); ++i) P(i, g.label(i)) -= 1.0;
  const Matrix dW = P.transpose() * H;
  const Matrix dM = params.classifier.transpose() * P.transpose() * X;
  const std::size_t c = lg.grads.size() - 2;
  CHECK((lg.grads[c] - dW).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lg.grads[c + 1] - P.colwise().sum().transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lg.grads[0] - dM).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t t = 1; t < params.projections.size(); ++t) CHECK(lg.grads[t].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention oracle: three sources against a standalone recomputation") {
  const HinGraph g = random_hin(3);
  const HgnnParams params = small_params(g.schema(), 1, 8);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  Matrix Z(5, 16);
  for (Eigen::Index i = 0; i < Z.size(); ++i) Z.data()[i] = n(rng);
  Vector q(16);
  for (auto& x : q) x = n(rng);
  PlanStep st;
  st.sources = {{0, 1}, {2, 2}, {4, 1}};
  const auto& a = params.aggregators[0].attention;
  for (int h = 0; h < 4; ++h) {
    const auto got = attention_coefficients(params, 1, h, Z, q, st);
    std::vector<double> w;
    double total = 0;
    for (const auto& s : st.sources) {
      double e = 0;
      for (int c = 0; c < 4; ++c) e += a(h, c) * Z(s.index, h * 4 + c) + a(h, 4 + c) * q(h * 4 + c);
      e = e > 0 ? e : 0.2 * e;
      w.push_back(s.multiplicity * std::exp(e));
      total += w.back();
    }
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(got[i] == doctest::Approx(w[i] / total).epsilon(1e-13));
  }
}

TEST_CASE("projection oracle: rows equal M_type x") {
  const HinGraph g = random_hin(21);
  const HgnnParams params = small_params(g.schema(), 1, 2);
  std::vector<NodeRef> nodes;
  for (TypeId t = 0; t < g.schema().num_types(); ++t)
    for (int i = 0; i < g.node_count(t); ++i) nodes.push_back({t, i});
  const Matrix H = project_attributes(params, g, nodes);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    const Vector want = params.projections[nodes[r].type] * g.attribute(nodes[r]).transpose();
    REQUIRE((H.row(r).transpose() - want).cwiseAbs().maxCoeff() < 1e-14);
  }
}
