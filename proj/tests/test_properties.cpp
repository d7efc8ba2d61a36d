// Invariants checked over many seeds.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rlhgnn/checkpoint.hpp"
#include "rlhgnn/pipeline.hpp"
#include "support.hpp"

#include <filesystem>
#include <numeric>

using namespace rlhgnn;
using namespace testsupport;

TEST_CASE("frontiers stay inside the graph and respect the fan-out cap") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto g = random_hin(seed, {.edge_density = 0.35});
    const int cap = 1 + static_cast<int>(seed % 3);
    for (const auto& e : random_legal_episodes(g, 3, seed, cap)) {
      const auto types = e.path.type_sequence(g.schema());
      REQUIRE(e.trace.step() == static_cast<int>(e.path.length()));
      REQUIRE(e.trace.type == types.back());
      for (int k = 0; k < e.trace.step(); ++k) {
        std::map<LocalId, int> per_parent;
        for (const auto& edge : e.trace.steps[k]) {
          REQUIRE(edge.relation == e.path.relations[k]);
          REQUIRE(edge.child >= 0);
          REQUIRE(edge.child < g.node_count(types[k + 1]));
          const auto nb = g.neighbors({types[k], edge.parent}, edge.relation);
          REQUIRE(std::binary_search(nb.begin(), nb.end(), edge.child));
          ++per_parent[edge.parent];
        }
        for (const auto& [p, n] : per_parent) REQUIRE(n <= cap);
      }
    }
  }
}

TEST_CASE("merged plan never exceeds the naive plan, layer by layer") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto g = random_hin(seed * 31, {.edge_density = 0.3});
    const auto eps = random_legal_episodes(g, 4, seed, seed % 2 ? 0 : 3);
    const auto st = plan_stats(naive_plan(g, eps), build_plan(g, eps));
    REQUIRE(st.merged_per_layer.size() == st.naive_per_layer.size());
    for (std::size_t l = 0; l < st.merged_per_layer.size(); ++l)
      REQUIRE(st.merged_per_layer[l] <= st.naive_per_layer[l]);
    REQUIRE(st.reduction_ratio >= 0.0);
    REQUIRE(st.reduction_ratio < 1.0);
  }
}

TEST_CASE("duplicating the batch adds no merged steps") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const auto g = random_hin(seed + 7, {.edge_density = 0.3});
    auto eps = random_legal_episodes(g, 3, seed);
    const auto once = build_plan(g, eps).step_count();
    const auto copy = eps;
    eps.insert(eps.end(), copy.begin(), copy.end());
    REQUIRE(build_plan(g, eps).step_count() == once);
  }
}

TEST_CASE("representations do not depend on batch order") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto g = random_hin(seed + 50, {.edge_density = 0.3});
    auto eps = random_legal_episodes(g, 3, seed);
    const auto p = small_params(g.schema(), 3, seed);
    const Matrix a = hgnn_forward(p, g, build_plan(g, eps), {});
    std::vector<int> perm(eps.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(seed));
    std::vector<Episode> shuffled;
    for (int i : perm) shuffled.push_back(eps[i]);
    const Matrix b = hgnn_forward(p, g, build_plan(g, shuffled), {});
    for (std::size_t i = 0; i < perm.size(); ++i)
      REQUIRE((a.row(perm[i]) - b.row(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("merged and naive forwards agree, with fan-out sampling and the literal message") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const auto g = random_hin(seed * 13, {.edge_density = 0.3});
    const auto eps = random_legal_episodes(g, 3, seed, seed % 3 == 0 ? 2 : 0);
    auto p = small_params(g.schema(), 3, seed, 8, 2);
    p.config.literal_target_message = seed % 2 == 0;
    REQUIRE(max_relative_diff(hgnn_forward(p, g, build_plan(g, eps), {}),
                              hgnn_forward(p, g, naive_plan(g, eps), {})) < 1e-10);
  }
}

TEST_CASE("attention weights are a distribution on every step") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto g = random_hin(seed + 3, {.edge_density = 0.35});
    const auto eps = random_legal_episodes(g, 3, seed);
    const auto dag = build_plan(g, eps);
    const auto p = small_params(g.schema(), 3, seed);
    ForwardTape tape;
    hgnn_forward(p, g, dag, {}, &tape);
    for (std::size_t l = 0; l < tape.layers.size(); ++l)
      for (std::size_t s = 0; s < dag.layers[l].size(); ++s) {
        const auto& st = dag.layers[l][s];
        const auto& a = tape.layers[l].attention[s];
        const std::size_t m = st.sources.size();
        REQUIRE(a.size() == m * p.config.heads);
        for (int h = 0; h < p.config.heads; ++h) {
          double total = 0;
          for (std::size_t i = 0; i < m; ++i) {
            REQUIRE(a[h * m + i] > 0.0);
            total += a[h * m + i];
          }
          REQUIRE(total == doctest::Approx(1.0));
        }
      }
  }
}

TEST_CASE("normalizer output is standardised on its fit data") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(3.0, 2.0);
    Normalizer norm(5);
    std::vector<Vector> xs;
    for (int i = 0; i < 200; ++i) {
      Vector v(5);
      for (auto& x : v) x = n(rng);
      v(4) = 1.0;  // constant column
      xs.push_back(v);
      norm.observe(v);
    }
    norm.fit();
    Vector sum = Vector::Zero(5), sq = Vector::Zero(5);
    for (const auto& v : xs) {
      const Vector t = norm.transform(v);
      REQUIRE(t.allFinite());
      sum += t;
      sq += t.cwiseAbs2();
    }
    for (int j = 0; j < 4; ++j) {
      REQUIRE(std::abs(sum(j) / 200) < 1e-9);
      REQUIRE(sq(j) / 200 == doctest::Approx(1.0));
    }
    REQUIRE(sq(4) == 0.0);
  }
}

TEST_CASE("F1 bounds and micro equals accuracy") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int C = 2 + trial % 5, n = 1 + trial % 50;
    std::vector<int> y(n), p(n), nodes(n);
    int hit = 0;
    for (int i = 0; i < n; ++i) {
      y[i] = std::uniform_int_distribution<int>(0, C - 1)(rng);
      p[i] = std::uniform_int_distribution<int>(0, C - 1)(rng);
      nodes[i] = i;
      hit += y[i] == p[i];
    }
    const auto f = evaluate_f1(p, y, nodes, C);
    REQUIRE(f.micro == doctest::Approx(static_cast<double>(hit) / n));
    REQUIRE(f.macro >= 0.0);
    REQUIRE(f.macro <= 1.0);
  }
}

TEST_CASE("checkpoints round trip random tensors bit for bit") {
  const auto p = std::filesystem::temp_directory_path() / "rlhgnn_prop.ckpt";
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Matrix> ts;
    std::vector<std::string> names;
    for (int i = 0; i < 1 + static_cast<int>(seed % 4); ++i) {
      Matrix m(1 + rng() % 5, 1 + rng() % 5);
      for (Eigen::Index k = 0; k < m.size(); ++k)
        m.data()[k] = std::ldexp(static_cast<double>(rng() >> 11), -40) - 4096.0;
      ts.push_back(m);
      names.push_back("t" + std::to_string(i));
    }
    std::vector<const Matrix*> ptrs;
    for (const auto& m : ts) ptrs.push_back(&m);
    write_archive(p, {{"seed", seed}}, names, ptrs);
    const auto back = read_archive(p);
    REQUIRE(back.tensors.size() == ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) REQUIRE(back.tensors[i] == ts[i]);
  }
}

TEST_CASE("greedy choice is always legal") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const int w = 2 + trial % 6;
    Vector q(w);
    for (auto& x : q) x = n(rng);
    ActionMask m;
    m.legal.assign(w, 0);
    m.legal.back() = 1;
    for (int i = 0; i + 1 < w; ++i) m.legal[i] = rng() % 2;
    const auto a = greedy_action(q, m);
    REQUIRE(m.allows(a.index));
    for (int i = 0; i < w; ++i)
      if (m.allows(i)) REQUIRE(q(i) <= q(a.index));
    REQUIRE(m.allows(select_action(q, m, 0.5, rng).index));
  }
}
