#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rlhgnn/checkpoint.hpp"
#include "rlhgnn/pipeline.hpp"
#include "rlhgnn/synthetic.hpp"

#include <filesystem>
#include <fstream>

using namespace rlhgnn;
namespace fs = std::filesystem;

namespace {

std::pair<HinGraph, DataSplit> small_dblp(std::uint64_t seed = 4) {
  auto spec = dblp_shaped_spec(60, 120, 30, 6, seed);
  spec.train_count = 20;
  spec.validation_count = 20;
  return generate_planted_hin(spec);
}

TrainConfig quick(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.max_timesteps = 2;
  c.rounds = v == Variant::RlHgnn ? 2 : 6;
  c.inner_rounds = 2;
  c.hidden_dim = 16;
  c.heads = 2;
  c.batch_size = 16;
  c.dqn_batch = 8;
  c.seed = 5;
  return c;
}

// All-zero Q-network: every legal action ties.
QNetwork zero_q(int input_dim, int actions) {
  auto q = QNetwork::initialize(input_dim, actions, 1);
  for (auto* t : q.tensors()) t->setZero();
  return q;
}

std::string strip_wall(const std::string& csv) {
  std::string out, line;
  std::istringstream in(csv);
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST_CASE("variant names") {
  CHECK(parse_variant("rl-hgnn") == Variant::RlHgnn);
  CHECK(parse_variant("rl-hgnn-pp") == Variant::RlHgnnPP);
  CHECK(variant_name(Variant::RlHgnnPP) == "rl-hgnn-pp");
  CHECK_THROWS_AS(parse_variant("rl-hgnn++x"), Error);
}

TEST_CASE("config parsing, defaults and validation") {
  const auto c = parse_train_config(R"({"variant":"rl-hgnn","T":3,"B":4,"seed":9})");
  CHECK(c.variant == Variant::RlHgnn);
  CHECK(c.max_timesteps == 3);
  CHECK(c.inner_rounds == 4);
  CHECK(c.resolved_rounds() == 20);
  CHECK(parse_train_config("{}").resolved_rounds() == 200);
  const auto j = to_json(c);
  const auto again = train_config_from_json(j);
  CHECK(to_json(again) == j);
  CHECK(c.hgnn_config().max_timesteps == 3);
  CHECK_THROWS_AS(parse_train_config(R"({"T":0})"), Error);
  CHECK_THROWS_AS(parse_train_config(R"({"gamma":1.5})"), Error);
  CHECK_THROWS_AS(parse_train_config(R"({"variant":"x"})"), Error);
  CHECK_THROWS_AS(parse_train_config("[1,2]"), Error);
  CHECK_THROWS_AS(parse_train_config("{bad"), Error);
}

TEST_CASE("evaluate_f1 edge cases") {
  const std::vector<int> y = {0, 1, 2, 2}, p = {0, 1, 2, 2}, nodes = {0, 1, 2, 3};
  const auto f = evaluate_f1(p, y, nodes, 4);  // class 3 absent everywhere
  CHECK(f.micro == 1.0);
  CHECK(f.macro == 1.0);
  CHECK_THROWS_AS(evaluate_f1(p, y, std::vector<int>{}, 3), Error);
  CHECK_THROWS_AS(evaluate_f1(std::vector<int>{0, 5, 0, 0}, y, nodes, 3), Error);
}

TEST_CASE("fixed-path episodes and the ablation run") {
  const auto [g, split] = small_dblp();
  const auto& s = g.schema();
  const auto path = parse_metapath("Author -A-P-> Paper -P-V-> Venue", s);
  const auto eps = fixed_path_episodes(g, path, 0, 1);
  REQUIRE(eps.size() == 60);
  for (const auto& e : eps) CHECK(e.path == path);
  auto c = quick(Variant::RlHgnnPP);
  c.rounds = 150;
  c.learning_rate = 0.02;
  const auto r = run_fixed_path(c, g, split, path);
  CHECK(r.validation.micro > 0.8);
  CHECK_THROWS_AS(run_fixed_path(c, g, split, parse_metapath("Paper -P-V-> Venue", s)), Error);
}

TEST_CASE("rl-hgnn: ties go to the lowest action index") {
  const auto [g, split] = small_dblp();
  auto c = quick(Variant::RlHgnn);
  c.rounds = 1;
  c.max_timesteps = 1;
  c.epsilon_start = c.epsilon_end = 0.0;
  c.dqn_batch = 10000;
  const auto q = zero_q(g.schema().attribute_dims[0], g.schema().num_relations() + 1);
  const auto r = run_rl_hgnn(c, g, split, &q);
  // From Author only A-P (index 0) and Stop are legal.
  for (const auto& p : r.report.best_paths) CHECK(p == "Author -A-P-> Paper");
  CHECK(r.report.steps.size() == 2);  // t = 0 and t = T
}

TEST_CASE("rl-hgnn-pp: ties go to the lowest action index") {
  const auto [g, split] = small_dblp();
  auto c = quick(Variant::RlHgnnPP);
  c.rounds = 2;
  c.epsilon_start = c.epsilon_end = 0.0;
  c.dqn_batch = 10000;
  const auto q = zero_q(c.hidden_dim, g.schema().num_relations() + 1);
  const auto r = run_rl_hgnn_pp(c, g, split, &q);
  // A-P then the lowest legal relation from Paper, which is P-A.
  for (const auto& p : r.report.best_paths) CHECK(p == "Author -A-P-> Paper -P-A-> Author");
}

TEST_CASE("training is deterministic apart from timings") {
  const auto [g, split] = small_dblp();
  for (Variant v : {Variant::RlHgnn, Variant::RlHgnnPP}) {
    const auto c = quick(v);
    const auto a = run_training(c, g, split);
    const auto b = run_training(c, g, split);
    CHECK(strip_wall(a.report.to_csv()) == strip_wall(b.report.to_csv()));
    CHECK(a.report.best_paths == b.report.best_paths);
  }
}

TEST_CASE("report structure, action report and run directory") {
  const auto [g, split] = small_dblp();
  const auto c = quick(Variant::RlHgnnPP);
  const auto r = run_training(c, g, split);
  const auto& rep = r.report;
  CHECK(rep.steps.size() == static_cast<std::size_t>(c.rounds));
  CHECK(rep.best_paths.size() == 60);
  CHECK(rep.best_round >= 0);
  for (std::size_t i = 0; i < rep.steps.size(); ++i) {
    CHECK(rep.steps[i].timestep == static_cast<int>(i) % 2 + 1);
    CHECK(rep.steps[i].actions.size() == 60);
  }
  const auto csv = rep.to_csv();
  CHECK(csv.rfind("step,round,timestep,ratio_A-P,", 0) == 0);
  CHECK(csv.find(",ratio_STOP,reward,micro_f1,macro_f1,test_micro_f1,test_macro_f1,q_loss,hgnn_loss,wall_ms\n") !=
        std::string::npos);
  const auto back = EpisodeReport::from_json(rep.to_json());
  CHECK(back.to_csv() == csv);

  const auto stats = action_report(rep);
  double total = stats.stop_at_zero;
  for (const auto& [p, f] : stats.path_table) total += f;
  CHECK(total == doctest::Approx(1.0));
  for (std::size_t t = 0; t < stats.per_timestep.size(); ++t)
    if (stats.acting[t] > 0) {
      double sum = 0;
      for (double x : stats.per_timestep[t]) sum += x;
      CHECK(sum == doctest::Approx(1.0));
    }
  CHECK(stats.to_text().find("meta-path") != std::string::npos);
  CHECK_THROWS_AS(action_report(EpisodeReport{}), Error);

  const auto dir = fs::temp_directory_path() / "rlhgnn_pipeline_run";
  fs::remove_all(dir);
  write_run(dir, r);
  for (const char* f : {"config.json", "split.json", "metrics.csv", "report.json", "paths.txt", "hgnn.ckpt", "agent.ckpt"})
    CHECK(fs::exists(dir / f));
  const auto ev = evaluate_checkpoint(dir, g, std::nullopt);
  CHECK(ev.variant == Variant::RlHgnnPP);
  CHECK(ev.validation.micro >= 0.0);
  CHECK(load_agent(dir / "agent.ckpt").has_normalizer);
}

TEST_CASE("action_report counts a bare start type as stop at zero") {
  EpisodeReport rep;
  rep.action_names = {"A-P", "P-A", "STOP"};
  rep.steps.resize(1);
  rep.best_round = 0;
  rep.best_paths = {"Author", "Author -A-P-> Paper", "Author -A-P-> Paper", "Author"};
  rep.best_actions = {{2, 0, 0, 2}, {-1, 2, 2, -1}};
  const auto st = action_report(rep);
  CHECK(st.stop_at_zero == 0.5);
  REQUIRE(st.path_table.size() == 1);
  CHECK(st.path_table[0].second == 0.5);
  CHECK(st.acting == std::vector<int>{4, 2});
  CHECK(st.per_timestep[1][2] == 1.0);
}

TEST_CASE("aggregation benchmark rows are consistent") {
  const auto g = generate_planted_hin(imdb_shaped_spec(80, 15, 100, 2)).first;
  const auto rows = bench_aggregation(g, {1, 2, 3}, 80, 0, 3);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.stats.naive_steps == r.enumerated_naive);
    CHECK(r.stats.merged_steps <= r.stats.naive_steps);
  }
  const auto e1 = random_episodes(g, 1, 80, 0, 3);
  const auto e3 = random_episodes(g, 3, 80, 0, 3);
  for (std::size_t i = 0; i < e1.size(); ++i)
    if (e1[i].path.length() == 1) CHECK(e3[i].path.relations.front() == e1[i].path.relations.front());
  CHECK_THROWS_AS(bench_aggregation(g, {0}, 10, 0, 1), Error);
}

TEST_CASE("resolve_split prefers the stored split") {
  const auto [g, split] = small_dblp();
  TrainConfig c;
  CHECK(resolve_split(c, g, split).train == split.train);
  CHECK_THROWS_AS(resolve_split(c, g, std::nullopt), Error);
  c.train_count = 10;
  c.validation_count = 10;
  CHECK(resolve_split(c, g, std::nullopt).train.size() == 10);
}
