#include "rlhgnn/pipeline.hpp"
#include "rlhgnn/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace rlhgnn;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

HinGraph read_graph(const std::string& path, std::optional<DataSplit>* split) {
  const auto fmt = format_from_path(path);
  HinGraph g = load_hin(path, fmt);
  if (split) *split = fmt == GraphFormat::JsonGraph ? load_split(path) : std::nullopt;
  return g;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  if (out.empty()) throw Error("empty list: " + s);
  return out;
}

void print_scores(const char* what, const F1Scores& f) {
  std::printf("%-12s micro-F1 %.4f  macro-F1 %.4f\n", what, f.micro, f.macro);
}

int cmd_train(const std::string& graph, const std::string& variant, const std::string& config,
              const std::string& out) {
  std::optional<DataSplit> stored;
  const HinGraph g = read_graph(graph, &stored);
  nlohmann::json cj = config.empty() ? nlohmann::json::object() : nlohmann::json::parse(slurp(config));
  if (!variant.empty()) cj["variant"] = variant;
  const TrainConfig cfg = train_config_from_json(cj);
  const DataSplit split = resolve_split(cfg, g, stored);
  const RunResult run = run_training(cfg, g, split);
  write_run(out, run);
  std::printf("%s: %zu steps in %.1f ms, best round %d\n", variant_name(cfg.variant).c_str(),
              run.report.steps.size(), run.report.design_ms, run.report.best_round);
  print_scores("validation", run.report.best_validation);
  print_scores("test", run.report.best_test);
  std::printf("run written to %s\n", out.c_str());
  return 0;
}

int cmd_eval(const std::string& dir, const std::string& graph) {
  std::optional<DataSplit> stored;
  const HinGraph g = read_graph(graph, &stored);
  const EvalResult r = evaluate_checkpoint(dir, g, stored);
  std::printf("%s checkpoint %s\n", variant_name(r.variant).c_str(), dir.c_str());
  print_scores("validation", r.validation);
  print_scores("test", r.test);
  std::printf("\n%s", r.paths.to_text().c_str());
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto report = EpisodeReport::from_json(nlohmann::json::parse(slurp(dir + "/report.json")));
  std::printf("%s, best round %d (validation micro-F1 %.4f)\n\n", variant_name(report.variant).c_str(),
              report.best_round, report.best_validation.micro);
  std::printf("%s", action_report(report).to_text().c_str());
  return 0;
}

int cmd_bench_agg(const std::string& graph, const std::string& ts, int batch, int fanout,
                  std::uint64_t seed, const std::string& json_out) {
  const HinGraph g = read_graph(graph, nullptr);
  const auto T = parse_int_list(ts);
  const auto rows = bench_aggregation(g, T, batch, fanout, seed);
  std::printf("# counts are per batch of %d start nodes\n", batch);
  std::printf("%3s %12s %12s %10s %12s\n", "T", "naive", "merged", "reduction", "enumerated");
  nlohmann::json js = nlohmann::json::array();
  for (const auto& r : rows) {
    std::printf("%3d %12zu %12zu %10.4f %12zu\n", r.timesteps, r.stats.naive_steps, r.stats.merged_steps,
                r.stats.reduction_ratio, r.enumerated_naive);
    js.push_back({{"T", r.timesteps},
                  {"naive_steps", r.stats.naive_steps},
                  {"merged_steps", r.stats.merged_steps},
                  {"reduction_ratio", r.stats.reduction_ratio},
                  {"naive_per_layer", r.stats.naive_per_layer},
                  {"merged_per_layer", r.stats.merged_per_layer},
                  {"enumerated_naive", r.enumerated_naive}});
  }
  if (!json_out.empty()) {
    const auto eps = random_episodes(g, T.back(), batch, fanout, seed);
    const auto merged = build_plan(g, eps);
    const auto stats = plan_stats(naive_plan(g, eps), merged);
    nlohmann::json doc = {{"rows", js}, {"plan", nlohmann::json::parse(plan_to_json(g, merged, &stats))}};
    std::ofstream(json_out) << doc.dump(2) << "\n";
  }
  return 0;
}

int cmd_bench_runtime(const std::string& config) {
  const auto cj = nlohmann::json::parse(slurp(config));
  HinGraph g;
  std::optional<DataSplit> stored;
  if (cj.contains("graph")) {
    g = read_graph(cj["graph"].get<std::string>(), &stored);
  } else if (cj.contains("synthetic")) {
    auto [graph, split] = generate_planted_hin(parse_synthetic_spec(cj["synthetic"].dump()));
    g = std::move(graph);
    stored = split;
  } else {
    throw Error("bench-runtime config needs a \"graph\" path or a \"synthetic\" spec");
  }
  nlohmann::json tc = cj;
  for (const char* k : {"graph", "synthetic", "inner_rounds_sweep", "runs"}) tc.erase(k);
  const TrainConfig base = train_config_from_json(tc);
  const DataSplit split = resolve_split(base, g, stored);
  const std::vector<int> sweep = cj.value("inner_rounds_sweep", std::vector<int>{base.inner_rounds});
  const int runs = cj.value("runs", 3);
  const auto rows = bench_runtime(base, g, split, sweep, runs);
  std::printf("# design-phase wall time, mean of %d runs, K=%d T=%d\n", runs, base.resolved_rounds(),
              base.max_timesteps);
  std::printf("%4s %14s %14s %8s\n", "B", "rl-hgnn ms", "rl-hgnn-pp ms", "ratio");
  for (const auto& r : rows)
    std::printf("%4d %14.1f %14.1f %8.4f\n", r.inner_rounds, r.rl_hgnn_ms, r.rl_hgnn_pp_ms, r.ratio());
  return 0;
}

int cmd_gen_synth(const std::string& spec, const std::string& out) {
  const auto s = parse_synthetic_spec(slurp(spec));
  const auto [g, split] = generate_planted_hin(s);
  save_hin_json(g, out, &split);
  std::printf("wrote %s: %d nodes, %d relations, target %s\n", out.c_str(), g.total_nodes(),
              g.schema().num_relations(), g.schema().node_types[g.schema().target_type].c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-path design with deep Q-learning on heterogeneous graphs"};
  app.require_subcommand(1);

  std::string graph, variant, config, out, dir, timesteps = "1,2,3,4", json_out, spec;
  int batch = 256, fanout = 64;
  std::uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "run rl-hgnn or rl-hgnn-pp and write a run directory");
  train->add_option("--graph", graph, "graph file (.json or .csv)")->required();
  train->add_option("--variant", variant, "rl-hgnn | rl-hgnn-pp")->check(CLI::IsMember({"rl-hgnn", "rl-hgnn-pp"}));
  train->add_option("--config", config, "TrainConfig JSON");
  train->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "score a saved run on a graph");
  eval->add_option("--checkpoint", dir, "run directory")->required();
  eval->add_option("--graph", graph, "graph file")->required();

  auto* report = app.add_subcommand("report-paths", "meta-path table of the best round");
  report->add_option("--run", dir, "run directory")->required();

  auto* agg = app.add_subcommand("bench-agg", "naive vs merged aggregation step counts");
  agg->add_option("--graph", graph, "graph file")->required();
  agg->add_option("--timesteps", timesteps, "comma separated T values");
  agg->add_option("--batch", batch, "start nodes per batch");
  agg->add_option("--fanout", fanout, "children per parent cap");
  agg->add_option("--seed", seed, "path seed");
  agg->add_option("--json", json_out, "write stats and the largest plan as JSON");

  auto* rt = app.add_subcommand("bench-runtime", "design-phase wall time of both variants");
  rt->add_option("--config", config, "bench config JSON")->required();

  auto* gen = app.add_subcommand("gen-synth", "generate a planted meta-path graph");
  gen->add_option("--spec", spec, "synthetic spec JSON")->required();
  gen->add_option("--out", out, "output json-graph file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(graph, variant, config, out);
    if (*eval) return cmd_eval(dir, graph);
    if (*report) return cmd_report(dir);
    if (*agg) return cmd_bench_agg(graph, timesteps, batch, fanout, seed, json_out);
    if (*rt) return cmd_bench_runtime(config);
    if (*gen) return cmd_gen_synth(spec, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
