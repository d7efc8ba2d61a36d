// Serial reference vs OpenMP kernel, and merged vs naive plan evaluation.
#include "rlhgnn/pipeline.hpp"
#include "rlhgnn/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <map>

using namespace rlhgnn;

namespace {

struct Fixture {
  HinGraph g;
  std::vector<Episode> episodes;
  AggregationDag merged, naive;
  HgnnParams params;

  explicit Fixture(int T) {
    g = generate_planted_hin(imdb_shaped_spec(300, 60, 400, 7)).first;
    episodes = random_episodes(g, T, 256, 64, 11);
    merged = build_plan(g, episodes);
    naive = naive_plan(g, episodes);
    HgnnConfig c;
    c.max_timesteps = T;
    params = HgnnParams::initialize(g.schema(), c, 3);
  }
};

const Fixture& fixture(int T) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(T);
  if (it == cache.end()) it = cache.emplace(T, Fixture(T)).first;
  return it->second;
}

void run_forward(benchmark::State& state, bool use_naive, Kernel kernel) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  ForwardOptions o;
  o.kernel = kernel;
  const auto& dag = use_naive ? f.naive : f.merged;
  for (auto _ : state) benchmark::DoNotOptimize(hgnn_forward(f.params, f.g, dag, o));
  state.counters["steps"] = static_cast<double>(dag.step_count());
}

void BM_MergedParallel(benchmark::State& s) { run_forward(s, false, Kernel::Parallel); }
void BM_MergedSerial(benchmark::State& s) { run_forward(s, false, Kernel::Serial); }
void BM_NaiveParallel(benchmark::State& s) { run_forward(s, true, Kernel::Parallel); }

}  // namespace

BENCHMARK(BM_MergedParallel)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MergedSerial)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NaiveParallel)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
