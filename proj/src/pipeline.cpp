#include "rlhgnn/pipeline.hpp"

#include "rlhgnn/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rlhgnn {

std::string variant_name(Variant v) { return v == Variant::RlHgnn ? "rl-hgnn" : "rl-hgnn-pp"; }

Variant parse_variant(std::string_view name) {
  if (name == "rl-hgnn") return Variant::RlHgnn;
  if (name == "rl-hgnn-pp" || name == "rl-hgnn++") return Variant::RlHgnnPP;
  throw Error("unknown variant '" + std::string(name) + "' (expected rl-hgnn or rl-hgnn-pp)");
}

int TrainConfig::resolved_rounds() const {
  if (rounds > 0) return rounds;
  return variant == Variant::RlHgnn ? 20 : 200;
}

HgnnConfig TrainConfig::hgnn_config() const {
  HgnnConfig h;
  h.hidden_dim = hidden_dim;
  h.heads = heads;
  h.max_timesteps = max_timesteps;
  h.dropout = dropout;
  h.leaky_slope = leaky_slope;
  h.literal_target_message = literal_target_message;
  return h;
}

void TrainConfig::validate() const {
  if (max_timesteps < 1) throw Error("config: T must be at least 1");
  if (rounds < 0) throw Error("config: K must be positive");
  if (inner_rounds < 1) throw Error("config: B must be at least 1");
  if (batch_size < 1) throw Error("config: batch size must be positive");
  if (dqn_batch < 1) throw Error("config: dqn_batch must be positive");
  if (buffer_multiplier < 1) throw Error("config: buffer_multiplier must be positive");
  if (gamma < 0.0 || gamma > 1.0) throw Error("config: gamma must lie in [0, 1]");
  if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 || epsilon_end > 1.0)
    throw Error("config: epsilon values must lie in [0, 1]");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw Error("config must be a JSON object");
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  auto rd = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  rd("T", c.max_timesteps);
  rd("max_timesteps", c.max_timesteps);
  rd("K", c.rounds);
  rd("rounds", c.rounds);
  rd("B", c.inner_rounds);
  rd("inner_rounds", c.inner_rounds);
  rd("batch_size", c.batch_size);
  rd("gamma", c.gamma);
  rd("epsilon_start", c.epsilon_start);
  rd("epsilon_end", c.epsilon_end);
  rd("epsilon_decay_fraction", c.epsilon_decay_fraction);
  rd("sync_every", c.sync_every);
  rd("reward_window", c.reward_window);
  rd("buffer_multiplier", c.buffer_multiplier);
  rd("dqn_batch", c.dqn_batch);
  rd("q_learning_rate", c.q_learning_rate);
  rd("learning_rate", c.learning_rate);
  rd("weight_decay", c.weight_decay);
  rd("hidden_dim", c.hidden_dim);
  rd("heads", c.heads);
  rd("dropout", c.dropout);
  rd("leaky_slope", c.leaky_slope);
  rd("literal_target_message", c.literal_target_message);
  rd("serial_kernel", c.serial_kernel);
  rd("fanout_cap", c.fanout_cap);
  rd("seed", c.seed);
  rd("train_count", c.train_count);
  rd("validation_count", c.validation_count);
  rd("threads", c.threads);
  c.validate();
  return c;
}

TrainConfig parse_train_config(std::string_view doc) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(doc);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config parse failure: ") + e.what());
  }
  return train_config_from_json(j);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"variant", variant_name(c.variant)},
          {"T", c.max_timesteps},
          {"K", c.resolved_rounds()},
          {"B", c.inner_rounds},
          {"batch_size", c.batch_size},
          {"gamma", c.gamma},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_decay_fraction", c.epsilon_decay_fraction},
          {"sync_every", c.sync_every},
          {"reward_window", c.reward_window},
          {"buffer_multiplier", c.buffer_multiplier},
          {"dqn_batch", c.dqn_batch},
          {"q_learning_rate", c.q_learning_rate},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"hidden_dim", c.hidden_dim},
          {"heads", c.heads},
          {"dropout", c.dropout},
          {"leaky_slope", c.leaky_slope},
          {"literal_target_message", c.literal_target_message},
          {"serial_kernel", c.serial_kernel},
          {"fanout_cap", c.fanout_cap},
          {"seed", c.seed},
          {"train_count", c.train_count},
          {"validation_count", c.validation_count},
          {"threads", c.threads}};
}

F1Scores evaluate_f1(std::span<const int> predictions, std::span<const int> labels,
                     std::span<const int> nodes, int num_classes) {
  if (nodes.empty()) throw Error("evaluate_f1: empty node set");
  std::vector<long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (int v : nodes) {
    const int p = predictions[v], y = labels[v];
    if (p < 0 || p >= num_classes || y < 0 || y >= num_classes)
      throw Error("evaluate_f1: class id out of range");
    if (p == y) {
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  long TP = 0, FP = 0, FN = 0;
  double macro = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    TP += tp[c];
    FP += fp[c];
    FN += fn[c];
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    macro += 2.0 * tp[c] / static_cast<double>(denom);
    ++present;
  }
  F1Scores s;
  s.micro = 2.0 * TP / static_cast<double>(2 * TP + FP + FN);
  s.macro = macro / present;
  return s;
}

// ---------------------------------------------------------------------------
// reports

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<double> action_ratios(const std::vector<int>& actions, int width) {
  std::vector<double> r(width, 0.0);
  int n = 0;
  for (int a : actions)
    if (a >= 0) {
      r[a] += 1.0;
      ++n;
    }
  if (n > 0)
    for (auto& x : r) x /= n;
  return r;
}

nlohmann::json f1_json(const F1Scores& f) { return {{"micro", f.micro}, {"macro", f.macro}}; }
F1Scores f1_from(const nlohmann::json& j) { return {j.at("micro"), j.at("macro")}; }

}  // namespace

std::string EpisodeReport::to_csv() const {
  std::ostringstream os;
  os << "step,round,timestep";
  for (const auto& a : action_names) os << ",ratio_" << a;
  os << ",reward,micro_f1,macro_f1,test_micro_f1,test_macro_f1,q_loss,hgnn_loss,wall_ms\n";
  const int width = static_cast<int>(action_names.size());
  for (const auto& s : steps) {
    os << s.step << ',' << s.round << ',' << s.timestep;
    for (double r : action_ratios(s.actions, width)) os << ',' << fmt(r);
    os << ',' << fmt(s.reward) << ',' << fmt(s.validation.micro) << ',' << fmt(s.validation.macro)
       << ',' << fmt(s.test.micro) << ',' << fmt(s.test.macro) << ','
       << (s.q_loss ? fmt(*s.q_loss) : std::string()) << ',' << fmt(s.hgnn_loss) << ','
       << fmt(s.wall_ms) << '\n';
  }
  return os.str();
}

nlohmann::json EpisodeReport::to_json() const {
  nlohmann::json steps_js = nlohmann::json::array();
  for (const auto& s : steps) {
    nlohmann::json j = {{"step", s.step},
                        {"round", s.round},
                        {"timestep", s.timestep},
                        {"actions", s.actions},
                        {"reward", s.reward},
                        {"validation", f1_json(s.validation)},
                        {"test", f1_json(s.test)},
                        {"hgnn_loss", s.hgnn_loss},
                        {"wall_ms", s.wall_ms}};
    j["q_loss"] = s.q_loss ? nlohmann::json(*s.q_loss) : nlohmann::json(nullptr);
    steps_js.push_back(std::move(j));
  }
  return {{"variant", variant_name(variant)},
          {"T", max_timesteps},
          {"action_names", action_names},
          {"steps", steps_js},
          {"best_round", best_round},
          {"best_validation", f1_json(best_validation)},
          {"best_test", f1_json(best_test)},
          {"best_paths", best_paths},
          {"best_actions", best_actions},
          {"design_ms", design_ms}};
}

EpisodeReport EpisodeReport::from_json(const nlohmann::json& j) {
  EpisodeReport r;
  r.variant = parse_variant(j.at("variant").get<std::string>());
  r.max_timesteps = j.at("T");
  r.action_names = j.at("action_names").get<std::vector<std::string>>();
  for (const auto& s : j.at("steps")) {
    StepRecord rec;
    rec.step = s.at("step");
    rec.round = s.at("round");
    rec.timestep = s.at("timestep");
    rec.actions = s.at("actions").get<std::vector<int>>();
    rec.reward = s.at("reward");
    rec.validation = f1_from(s.at("validation"));
    rec.test = f1_from(s.at("test"));
    if (!s.at("q_loss").is_null()) rec.q_loss = s.at("q_loss").get<double>();
    rec.hgnn_loss = s.at("hgnn_loss");
    rec.wall_ms = s.at("wall_ms");
    r.steps.push_back(std::move(rec));
  }
  r.best_round = j.at("best_round");
  r.best_validation = f1_from(j.at("best_validation"));
  r.best_test = f1_from(j.at("best_test"));
  r.best_paths = j.at("best_paths").get<std::vector<std::string>>();
  r.best_actions = j.at("best_actions").get<std::vector<std::vector<int>>>();
  r.design_ms = j.at("design_ms");
  return r;
}

ActionStats action_report(const EpisodeReport& report) {
  if (report.steps.empty() || report.best_round < 0 || report.best_paths.empty())
    throw Error("action_report: empty report");
  ActionStats st;
  st.action_names = report.action_names;
  const int width = static_cast<int>(report.action_names.size());
  for (const auto& acts : report.best_actions) {
    st.per_timestep.push_back(action_ratios(acts, width));
    st.acting.push_back(static_cast<int>(std::count_if(acts.begin(), acts.end(), [](int a) { return a >= 0; })));
  }
  std::map<std::string, int> counts;
  int stopped = 0;
  // A zero-length path prints as its bare start type, which never contains an arrow.
  for (const auto& p : report.best_paths) {
    if (p.find("->") == std::string::npos)
      ++stopped;
    else
      ++counts[p];
  }
  const double n = static_cast<double>(report.best_paths.size());
  for (const auto& [path, c] : counts) st.path_table.emplace_back(path, c / n);
  std::stable_sort(st.path_table.begin(), st.path_table.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  st.stop_at_zero = stopped / n;
  return st;
}

std::string ActionStats::to_text() const {
  std::ostringstream os;
  std::size_t w = 24;
  for (const auto& [p, _] : path_table) w = std::max(w, p.size());
  char buf[512];
  os << "meta-path" << std::string(w - 9 + 2, ' ') << "share\n";
  for (const auto& [p, f] : path_table) {
    std::snprintf(buf, sizeof buf, "%-*s  %6.2f%%\n", static_cast<int>(w), p.c_str(), 100.0 * f);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s  %6.2f%%\n", static_cast<int>(w), "(stop at t=0)", 100.0 * stop_at_zero);
  os << buf << "\naction ratios per decision\n";
  os << "decision  acting";
  for (const auto& a : action_names) {
    std::snprintf(buf, sizeof buf, "  %8s", a.c_str());
    os << buf;
  }
  os << '\n';
  for (std::size_t t = 0; t < per_timestep.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%8zu  %6d", t + 1, acting[t]);
    os << buf;
    for (double r : per_timestep[t]) {
      std::snprintf(buf, sizeof buf, "  %8.3f", r);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// training loops

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void apply_threads(const TrainConfig& c) {
#ifdef _OPENMP
  if (c.threads > 0) omp_set_num_threads(c.threads);
#else
  (void)c;
#endif
}

struct Context {
  const TrainConfig& cfg;
  const HinGraph& g;
  const DataSplit& split;
  TypeId target;
  int n;
  std::vector<int> labels;
  std::vector<int> train, val, test;
  ForwardOptions eval_opts;

  Context(const TrainConfig& c, const HinGraph& graph, const DataSplit& s)
      : cfg(c), g(graph), split(s), target(graph.schema().target_type),
        n(graph.node_count(graph.schema().target_type)), labels(graph.labels()),
        train(s.train.begin(), s.train.end()), val(s.validation.begin(), s.validation.end()),
        test(s.test.begin(), s.test.end()) {
    c.validate();
    if (train.empty() || val.empty()) throw Error("training needs non-empty train and validation splits");
    if (c.heads <= 0 || c.hidden_dim % c.heads != 0) throw Error("config: hidden_dim must divide into heads");
    eval_opts.mode = Mode::Eval;
    eval_opts.kernel = c.serial_kernel ? Kernel::Serial : Kernel::Parallel;
    // Unlabelled nodes get a placeholder so loss rows can index the label array directly.
    for (auto& y : labels)
      if (y < 0) y = 0;
    for (int v : train)
      if (graph.label(v) < 0) throw Error("train split contains an unlabelled node");
  }

  std::vector<Episode> fresh() const {
    std::vector<Episode> e(n);
    for (int i = 0; i < n; ++i) {
      const NodeRef s{target, i};
      e[i] = {s, MetaPath{target, {}}, Frontier::at(s)};
    }
    return e;
  }

  std::vector<NodeRef> target_nodes() const {
    std::vector<NodeRef> v(n);
    for (int i = 0; i < n; ++i) v[i] = {target, i};
    return v;
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.learning_rate = cfg.learning_rate;
    a.weight_decay = cfg.weight_decay;
    return a;
  }

  DqnConfig dqn() const {
    DqnConfig d;
    d.gamma = cfg.gamma;
    d.sync_every = cfg.sync_every;
    d.batch_size = cfg.dqn_batch;
    d.learning_rate = cfg.q_learning_rate;
    return d;
  }

  std::size_t capacity() const { return static_cast<std::size_t>(cfg.buffer_multiplier) * val.size(); }

  int action_width() const { return g.schema().num_relations() + 1; }

  std::vector<std::string> action_names() const {
    std::vector<std::string> out;
    for (const auto& r : g.schema().relations) out.push_back(r.name);
    out.push_back("STOP");
    return out;
  }

  double train_step(HgnnParams& params, OptState& opt, const AggregationDag& dag,
                    std::uint64_t dropout_seed) const {
    ForwardOptions o;
    o.mode = Mode::Train;
    o.dropout_seed = dropout_seed;
    auto lg = loss_and_gradients(params, g, dag, labels, train, o);
    optimizer_step(params.tensors(), lg.grads, opt);
    return lg.loss / static_cast<double>(train.size());
  }

  struct Scores {
    Matrix reps;
    F1Scores val, test;
  };

  Scores score(const HgnnParams& params, const AggregationDag& dag) const {
    Scores s;
    s.reps = hgnn_forward(params, g, dag, eval_opts);
    const Matrix probs = classify(params, s.reps);
    std::vector<int> pred(n);
    for (int i = 0; i < n; ++i) probs.row(i).maxCoeff(&pred[i]);
    const int C = g.schema().num_classes;
    s.val = evaluate_f1(pred, labels, val, C);
    if (!test.empty()) s.test = evaluate_f1(pred, labels, test, C);
    return s;
  }

  std::vector<char> sample_batch(const std::vector<int>& acting, std::mt19937_64& rng) const {
    std::vector<int> order = acting;
    std::shuffle(order.begin(), order.end(), rng);
    if (static_cast<int>(order.size()) > cfg.batch_size) order.resize(cfg.batch_size);
    std::vector<char> in(n, 0);
    for (int v : order) in[v] = 1;
    return in;
  }
};

std::vector<std::string> path_strings(const HinGraph& g, const std::vector<Episode>& eps) {
  std::vector<std::string> out;
  for (const auto& e : eps) out.push_back(to_string(e.path, g.schema()));
  return out;
}

// Applies one decision to an episode; dead ends force a stop with the path unchanged.
bool apply_action(const HinGraph& g, Episode& ep, Action a, const ExpandOptions& xo) {
  if (a.is_stop(g.schema())) return false;
  Frontier next = expand_frontier(g, ep.trace, a.relation(), xo);
  if (next.reached.empty()) return false;
  ep.path = extend_path(ep.path, a.relation(), g.schema());
  ep.trace = std::move(next);
  return true;
}

long decay_steps(const TrainConfig& c, long total) {
  return std::max(1L, static_cast<long>(std::llround(c.epsilon_decay_fraction * total)));
}

}  // namespace

DataSplit resolve_split(const TrainConfig& config, const HinGraph& g,
                        const std::optional<DataSplit>& stored) {
  if (stored && !stored->train.empty()) return *stored;
  if (config.train_count <= 0 || config.validation_count <= 0)
    throw Error("graph has no stored split; set train_count and validation_count in the config");
  return split_nodes(g, config.train_count, config.validation_count, mix64(config.seed, 0x5917));
}

RunResult run_rl_hgnn(const TrainConfig& config, const HinGraph& g, const DataSplit& split,
                      const QNetwork* initial_q) {
  if (config.variant != Variant::RlHgnn) throw Error("run_rl_hgnn: config variant is not rl-hgnn");
  apply_threads(config);
  const Context cx(config, g, split);
  const auto& schema = g.schema();
  const int T = config.max_timesteps;
  const int K = config.resolved_rounds();
  const int B = config.inner_rounds;
  const int lambda = schema.attribute_dims[cx.target];
  if (lambda <= 0) throw Error("rl-hgnn states need target-type attributes");

  RunResult res;
  res.config = config;
  res.split = split;
  res.agent = DqnAgent(lambda, cx.action_width(), cx.capacity(), cx.dqn(), config.seed);
  if (initial_q) {
    if (initial_q->input_dim() != lambda || initial_q->output_dim() != cx.action_width())
      throw Error("initial Q-network does not match the graph");
    res.agent.q = *initial_q;
    res.agent.target = *initial_q;
    res.agent.opt = OptState::for_params(std::as_const(res.agent.q).tensors(), res.agent.opt.config);
  }
  auto& rep = res.report;
  rep.variant = config.variant;
  rep.max_timesteps = T;
  rep.action_names = cx.action_names();
  rep.best_validation.micro = -1.0;

  RewardHistory history(config.reward_window);
  const EpsilonSchedule eps{config.epsilon_start, config.epsilon_end,
                            decay_steps(config, static_cast<long>(K) * (T + 1))};
  std::mt19937_64 rng(mix64(config.seed, 0xA1));
  const auto t_start = Clock::now();
  long step = 0;

  for (int k = 0; k < K; ++k) {
    HgnnParams params = HgnnParams::initialize(schema, config.hgnn_config(), mix64(config.seed, 0x1000 + k));
    OptState opt = OptState::for_params(std::as_const(params).tensors(), cx.adam());
    auto episodes = cx.fresh();
    std::vector<Vector> states(cx.n);
    for (int i = 0; i < cx.n; ++i) states[i] = g.attribute({cx.target, i}).transpose();
    std::vector<char> active(cx.n, 1);
    std::vector<std::vector<int>> round_actions;
    const ExpandOptions xo{config.fanout_cap, mix64(config.seed, 0xE0, k)};

    for (int t = 0; t <= T; ++t) {
      const auto t0 = Clock::now();
      StepRecord rec;
      rec.step = static_cast<int>(step);
      rec.round = k;
      rec.timestep = t;
      rec.actions.assign(cx.n, -1);

      std::vector<int> acting;
      for (int i = 0; i < cx.n; ++i)
        if (active[i]) acting.push_back(i);
      const auto in_batch = cx.sample_batch(acting, rng);
      Matrix S(static_cast<Eigen::Index>(acting.size()), lambda);
      for (std::size_t r = 0; r < acting.size(); ++r) S.row(r) = states[acting[r]].transpose();
      const Matrix Q = acting.empty() ? Matrix() : res.agent.q.q_batch(S);
      const double e = eps.value(step);

      std::vector<Transition> pending;
      for (std::size_t r = 0; r < acting.size(); ++r) {
        const int v = acting[r];
        auto& ep = episodes[v];
        const auto mask = valid_actions(schema, ep.trace.type, t == T || static_cast<int>(ep.path.length()) >= T);
        const Vector q = Q.row(r).transpose();
        const Action a = in_batch[v] ? select_action(q, mask, e, rng) : greedy_action(q, mask);
        rec.actions[v] = a.index;
        Transition tr;
        tr.state = states[v];
        tr.action = a.index;
        if (apply_action(g, ep, a, xo)) {
          states[v] = state_static(g, ep.trace, states[v]);
          tr.terminal = static_cast<int>(ep.path.length()) >= T;
        } else {
          active[v] = 0;
          tr.terminal = true;
        }
        tr.next_state = states[v];
        tr.next_legal = valid_actions(schema, ep.trace.type, static_cast<int>(ep.path.length()) >= T).legal;
        if (in_batch[v]) pending.push_back(std::move(tr));
      }

      const AggregationDag dag = build_plan(g, episodes);
      for (int b = 0; b < B; ++b)
        rec.hgnn_loss = cx.train_step(params, opt, dag, mix64(config.seed, 0xD0 + k, t * B + b));
      const auto sc = cx.score(params, dag);
      rec.validation = sc.val;
      rec.test = sc.test;
      rec.reward = compute_reward(history, sc.val.micro);
      for (auto& tr : pending) {
        tr.reward = rec.reward;
        res.agent.buffer.push(std::move(tr));
      }
      rec.q_loss = res.agent.update();
      round_actions.push_back(rec.actions);
      rec.wall_ms = ms_since(t0);
      rep.steps.push_back(std::move(rec));
      ++step;

      if (t == T && sc.val.micro > rep.best_validation.micro) {
        rep.best_round = k;
        rep.best_validation = sc.val;
        rep.best_test = sc.test;
        rep.best_paths = path_strings(g, episodes);
        rep.best_actions = round_actions;
        res.params = params;
        res.best_q = res.agent.q;
        res.best_episodes = episodes;
      }
    }
  }
  rep.design_ms = ms_since(t_start);
  return res;
}

RunResult run_rl_hgnn_pp(const TrainConfig& config, const HinGraph& g, const DataSplit& split,
                         const QNetwork* initial_q) {
  if (config.variant != Variant::RlHgnnPP) throw Error("run_rl_hgnn_pp: config variant is not rl-hgnn-pp");
  apply_threads(config);
  const Context cx(config, g, split);
  const auto& schema = g.schema();
  const int T = config.max_timesteps;
  const int K = config.resolved_rounds();
  const int d = config.hidden_dim;

  RunResult res;
  res.config = config;
  res.split = split;
  res.agent = DqnAgent(d, cx.action_width(), cx.capacity(), cx.dqn(), config.seed);
  if (initial_q) {
    if (initial_q->input_dim() != d || initial_q->output_dim() != cx.action_width())
      throw Error("initial Q-network does not match the graph");
    res.agent.q = *initial_q;
    res.agent.target = *initial_q;
    res.agent.opt = OptState::for_params(std::as_const(res.agent.q).tensors(), res.agent.opt.config);
  }
  res.normalizer = Normalizer(d);
  auto& rep = res.report;
  rep.variant = config.variant;
  rep.max_timesteps = T;
  rep.action_names = cx.action_names();
  rep.best_validation.micro = -1.0;

  HgnnParams params = HgnnParams::initialize(schema, config.hgnn_config(), mix64(config.seed, 0x1000));
  OptState opt = OptState::for_params(std::as_const(params).tensors(), cx.adam());
  RewardHistory history(config.reward_window);
  const EpsilonSchedule eps{config.epsilon_start, config.epsilon_end, decay_steps(config, K)};
  std::mt19937_64 rng(mix64(config.seed, 0xA2));
  const auto targets = cx.target_nodes();

  std::vector<Episode> episodes;
  std::vector<char> active;
  std::vector<std::vector<int>> cycle_actions;
  Matrix prev_reps;
  ExpandOptions xo{config.fanout_cap, 0};
  const auto t_start = Clock::now();

  for (int k = 0; k < K; ++k) {
    const auto t0 = Clock::now();
    const int t = k % T + 1;
    const int cycle = k / T;
    if (t == 1) {
      episodes = cx.fresh();
      active.assign(cx.n, 1);
      cycle_actions.clear();
      xo.seed = mix64(config.seed, 0xE1, cycle);
      prev_reps = project_attributes(params, g, targets);
    }
    StepRecord rec;
    rec.step = k;
    rec.round = cycle;
    rec.timestep = t;
    rec.actions.assign(cx.n, -1);

    std::vector<int> acting;
    for (int i = 0; i < cx.n; ++i)
      if (active[i]) acting.push_back(i);
    const auto in_batch = cx.sample_batch(acting, rng);
    Matrix S(static_cast<Eigen::Index>(acting.size()), d);
    for (std::size_t r = 0; r < acting.size(); ++r) {
      const int v = acting[r];
      const Vector raw = prev_reps.row(v).transpose();
      S.row(r) = (in_batch[v] ? state_pp(res.normalizer, raw) : res.normalizer.transform(raw)).transpose();
    }
    const Matrix Q = acting.empty() ? Matrix() : res.agent.q.q_batch(S);
    const double e = eps.value(k);

    std::vector<Transition> pending;
    std::vector<int> pending_node;
    for (std::size_t r = 0; r < acting.size(); ++r) {
      const int v = acting[r];
      auto& ep = episodes[v];
      const auto mask = valid_actions(schema, ep.trace.type, static_cast<int>(ep.path.length()) >= T);
      const Vector q = Q.row(r).transpose();
      const Action a = in_batch[v] ? select_action(q, mask, e, rng) : greedy_action(q, mask);
      rec.actions[v] = a.index;
      Transition tr;
      tr.state = S.row(r).transpose();
      tr.action = a.index;
      const bool extended = apply_action(g, ep, a, xo);
      if (!extended) active[v] = 0;
      tr.terminal = !extended || static_cast<int>(ep.path.length()) >= T || t == T;
      tr.next_legal = valid_actions(schema, ep.trace.type, static_cast<int>(ep.path.length()) >= T).legal;
      if (in_batch[v]) {
        pending.push_back(std::move(tr));
        pending_node.push_back(v);
      }
    }

    const AggregationDag dag = build_plan(g, episodes);
    auto sc = cx.score(params, dag);
    rec.validation = sc.val;
    rec.test = sc.test;
    rec.reward = compute_reward(history, sc.val.micro);
    for (std::size_t p = 0; p < pending.size(); ++p) {
      auto& tr = pending[p];
      tr.next_state = res.normalizer.transform(sc.reps.row(pending_node[p]).transpose());
      tr.reward = rec.reward;
      res.agent.buffer.push(std::move(tr));
    }
    cycle_actions.push_back(rec.actions);

    if ((t == T || k == K - 1) && sc.val.micro > rep.best_validation.micro) {
      rep.best_round = cycle;
      rep.best_validation = sc.val;
      rep.best_test = sc.test;
      rep.best_paths = path_strings(g, episodes);
      rep.best_actions = cycle_actions;
      res.params = params;
      res.best_q = res.agent.q;
      res.best_episodes = episodes;
    }

    rec.hgnn_loss = cx.train_step(params, opt, dag, mix64(config.seed, 0xD1, k));
    rec.q_loss = res.agent.update();

    if (k + 1 == config.inner_rounds && !res.normalizer.frozen()) {
      res.normalizer.fit();
      for (auto& tr : res.agent.buffer.items()) {
        tr.state = res.normalizer.transform(tr.state);
        tr.next_state = res.normalizer.transform(tr.next_state);
      }
    }
    prev_reps = std::move(sc.reps);
    rec.wall_ms = ms_since(t0);
    rep.steps.push_back(std::move(rec));
  }
  rep.design_ms = ms_since(t_start);
  return res;
}

RunResult run_training(const TrainConfig& config, const HinGraph& g, const DataSplit& split) {
  return config.variant == Variant::RlHgnn ? run_rl_hgnn(config, g, split)
                                           : run_rl_hgnn_pp(config, g, split);
}

std::vector<Episode> fixed_path_episodes(const HinGraph& g, const MetaPath& path, int fanout_cap,
                                         std::uint64_t seed) {
  check_metapath(path, g.schema());
  const TypeId target = g.schema().target_type;
  if (path.start_type != target) throw Error("fixed meta-path must start at the target type");
  const ExpandOptions xo{fanout_cap, seed};
  std::vector<Episode> out;
  for (int i = 0; i < g.node_count(target); ++i) {
    const NodeRef s{target, i};
    Episode ep{s, MetaPath{target, {}}, Frontier::at(s)};
    for (RelationId r : path.relations)
      if (!apply_action(g, ep, Action::extend(r), xo)) break;
    out.push_back(std::move(ep));
  }
  return out;
}

FixedPathResult run_fixed_path(const TrainConfig& config, const HinGraph& g, const DataSplit& split,
                               const MetaPath& path) {
  apply_threads(config);
  const Context cx(config, g, split);
  if (static_cast<int>(path.length()) > config.max_timesteps)
    throw Error("fixed meta-path is longer than T");
  HgnnParams params = HgnnParams::initialize(g.schema(), config.hgnn_config(), mix64(config.seed, 0x1000));
  OptState opt = OptState::for_params(std::as_const(params).tensors(), cx.adam());
  const auto episodes = fixed_path_episodes(g, path, config.fanout_cap, mix64(config.seed, 0xE1, 0));
  const AggregationDag dag = build_plan(g, episodes);
  FixedPathResult best;
  best.validation.micro = -1.0;
  for (int k = 0; k < config.resolved_rounds(); ++k) {
    const auto sc = cx.score(params, dag);
    if (sc.val.micro > best.validation.micro) best = {sc.val, sc.test};
    cx.train_step(params, opt, dag, mix64(config.seed, 0xD1, k));
  }
  const auto sc = cx.score(params, dag);
  if (sc.val.micro > best.validation.micro) best = {sc.val, sc.test};
  return best;
}

// ---------------------------------------------------------------------------
// run directories

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << s;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json split_json(const DataSplit& s) {
  return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

// Greedy design with a trained agent; mirrors the decision schedule of each variant.
std::vector<Episode> design_greedy(const TrainConfig& cfg, const HinGraph& g, const HgnnParams& params,
                                   const QNetwork& q, const Normalizer* norm,
                                   std::vector<std::vector<int>>* actions_out) {
  const auto& schema = g.schema();
  const TypeId target = schema.target_type;
  const int n = g.node_count(target);
  const int T = cfg.max_timesteps;
  std::vector<Episode> eps(n);
  for (int i = 0; i < n; ++i) eps[i] = {{target, i}, MetaPath{target, {}}, Frontier::at({target, i})};
  std::vector<char> active(n, 1);
  const ExpandOptions xo{cfg.fanout_cap, mix64(cfg.seed, 0xE7A1)};
  const bool pp = cfg.variant == Variant::RlHgnnPP;
  std::vector<Vector> states(n);
  if (!pp)
    for (int i = 0; i < n; ++i) states[i] = g.attribute({target, i}).transpose();
  std::vector<NodeRef> targets(n);
  for (int i = 0; i < n; ++i) targets[i] = {target, i};
  ForwardOptions fo;
  const int decisions = pp ? T : T + 1;
  for (int t = 0; t < decisions; ++t) {
    if (pp) {
      const Matrix reps = t == 0 ? project_attributes(params, g, targets)
                                 : hgnn_forward(params, g, build_plan(g, eps), fo);
      for (int i = 0; i < n; ++i) {
        const Vector raw = reps.row(i).transpose();
        states[i] = norm && norm->frozen() ? norm->transform(raw) : raw;
      }
    }
    std::vector<int> acts(n, -1);
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      const auto mask = valid_actions(schema, eps[i].trace.type,
                                      (!pp && t == T) || static_cast<int>(eps[i].path.length()) >= T);
      const Action a = greedy_action(q.q_values(states[i]), mask);
      acts[i] = a.index;
      if (apply_action(g, eps[i], a, xo)) {
        if (!pp) states[i] = state_static(g, eps[i].trace, states[i]);
      } else {
        active[i] = 0;
      }
    }
    if (actions_out) actions_out->push_back(std::move(acts));
  }
  return eps;
}

}  // namespace

void write_run(const std::filesystem::path& dir, const RunResult& run) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", to_json(run.config).dump(2) + "\n");
  write_text(dir / "split.json", split_json(run.split).dump() + "\n");
  write_text(dir / "metrics.csv", run.report.to_csv());
  write_text(dir / "report.json", run.report.to_json().dump() + "\n");
  write_text(dir / "paths.txt", action_report(run.report).to_text());
  save_hgnn(dir / "hgnn.ckpt", run.params, run.config.seed);
  const long total = run.config.variant == Variant::RlHgnn
                         ? static_cast<long>(run.config.resolved_rounds()) * (run.config.max_timesteps + 1)
                         : run.config.resolved_rounds();
  const nlohmann::json extra = {{"variant", variant_name(run.config.variant)},
                                {"epsilon_start", run.config.epsilon_start},
                                {"epsilon_end", run.config.epsilon_end},
                                {"epsilon_decay_steps", decay_steps(run.config, total)},
                                {"epsilon_position", total},
                                {"q_snapshot", "best_round"},
                                {"best_round", run.report.best_round}};
  // The saved policy is the one that designed the best round, matching hgnn.ckpt.
  DqnAgent snapshot = run.agent;
  snapshot.q = run.best_q;
  save_agent(dir / "agent.ckpt", snapshot,
             run.config.variant == Variant::RlHgnnPP ? &run.normalizer : nullptr, extra);
}

EvalResult evaluate_checkpoint(const std::filesystem::path& dir, const HinGraph& g,
                               const std::optional<DataSplit>& split) {
  const TrainConfig cfg = parse_train_config(read_text(dir / "config.json"));
  DataSplit s;
  if (split && !split->train.empty()) {
    s = *split;
  } else {
    const auto j = nlohmann::json::parse(read_text(dir / "split.json"));
    s.train = j.at("train").get<std::vector<LocalId>>();
    s.validation = j.at("validation").get<std::vector<LocalId>>();
    s.test = j.at("test").get<std::vector<LocalId>>();
  }
  const HgnnParams params = load_hgnn(dir / "hgnn.ckpt");
  if (params.projections.size() != static_cast<std::size_t>(g.schema().num_types()))
    throw Error("checkpoint does not match the graph schema");
  for (int t = 0; t < g.schema().num_types(); ++t)
    if (params.projections[t].cols() != g.schema().attribute_dims[t])
      throw Error("checkpoint does not match the graph's attribute dimensions");
  const AgentCheckpoint agent = load_agent(dir / "agent.ckpt");
  if (agent.q.output_dim() != g.schema().num_relations() + 1)
    throw Error("agent checkpoint does not match the graph's relation count");

  std::vector<std::vector<int>> actions;
  const auto eps = design_greedy(cfg, g, params, agent.q, agent.has_normalizer ? &agent.normalizer : nullptr,
                                 &actions);
  const Context cx(cfg, g, s);
  const auto sc = cx.score(params, build_plan(g, eps));
  EvalResult r;
  r.variant = cfg.variant;
  r.validation = sc.val;
  r.test = sc.test;
  EpisodeReport rep;
  rep.action_names = cx.action_names();
  rep.best_round = 0;
  rep.best_paths = path_strings(g, eps);
  rep.best_actions = actions;
  rep.steps.resize(1);
  r.paths = action_report(rep);
  return r;
}

// ---------------------------------------------------------------------------
// benchmarks

std::vector<Episode> random_episodes(const HinGraph& g, int length, int batch_size, int fanout_cap,
                                     std::uint64_t seed) {
  const auto& schema = g.schema();
  const TypeId target = schema.target_type;
  std::vector<int> nodes(g.node_count(target));
  std::iota(nodes.begin(), nodes.end(), 0);
  std::mt19937_64 pick(mix64(seed, 0xB0));
  std::shuffle(nodes.begin(), nodes.end(), pick);
  if (batch_size > 0 && static_cast<int>(nodes.size()) > batch_size) nodes.resize(batch_size);
  std::sort(nodes.begin(), nodes.end());
  const ExpandOptions xo{fanout_cap, mix64(seed, 0xB1)};
  std::vector<Episode> out;
  for (int v : nodes) {
    // The relation draw depends only on (seed, node, depth), so shorter runs are prefixes.
    std::mt19937_64 rng(mix64(seed, 0xB2, static_cast<std::uint64_t>(v)));
    Episode ep{{target, v}, MetaPath{target, {}}, Frontier::at({target, v})};
    for (int t = 0; t < length; ++t) {
      auto legal = valid_actions(schema, ep.trace.type, false).actions();
      legal.pop_back();  // no Stop
      if (legal.empty()) break;
      std::uniform_int_distribution<std::size_t> u(0, legal.size() - 1);
      if (!apply_action(g, ep, legal[u(rng)], xo)) break;
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<BenchAggRow> bench_aggregation(const HinGraph& g, const std::vector<int>& timesteps,
                                           int batch_size, int fanout_cap, std::uint64_t seed) {
  std::vector<BenchAggRow> rows;
  for (int T : timesteps) {
    if (T < 1) throw Error("bench_aggregation: T must be at least 1");
    const auto eps = random_episodes(g, T, batch_size, fanout_cap, seed);
    BenchAggRow r;
    r.timesteps = T;
    r.stats = plan_stats(naive_plan(g, eps), build_plan(g, eps));
    for (const auto& e : eps) r.enumerated_naive += count_instances(e) * e.path.length();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<RuntimeRow> bench_runtime(const TrainConfig& base, const HinGraph& g,
                                      const DataSplit& split, const std::vector<int>& inner_rounds,
                                      int runs) {
  if (runs < 1) throw Error("bench_runtime: runs must be positive");
  std::vector<RuntimeRow> out;
  for (int B : inner_rounds) {
    RuntimeRow row;
    row.inner_rounds = B;
    for (Variant v : {Variant::RlHgnn, Variant::RlHgnnPP}) {
      TrainConfig c = base;
      c.variant = v;
      c.inner_rounds = B;
      if (c.rounds <= 0) c.rounds = base.resolved_rounds();
      auto& runs_ms = v == Variant::RlHgnn ? row.rl_hgnn_runs : row.rl_hgnn_pp_runs;
      for (int r = 0; r < runs; ++r) runs_ms.push_back(run_training(c, g, split).report.design_ms);
      const double mean = std::accumulate(runs_ms.begin(), runs_ms.end(), 0.0) / runs;
      (v == Variant::RlHgnn ? row.rl_hgnn_ms : row.rl_hgnn_pp_ms) = mean;
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace rlhgnn
