#include "rlhgnn/hgnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace rlhgnn {

namespace {

Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  if (m.size() == 0) return m;
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

const AggregatorParams& layer_params(const HgnnParams& p, int layer) {
  if (layer < 1 || layer > static_cast<int>(p.aggregators.size()))
    throw Error("plan depth " + std::to_string(layer) + " exceeds the " +
                std::to_string(p.aggregators.size()) + " aggregator layers");
  return p.aggregators[layer - 1];
}

void check_steps(const std::vector<PlanStep>& steps, Eigen::Index prev_rows,
                 Eigen::Index raw_rows) {
  for (const auto& st : steps) {
    if (st.sources.empty()) throw Error("aggregation step with an empty source set");
    if (st.target_raw < 0 || st.target_raw >= raw_rows)
      throw Error("aggregation step target is not in the raw node table");
    for (const auto& s : st.sources)
      if (s.index < 0 || s.index >= prev_rows || s.multiplicity < 1)
        throw Error("unresolved source reference " + std::to_string(s.index));
  }
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed,
                    int layer) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto key = static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(cols) +
                       static_cast<std::uint64_t>(j);
      mask(i, j) = unit_uniform(mix64(seed, static_cast<std::uint64_t>(layer), key)) >= p
                       ? keep_scale
                       : 0.0;
    }
  return mask;
}

// Softmax over a step's sources with multiplicity; writes normalised weights
// into `alpha` (each already multiplied by its multiplicity).
void weighted_softmax(const double* e, const PlanStep& st, double* alpha) {
  const std::size_t n = st.sources.size();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, e[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    alpha[i] = st.sources[i].multiplicity * std::exp(e[i] - mx);
    total += alpha[i];
  }
  for (std::size_t i = 0; i < n; ++i) alpha[i] /= total;
}

double total_multiplicity(const PlanStep& st) {
  double m = 0.0;
  for (const auto& s : st.sources) m += s.multiplicity;
  return m;
}

// Evaluates one step from precomputed transformed rows. Shared by the tape
// recording path and the parallel kernel.
void evaluate_step(const HgnnParams& params, const AggregatorParams& agg, const PlanStep& st,
                   const Matrix& transformed, const Eigen::Ref<const Vector>& query,
                   double* scores, double* attention, double* pre_out, double* out) {
  const int heads = params.config.heads;
  const int hd = params.config.head_dim();
  const double slope = params.config.leaky_slope;
  const bool literal = params.config.literal_target_message;
  const std::size_t n = st.sources.size();
  const double inv_m = 1.0 / total_multiplicity(st);
  std::vector<double> e(n);
  for (int h = 0; h < heads; ++h) {
    const auto a_src = agg.attention.row(h).segment(0, hd);
    const auto a_dst = agg.attention.row(h).segment(hd, hd);
    const double target_term = a_dst.dot(query.segment(h * hd, hd));
    double* sc = scores + h * n;
    double* al = attention + h * n;
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = a_src.dot(transformed.row(st.sources[i].index).segment(h * hd, hd)) + target_term;
      e[i] = leaky(sc[i], slope);
    }
    weighted_softmax(e.data(), st, al);
    for (int c = 0; c < hd; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double msg = literal ? query(h * hd + c) : transformed(st.sources[i].index, h * hd + c);
        acc += al[i] * msg;
      }
      pre_out[h * hd + c] = acc * inv_m;
    }
  }
  const int d = params.config.hidden_dim;
  for (int c = 0; c < d; ++c) out[c] = std::max(pre_out[c], 0.0);
}

}  // namespace

HgnnParams HgnnParams::initialize(const HinSchema& schema, const HgnnConfig& config,
                                  std::uint64_t seed) {
  if (config.hidden_dim <= 0 || config.heads <= 0 || config.hidden_dim % config.heads != 0)
    throw Error("hidden_dim must be a positive multiple of heads");
  if (config.max_timesteps < 1) throw Error("max_timesteps must be at least 1");
  if (config.dropout < 0.0 || config.dropout >= 1.0) throw Error("dropout must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  HgnnParams p;
  p.config = config;
  const int d = config.hidden_dim;
  for (TypeId t = 0; t < schema.num_types(); ++t)
    p.projections.push_back(glorot(d, schema.attribute_dims[t], rng));
  for (int l = 0; l < config.max_timesteps; ++l) {
    AggregatorParams a;
    a.weight = glorot(d, d, rng);
    a.attention = glorot(config.heads, 2 * config.head_dim(), rng);
    p.aggregators.push_back(std::move(a));
  }
  p.classifier = glorot(schema.num_classes, d, rng);
  p.classifier_bias = Matrix::Zero(schema.num_classes, 1);
  return p;
}

std::vector<Matrix*> HgnnParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& m : projections) out.push_back(&m);
  for (auto& a : aggregators) {
    out.push_back(&a.weight);
    out.push_back(&a.attention);
  }
  out.push_back(&classifier);
  out.push_back(&classifier_bias);
  return out;
}

std::vector<const Matrix*> HgnnParams::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto* m : const_cast<HgnnParams*>(this)->tensors()) out.push_back(m);
  return out;
}

std::vector<std::string> HgnnParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < projections.size(); ++t) out.push_back("projection." + std::to_string(t));
  for (std::size_t l = 0; l < aggregators.size(); ++l) {
    out.push_back("aggregator." + std::to_string(l + 1) + ".weight");
    out.push_back("aggregator." + std::to_string(l + 1) + ".attention");
  }
  out.push_back("classifier.weight");
  out.push_back("classifier.bias");
  return out;
}

std::size_t HgnnParams::aggregator_parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : aggregators) n += a.parameter_count();
  return n;
}

std::size_t HgnnParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* m : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

Gradients zero_gradients(const HgnnParams& params) {
  Gradients g;
  for (const auto* m : params.tensors()) g.push_back(Matrix::Zero(m->rows(), m->cols()));
  return g;
}

Matrix project_attributes(const HgnnParams& params, const HinGraph& g,
                          std::span<const NodeRef> nodes) {
  const int d = params.config.hidden_dim;
  Matrix out(static_cast<Eigen::Index>(nodes.size()), d);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodeRef n = nodes[i];
    if (n.type < 0 || n.type >= static_cast<int>(params.projections.size()))
      throw Error("no projection for node type " + std::to_string(n.type));
    const Matrix& m = params.projections[n.type];
    if (m.cols() != g.attributes(n.type).cols())
      throw Error("projection width does not match attribute dimension");
    out.row(static_cast<Eigen::Index>(i)) = (m * g.attribute(n).transpose()).transpose();
  }
  return out;
}

std::vector<double> attention_coefficients(const HgnnParams& params, int layer, int head,
                                           const Matrix& transformed, const Vector& query,
                                           const PlanStep& step) {
  const auto& agg = layer_params(params, layer);
  if (step.sources.empty()) throw Error("attention over an empty source set");
  if (head < 0 || head >= params.config.heads) throw Error("head index out of range");
  const int hd = params.config.head_dim();
  const auto a_src = agg.attention.row(head).segment(0, hd);
  const auto a_dst = agg.attention.row(head).segment(hd, hd);
  const double target_term = a_dst.dot(query.segment(head * hd, hd));
  std::vector<double> e(step.sources.size()), alpha(step.sources.size());
  for (std::size_t i = 0; i < step.sources.size(); ++i) {
    const auto idx = step.sources[i].index;
    if (idx < 0 || idx >= transformed.rows()) throw Error("unresolved source reference");
    e[i] = leaky(a_src.dot(transformed.row(idx).segment(head * hd, hd)) + target_term,
                 params.config.leaky_slope);
  }
  weighted_softmax(e.data(), step, alpha.data());
  return alpha;
}

Matrix aggregate_layer(const HgnnParams& params, int layer, const Matrix& reps,
                       const Matrix& projected, const std::vector<PlanStep>& steps,
                       const ForwardOptions& options, LayerTape* tape) {
  const auto& agg = layer_params(params, layer);
  const int d = params.config.hidden_dim;
  const int heads = params.config.heads;
  if (reps.cols() != d || projected.cols() != d) throw Error("representation width mismatch");
  check_steps(steps, reps.rows(), projected.rows());
  require_finite(reps, "aggregator input");

  const bool train = options.mode == Mode::Train && params.config.dropout > 0.0;
  Matrix mask;
  Matrix input;
  if (train) {
    mask = dropout_mask(reps.rows(), reps.cols(), params.config.dropout, options.dropout_seed, layer);
    input = reps.cwiseProduct(mask);
  }
  const Matrix& in = train ? input : reps;
  const auto n_steps = static_cast<Eigen::Index>(steps.size());
  Matrix out(n_steps, d);

  if (options.kernel == Kernel::Serial && tape == nullptr) {
    // Reference path: every (step, source) transform is recomputed on demand.
    const int hd = params.config.head_dim();
    const bool literal = params.config.literal_target_message;
    for (Eigen::Index s = 0; s < n_steps; ++s) {
      const auto& st = steps[s];
      const Vector q = agg.weight * projected.row(st.target_raw).transpose();
      std::vector<Vector> z;
      for (const auto& src : st.sources) z.push_back(agg.weight * in.row(src.index).transpose());
      const double inv_m = 1.0 / total_multiplicity(st);
      Vector pre = Vector::Zero(d);
      for (int h = 0; h < heads; ++h) {
        std::vector<double> e(st.sources.size()), alpha(st.sources.size());
        for (std::size_t i = 0; i < z.size(); ++i)
          e[i] = leaky(agg.attention.row(h).segment(0, hd).dot(z[i].segment(h * hd, hd).transpose()) +
                           agg.attention.row(h).segment(hd, hd).dot(q.segment(h * hd, hd).transpose()),
                       params.config.leaky_slope);
        weighted_softmax(e.data(), st, alpha.data());
        for (std::size_t i = 0; i < z.size(); ++i)
          pre.segment(h * hd, hd) += alpha[i] * (literal ? q : z[i]).segment(h * hd, hd);
      }
      out.row(s) = (pre * inv_m).cwiseMax(0.0).transpose();
    }
    return out;
  }

  Matrix transformed = in * agg.weight.transpose();
  Matrix queries(n_steps, d);
  for (Eigen::Index s = 0; s < n_steps; ++s)
    queries.row(s) = projected.row(steps[s].target_raw) * agg.weight.transpose();
  Matrix pre(n_steps, d);
  std::vector<std::vector<double>> scores(steps.size()), attention(steps.size());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    scores[s].resize(heads * steps[s].sources.size());
    attention[s].resize(heads * steps[s].sources.size());
  }
#pragma omp parallel for schedule(dynamic, 32)
  for (Eigen::Index s = 0; s < n_steps; ++s) {
    evaluate_step(params, agg, steps[s], transformed, queries.row(s).transpose(), scores[s].data(),
                  attention[s].data(), pre.row(s).data(), out.row(s).data());
  }
  if (tape) {
    tape->input = in;
    tape->mask = std::move(mask);
    tape->transformed = std::move(transformed);
    tape->queries = std::move(queries);
    tape->scores = std::move(scores);
    tape->attention = std::move(attention);
    tape->pre = std::move(pre);
    tape->output = out;
  }
  return out;
}

Matrix hgnn_forward(const HgnnParams& params, const HinGraph& g, const AggregationDag& dag,
                    const ForwardOptions& options, ForwardTape* tape) {
  if (dag.depth() > static_cast<int>(params.aggregators.size()))
    throw Error("plan depth exceeds the number of aggregator layers");
  Matrix projected = project_attributes(params, g, dag.raw_nodes);
  std::vector<Matrix> tables;
  tables.reserve(dag.layers.size());
  if (tape) {
    tape->layers.assign(dag.layers.size(), {});
    tape->recorded = true;
  }
  const Matrix* prev = &projected;
  for (int l = 1; l <= dag.depth(); ++l) {
    tables.push_back(aggregate_layer(params, l, *prev, projected, dag.layers[l - 1], options,
                                     tape ? &tape->layers[l - 1] : nullptr));
    prev = &tables.back();
  }
  Matrix out(static_cast<Eigen::Index>(dag.outputs.size()), params.config.hidden_dim);
  for (std::size_t e = 0; e < dag.outputs.size(); ++e) {
    const auto& slot = dag.outputs[e];
    const Matrix& src = slot.layer == 0 ? projected : tables[slot.layer - 1];
    out.row(static_cast<Eigen::Index>(e)) = src.row(slot.index);
  }
  if (tape) tape->projected = std::move(projected);
  return out;
}

Matrix class_logits(const HgnnParams& params, const Matrix& reps) {
  Matrix logits = reps * params.classifier.transpose();
  logits.rowwise() += params.classifier_bias.transpose().row(0);
  return logits;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix classify(const HgnnParams& params, const Matrix& reps) {
  require_finite(reps, "classifier input");
  return softmax_rows(class_logits(params, reps));
}

double cross_entropy(const Matrix& probs, std::span<const int> labels, std::span<const int> rows) {
  if (rows.empty()) throw Error("cross_entropy over an empty node set");
  double loss = 0.0;
  for (int r : rows) {
    const int y = labels[r];
    if (y < 0 || y >= probs.cols()) throw Error("cross_entropy: label out of range");
    loss -= std::log(probs(r, y));
  }
  return loss;
}

Gradients backward(const HgnnParams& params, const HinGraph& g, const AggregationDag& dag,
                   const ForwardTape& tape, const Matrix& d_outputs) {
  if (!tape.recorded || static_cast<int>(tape.layers.size()) != dag.depth())
    throw Error("backward called without a recorded forward pass");
  const int d = params.config.hidden_dim;
  const int heads = params.config.heads;
  const int hd = params.config.head_dim();
  const double slope = params.config.leaky_slope;
  const bool literal = params.config.literal_target_message;
  Gradients grads = zero_gradients(params);
  const std::size_t n_types = params.projections.size();

  Matrix d_projected = Matrix::Zero(tape.projected.rows(), d);
  std::vector<Matrix> d_tables;
  for (const auto& lt : tape.layers) d_tables.push_back(Matrix::Zero(lt.output.rows(), d));
  for (std::size_t e = 0; e < dag.outputs.size(); ++e) {
    const auto& slot = dag.outputs[e];
    auto& dst = slot.layer == 0 ? d_projected : d_tables[slot.layer - 1];
    dst.row(slot.index) += d_outputs.row(static_cast<Eigen::Index>(e));
  }

  for (int l = dag.depth(); l >= 1; --l) {
    const auto& lt = tape.layers[l - 1];
    const auto& steps = dag.layers[l - 1];
    const auto& agg = params.aggregators[l - 1];
    Matrix& d_weight = grads[n_types + 2 * (l - 1)];
    Matrix& d_attention = grads[n_types + 2 * (l - 1) + 1];

    const Matrix d_pre = d_tables[l - 1].cwiseProduct((lt.pre.array() > 0.0).cast<double>().matrix());
    Matrix d_transformed = Matrix::Zero(lt.transformed.rows(), d);
    Matrix d_queries = Matrix::Zero(lt.queries.rows(), d);
    for (std::size_t s = 0; s < steps.size(); ++s) {
      const auto& st = steps[s];
      const std::size_t n = st.sources.size();
      const double inv_m = 1.0 / total_multiplicity(st);
      for (int h = 0; h < heads; ++h) {
        const double* al = lt.attention[s].data() + h * n;
        const double* sc = lt.scores[s].data() + h * n;
        const auto g_head = d_pre.row(static_cast<Eigen::Index>(s)).segment(h * hd, hd) * inv_m;
        std::vector<double> d_alpha(n);
        double weighted = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto src = st.sources[i].index;
          if (literal) {
            d_alpha[i] = g_head.dot(lt.queries.row(s).segment(h * hd, hd));
            d_queries.row(s).segment(h * hd, hd) += al[i] * g_head;
          } else {
            d_alpha[i] = g_head.dot(lt.transformed.row(src).segment(h * hd, hd));
            d_transformed.row(src).segment(h * hd, hd) += al[i] * g_head;
          }
          weighted += al[i] * d_alpha[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
          const auto src = st.sources[i].index;
          const double d_score = al[i] * (d_alpha[i] - weighted) * leaky_grad(sc[i], slope);
          d_attention.row(h).segment(0, hd) += d_score * lt.transformed.row(src).segment(h * hd, hd);
          d_attention.row(h).segment(hd, hd) += d_score * lt.queries.row(s).segment(h * hd, hd);
          d_transformed.row(src).segment(h * hd, hd) += d_score * agg.attention.row(h).segment(0, hd);
          d_queries.row(s).segment(h * hd, hd) += d_score * agg.attention.row(h).segment(hd, hd);
        }
      }
    }
    Matrix target_inputs(static_cast<Eigen::Index>(steps.size()), d);
    for (std::size_t s = 0; s < steps.size(); ++s)
      target_inputs.row(static_cast<Eigen::Index>(s)) = tape.projected.row(steps[s].target_raw);
    d_weight += d_transformed.transpose() * lt.input + d_queries.transpose() * target_inputs;
    const Matrix d_target = d_queries * agg.weight;
    for (std::size_t s = 0; s < steps.size(); ++s)
      d_projected.row(steps[s].target_raw) += d_target.row(static_cast<Eigen::Index>(s));
    Matrix d_input = d_transformed * agg.weight;
    if (lt.mask.size() > 0) d_input = d_input.cwiseProduct(lt.mask);
    if (l == 1)
      d_projected += d_input;
    else
      d_tables[l - 2] += d_input;
  }

  for (std::size_t r = 0; r < dag.raw_nodes.size(); ++r) {
    const NodeRef n = dag.raw_nodes[r];
    grads[n.type] += d_projected.row(static_cast<Eigen::Index>(r)).transpose() * g.attribute(n);
  }
  return grads;
}

LossAndGradients loss_and_gradients(const HgnnParams& params, const HinGraph& g,
                                    const AggregationDag& dag, std::span<const int> labels,
                                    std::span<const int> rows, const ForwardOptions& options) {
  ForwardTape tape;
  ForwardOptions opt = options;
  opt.kernel = Kernel::Parallel;
  const Matrix reps = hgnn_forward(params, g, dag, opt, &tape);
  LossAndGradients out;
  out.probs = classify(params, reps);
  out.loss = cross_entropy(out.probs, labels, rows);

  Matrix d_logits = Matrix::Zero(out.probs.rows(), out.probs.cols());
  for (int r : rows) {
    d_logits.row(r) += out.probs.row(r);
    d_logits(r, labels[r]) -= 1.0;
  }
  const Matrix d_reps = d_logits * params.classifier;
  out.grads = backward(params, g, dag, tape, d_reps);
  const std::size_t c = out.grads.size() - 2;
  out.grads[c] += d_logits.transpose() * reps;
  out.grads[c + 1] += d_logits.colwise().sum().transpose();
  return out;
}

double loss_only(const HgnnParams& params, const HinGraph& g, const AggregationDag& dag,
                 std::span<const int> labels, std::span<const int> rows,
                 const ForwardOptions& options) {
  const Matrix reps = hgnn_forward(params, g, dag, options);
  return cross_entropy(classify(params, reps), labels, rows);
}

}  // namespace rlhgnn
