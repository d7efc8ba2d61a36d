#pragma once

#include "rlhgnn/agg_plan.hpp"

#include <span>
#include <string>
#include <vector>

namespace rlhgnn {

struct HgnnConfig {
  int hidden_dim = 128;
  int heads = 8;
  int max_timesteps = 2;  // T: number of aggregator parameter sets
  double dropout = 0.5;
  double leaky_slope = 0.2;
  // Aggregate the target's own transformed representation instead of the
  // source's (the alternative reading of the aggregation formula).
  bool literal_target_message = false;

  int head_dim() const { return hidden_dim / heads; }
};

/// One aggregator: a d x d map whose output rows are split into `heads` blocks,
/// and per head an attention vector over [W h_source || W h_target].
struct AggregatorParams {
  Matrix weight;     // d x d
  Matrix attention;  // heads x (2 * head_dim): source half, then target half

  std::size_t parameter_count() const { return weight.size() + attention.size(); }
};

struct HgnnParams {
  HgnnConfig config;
  std::vector<Matrix> projections;            // per node type: d x lambda
  std::vector<AggregatorParams> aggregators;  // exactly T, reused in order
  Matrix classifier;                          // C x d
  Matrix classifier_bias;                     // C x 1

  /// Glorot-uniform weights, zero bias.
  static HgnnParams initialize(const HinSchema& schema, const HgnnConfig& config,
                               std::uint64_t seed);

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t aggregator_parameter_count() const;
  std::size_t parameter_count() const;
};

using Gradients = std::vector<Matrix>;  // matches HgnnParams::tensors() order

Gradients zero_gradients(const HgnnParams& params);

enum class Mode { Eval, Train };
enum class Kernel { Parallel, Serial };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  std::uint64_t dropout_seed = 0;
  Kernel kernel = Kernel::Parallel;
};

struct LayerTape {
  Matrix input;        // previous-layer table after dropout
  Matrix mask;         // dropout scale per entry; empty in eval mode
  Matrix transformed;  // input * W^T
  Matrix queries;      // per step: W * H0[target]
  std::vector<std::vector<double>> scores;     // per step: heads x sources, before LeakyReLU
  std::vector<std::vector<double>> attention;  // per step: heads x sources
  Matrix pre;                                  // steps x d, before ReLU
  Matrix output;                               // steps x d
};

struct ForwardTape {
  bool recorded = false;
  Matrix projected;  // raw table H0
  std::vector<LayerTape> layers;
};

/// H0 rows M_type * x for the given nodes.
Matrix project_attributes(const HgnnParams& params, const HinGraph& g,
                          std::span<const NodeRef> nodes);

/// Normalised attention of one head over a step's sources. `transformed`
/// holds W-transformed rows of the previous layer; weights account for
/// source multiplicity and sum to one.
std::vector<double> attention_coefficients(const HgnnParams& params, int layer, int head,
                                           const Matrix& transformed, const Vector& query,
                                           const PlanStep& step);

/// Evaluates one plan layer from the previous layer's table `reps` (one row
/// per previous-layer value) and the raw projected table `projected`.
Matrix aggregate_layer(const HgnnParams& params, int layer, const Matrix& reps,
                       const Matrix& projected, const std::vector<PlanStep>& steps,
                       const ForwardOptions& options, LayerTape* tape = nullptr);

/// Final representation per episode, in plan output order. Stop-at-0 episodes
/// return their projected attributes.
Matrix hgnn_forward(const HgnnParams& params, const HinGraph& g, const AggregationDag& dag,
                    const ForwardOptions& options, ForwardTape* tape = nullptr);

Matrix class_logits(const HgnnParams& params, const Matrix& reps);
Matrix softmax_rows(const Matrix& logits);
Matrix classify(const HgnnParams& params, const Matrix& reps);

/// Summed negative log-likelihood over `rows`; throws on an empty row set.
double cross_entropy(const Matrix& probs, std::span<const int> labels, std::span<const int> rows);

/// Reverse pass from d(loss)/d(outputs) through the recorded forward.
Gradients backward(const HgnnParams& params, const HinGraph& g, const AggregationDag& dag,
                   const ForwardTape& tape, const Matrix& d_outputs);

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
  Matrix probs;
};

/// Forward, classifier, cross-entropy over `rows` (episode indices) and the
/// full backward pass with classifier gradients included.
LossAndGradients loss_and_gradients(const HgnnParams& params, const HinGraph& g,
                                    const AggregationDag& dag, std::span<const int> labels,
                                    std::span<const int> rows, const ForwardOptions& options);

double loss_only(const HgnnParams& params, const HinGraph& g, const AggregationDag& dag,
                 std::span<const int> labels, std::span<const int> rows,
                 const ForwardOptions& options);

}  // namespace rlhgnn
