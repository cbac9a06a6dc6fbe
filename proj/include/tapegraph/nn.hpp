#pragma once

// Example networks built only on the public layers API.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tapegraph/executor.hpp"
#include "tapegraph/graph.hpp"
#include "tapegraph/layers.hpp"

namespace tapegraph {

using Probe = std::shared_ptr<std::atomic<int>>;

inline Probe make_probe() { return std::make_shared<std::atomic<int>>(0); }

// ---------------------------------------------------------------------------
// Linear regression

enum class Normalization {
  None,
  /// Question and answer divided by max |q_i|; predictions scaled back.
  MaxAbs,
  /// Question and answer multiplied by a fixed factor.
  Scale,
};

struct LinRegOptions {
  double learning_rate = 0.32;
  Normalization normalization = Normalization::MaxAbs;
  double input_scale = 0.02;
};

struct LinRegModel {
  std::vector<ScalarWeight> weights;
  ScalarWeight bias;
  LinRegOptions options;
};

struct LinRegPair {
  std::vector<double> question;
  double expected;
};

/// Weights and bias start uniform on [0, 1). A learning rate of 0 builds the
/// model but train_linreg then leaves it untouched.
LinRegModel make_linreg_model(std::size_t inputs, std::uint64_t seed, LinRegOptions options = {});

/// Factor applied to a question (and its answer) before it reaches the model.
double input_factor(const LinRegModel& model, const std::vector<double>& question);

/// sum_i q_i w_i + b, folded left to right, on an already-normalized question.
ScalarLayer guess_next_number(const LinRegModel& model, const std::vector<double>& question);

/// (guess - expected)^2 in normalized units.
ScalarLayer linreg_loss(const LinRegModel& model, const std::vector<double>& question,
                        double expected);

/// Prediction in the caller's units.
double predict_linreg(const LinRegModel& model, const std::vector<double>& question, Executor& ex);

struct LinRegReport {
  std::vector<double> loss_history;  // summed pair losses per iteration, pre-update
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

double linreg_total_loss(const LinRegModel& model, const std::vector<LinRegPair>& pairs,
                         Executor& ex);

/// Alternates train() over `pairs`. A non-finite loss raises ArithmeticError
/// naming the iteration.
LinRegReport train_linreg(LinRegModel& model, const std::vector<LinRegPair>& pairs,
                          std::size_t iterations, Executor& ex);

std::vector<LinRegPair> paper_linreg_pairs();

// ---------------------------------------------------------------------------
// Gated network

struct GatedModel {
  std::size_t features = 0;
  std::size_t hidden = 0;
  TensorWeight gate_hidden;  // features x hidden
  TensorWeight gate_left;    // hidden x 1
  TensorWeight gate_right;   // hidden x 1
  ScalarWeight gate_left_bias;
  ScalarWeight gate_right_bias;
  TensorWeight left;   // features x hidden
  TensorWeight right;  // features x hidden
  Probe gate_probe = make_probe();
  Probe left_probe = make_probe();
  Probe right_probe = make_probe();
};

GatedModel make_gated_model(std::uint64_t seed, std::size_t features = 8, std::size_t hidden = 8,
                            double learning_rate = 0.05);

std::pair<ScalarLayer, ScalarLayer> gate(const GatedModel& model, const TensorLayer& input);
TensorLayer left_subnet(const GatedModel& model, const TensorLayer& input);
TensorLayer right_subnet(const GatedModel& model, const TensorLayer& input);

enum class GatedStrategy {
  /// Predicts both scores with blocking calls while building the graph.
  Eager,
  /// Forwards score 1, then score 2, then the chosen branch.
  Sequential,
  /// Forwards both scores in parallel, then the chosen branch.
  Parallel,
};

std::string to_string(GatedStrategy strategy);

/// Chooses left iff score_left > score_right. `ex` is only used by Eager.
TensorLayer gated_forward(const GatedModel& model, const Tensor& input, GatedStrategy strategy,
                          Executor& ex);

ScalarLayer gated_loss(const TensorLayer& output, const Tensor& target);

// ---------------------------------------------------------------------------
// Mixture-of-experts benchmark model

inline constexpr std::size_t kBenchWidth = 64;
inline constexpr std::size_t kCoarseClasses = 20;
inline constexpr std::size_t kFineClasses = 5;
inline constexpr std::size_t kBatchRows = 16;

struct Dense {
  TensorWeight w;
  TensorWeight b;
};

/// matmul(x, w) + b per row.
TensorLayer dense(const Dense& d, const TensorLayer& x);

struct FineHead {
  Dense d1, d2, d3;
  Probe probe = make_probe();
};

enum class FineLoss { Sum, Mean };

struct BenchModel {
  std::size_t features = 0;
  std::vector<std::pair<Dense, Dense>> columns;
  Dense coarse;
  std::vector<FineHead> fine;
};

/// Dense weights start at (u - 0.5) * 2 / sqrt(fan_in), biases at 0. Each
/// weight draws from its own stream keyed by its name.
BenchModel build_bench_model(std::size_t columns, std::uint64_t seed,
                             std::size_t features = kBenchWidth, double learning_rate = 0.01);

/// Sum of the column outputs, combined as a balanced tree.
TensorLayer bench_features(const BenchModel& model, const TensorLayer& input);
TensorLayer fine_logits(const BenchModel& model, std::size_t head, const TensorLayer& features);

struct BenchBatch {
  Tensor x;  // kBatchRows x features
  std::size_t coarse = 0;
  std::vector<std::size_t> fine;
};

/// Coarse cross-entropy plus fine cross-entropy. With `skip_unmatched` only
/// the head of the batch's coarse class runs; otherwise every head runs and
/// the fine losses are combined per `fine_loss`.
ScalarLayer bench_loss(const BenchModel& model, const BenchBatch& batch, bool skip_unmatched,
                       FineLoss fine_loss = FineLoss::Sum);

double bench_step(const BenchModel& model, const BenchBatch& batch, bool skip_unmatched,
                  Executor& ex, FineLoss fine_loss = FineLoss::Sum);

/// Inference: the coarse head's prediction (argmax of summed logits) picks
/// the fine head at run time.
TensorLayer bench_infer(const BenchModel& model, const Tensor& batch);

/// Seeded synthetic classification task: rows are N(0,1) + a per-class
/// mean, the fine label is the argmax of a per-class random projection.
class SyntheticData {
 public:
  SyntheticData(std::size_t features, std::uint64_t seed);

  BenchBatch batch(std::size_t coarse, std::uint64_t index) const;
  std::size_t features() const noexcept { return features_; }

 private:
  std::size_t features_;
  std::uint64_t seed_;
  std::vector<Tensor> means_;
  std::vector<Tensor> projections_;
};

// ---------------------------------------------------------------------------
// Diamond chain

/// y_0 = x, y_{k+1} = y_k * y_k: each level consumes the previous one twice.
ScalarLayer make_diamond_chain(const ScalarLayer& x, std::size_t depth);

struct DiamondReport {
  std::size_t depth = 0;
  GraphMode mode = GraphMode::RefCounted;
  int leaf_backward_calls = 0;
  int leaf_flushes = 0;
  std::size_t node_count = 0;
  int min_node_flushes = 0;
  int max_node_flushes = 0;
  int total_flushes = 0;
  bool counters_balanced = true;
  double final_store = 0.0;
  double seconds = 0.0;
};

/// One train pass over the chain rooted at a weight holding `initial`.
DiamondReport run_diamond(std::size_t depth, GraphMode mode, Executor& ex, double initial = 1.0,
                          double learning_rate = 1.0);

}  // namespace tapegraph
