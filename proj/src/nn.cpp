#include "tapegraph/nn.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "tapegraph/rng.hpp"

namespace tapegraph {

namespace {

template <class T>
Layer<T> balanced_sum(std::vector<Layer<T>> terms) {
  if (terms.empty()) throw usage_error("balanced_sum of no terms");
  while (terms.size() > 1) {
    std::vector<Layer<T>> next;
    next.reserve((terms.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < terms.size(); i += 2) next.push_back(terms[i] + terms[i + 1]);
    if (terms.size() % 2 == 1) next.push_back(terms.back());
    terms = std::move(next);
  }
  return terms.front();
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear regression

LinRegModel make_linreg_model(std::size_t inputs, std::uint64_t seed, LinRegOptions options) {
  if (inputs == 0) throw usage_error("linear regression needs at least one input");
  if (options.learning_rate < 0.0 || !std::isfinite(options.learning_rate)) {
    throw usage_error("learning rate must be finite and non-negative");
  }
  if (options.normalization == Normalization::Scale && !(options.input_scale > 0.0)) {
    throw usage_error("input scale must be positive");
  }
  // A zero rate still needs a valid Weight; train_linreg never trains it.
  const double lr = options.learning_rate > 0.0 ? options.learning_rate : 1.0;
  std::vector<ScalarWeight> weights;
  weights.reserve(inputs);
  for (std::size_t i = 0; i < inputs; ++i) {
    Rng rng(seed, "linreg/weight/" + std::to_string(i));
    weights.push_back(make_weight(rng.uniform(), lr));
  }
  Rng bias_rng(seed, "linreg/bias");
  return LinRegModel{std::move(weights), make_weight(bias_rng.uniform(), lr), options};
}

double input_factor(const LinRegModel& model, const std::vector<double>& question) {
  switch (model.options.normalization) {
    case Normalization::None:
      return 1.0;
    case Normalization::Scale:
      return model.options.input_scale;
    case Normalization::MaxAbs: {
      double m = 0.0;
      for (double q : question) m = std::max(m, std::abs(q));
      return m > 0.0 ? 1.0 / m : 1.0;
    }
  }
  return 1.0;
}

ScalarLayer guess_next_number(const LinRegModel& model, const std::vector<double>& question) {
  if (question.size() != model.weights.size()) {
    throw usage_error("question has " + std::to_string(question.size()) + " elements, model has " +
                      std::to_string(model.weights.size()) + " weights");
  }
  ScalarLayer acc = question[0] * model.weights[0];
  for (std::size_t i = 1; i < question.size(); ++i) acc = acc + question[i] * model.weights[i];
  return acc + model.bias;
}

ScalarLayer linreg_loss(const LinRegModel& model, const std::vector<double>& question,
                        double expected) {
  const double s = input_factor(model, question);
  std::vector<double> scaled(question);
  for (double& q : scaled) q *= s;
  ScalarLayer difference = guess_next_number(model, scaled) - expected * s;
  return difference * difference;
}

double predict_linreg(const LinRegModel& model, const std::vector<double>& question, Executor& ex) {
  const double s = input_factor(model, question);
  std::vector<double> scaled(question);
  for (double& q : scaled) q *= s;
  return run_blocking(predict(guess_next_number(model, scaled)), ex) / s;
}

double linreg_total_loss(const LinRegModel& model, const std::vector<LinRegPair>& pairs,
                         Executor& ex) {
  double total = 0.0;
  for (const auto& p : pairs) total += run_blocking(predict(linreg_loss(model, p.question, p.expected)), ex);
  return total;
}

LinRegReport train_linreg(LinRegModel& model, const std::vector<LinRegPair>& pairs,
                          std::size_t iterations, Executor& ex) {
  LinRegReport report;
  report.initial_loss = linreg_total_loss(model, pairs, ex);
  report.loss_history.reserve(iterations);
  const bool frozen = model.options.learning_rate == 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    double total = 0.0;
    try {
      for (const auto& p : pairs) {
        auto loss = linreg_loss(model, p.question, p.expected);
        total += frozen ? run_blocking(predict(loss), ex) : run_blocking(train(loss), ex);
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Arithmetic) throw;
      throw arithmetic_error("diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(total)) {
      throw arithmetic_error("diverged at iteration " + std::to_string(it) + ": non-finite loss");
    }
    report.loss_history.push_back(total);
  }
  report.final_loss = linreg_total_loss(model, pairs, ex);
  if (!std::isfinite(report.final_loss)) {
    throw arithmetic_error("diverged at iteration " + std::to_string(iterations) +
                           ": non-finite loss");
  }
  return report;
}

std::vector<LinRegPair> paper_linreg_pairs() {
  return {{{3.0, 4.0, 5.0}, 6.0}, {{13.0, 19.0, 25.0}, 31.0}};
}

// ---------------------------------------------------------------------------
// Gated network

GatedModel make_gated_model(std::uint64_t seed, std::size_t features, std::size_t hidden,
                            double learning_rate) {
  auto init = [&](const char* key, Shape shape) {
    Rng rng(seed, std::string("gated/") + key);
    return make_weight(rng.uniform_tensor(shape), learning_rate);
  };
  auto init_scalar = [&](const char* key) {
    Rng rng(seed, std::string("gated/") + key);
    return make_weight(rng.uniform(), learning_rate);
  };
  GatedModel m{
      .features = features,
      .hidden = hidden,
      .gate_hidden = init("gate_hidden", Shape{features, hidden}),
      .gate_left = init("gate_left", Shape{hidden, 1}),
      .gate_right = init("gate_right", Shape{hidden, 1}),
      .gate_left_bias = init_scalar("gate_left_bias"),
      .gate_right_bias = init_scalar("gate_right_bias"),
      .left = init("left", Shape{features, hidden}),
      .right = init("right", Shape{features, hidden}),
  };
  return m;
}

std::pair<ScalarLayer, ScalarLayer> gate(const GatedModel& model, const TensorLayer& input) {
  TensorLayer hidden = with_probe(relu(matmul(input, model.gate_hidden)), model.gate_probe);
  ScalarLayer left = sum(matmul(hidden, model.gate_left)) + model.gate_left_bias;
  ScalarLayer right = sum(matmul(hidden, model.gate_right)) + model.gate_right_bias;
  return {left, right};
}

TensorLayer left_subnet(const GatedModel& model, const TensorLayer& input) {
  return with_probe(relu(matmul(input, model.left)), model.left_probe);
}

TensorLayer right_subnet(const GatedModel& model, const TensorLayer& input) {
  return with_probe(relu(matmul(input, model.right)), model.right_probe);
}

std::string to_string(GatedStrategy strategy) {
  switch (strategy) {
    case GatedStrategy::Eager:
      return "eager";
    case GatedStrategy::Sequential:
      return "sequential";
    case GatedStrategy::Parallel:
      return "parallel";
  }
  return "unknown";
}

TensorLayer gated_forward(const GatedModel& model, const Tensor& input, GatedStrategy strategy,
                          Executor& ex) {
  TensorLayer in = as_layer(input);
  auto [s1, s2] = gate(model, in);
  TensorLayer l = left_subnet(model, in);
  TensorLayer r = right_subnet(model, in);
  auto choose = [s1, s2, l, r](double a, double b) -> TensorLayer {
    return a > b ? s1 * l : s2 * r;
  };
  switch (strategy) {
    case GatedStrategy::Eager: {
      const double a = run_blocking(predict(s1), ex);
      const double b = run_blocking(predict(s2), ex);
      return choose(a, b);
    }
    case GatedStrategy::Sequential:
      return sequence_then(s1, [s2, choose](const double& a) {
        return sequence_then(s2, [a, choose](const double& b) { return choose(a, b); });
      });
    case GatedStrategy::Parallel:
      return sequence_then(parallel_pair(s1, s2), [choose](const std::pair<double, double>& v) {
        return choose(v.first, v.second);
      });
  }
  throw usage_error("unknown gated strategy");
}

ScalarLayer gated_loss(const TensorLayer& output, const Tensor& target) {
  TensorLayer difference = output - target;
  return dot(difference, difference);
}

// ---------------------------------------------------------------------------
// Benchmark model

TensorLayer dense(const Dense& d, const TensorLayer& x) { return add_row(matmul(x, d.w), d.b); }

namespace {

Dense make_dense(std::uint64_t seed, const std::string& key, std::size_t fan_in,
                 std::size_t fan_out, double lr) {
  Rng rng(seed, key + "/w");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (double& x : w) x = (rng.uniform() - 0.5) * 2.0 * bound;
  return Dense{make_weight(Tensor::matrix(fan_in, fan_out, std::move(w)), lr),
               make_weight(Tensor::zeros(Shape{fan_out}), lr)};
}

}  // namespace

BenchModel build_bench_model(std::size_t columns, std::uint64_t seed, std::size_t features,
                             double learning_rate) {
  if (columns == 0) throw usage_error("benchmark model needs at least one column");
  if (features == 0) throw usage_error("benchmark model needs at least one feature");
  std::vector<std::pair<Dense, Dense>> cols;
  for (std::size_t c = 0; c < columns; ++c) {
    const std::string key = "column/" + std::to_string(c);
    cols.emplace_back(make_dense(seed, key + "/dense1", features, kBenchWidth, learning_rate),
                      make_dense(seed, key + "/dense2", kBenchWidth, kBenchWidth, learning_rate));
  }
  std::vector<FineHead> fine;
  for (std::size_t k = 0; k < kCoarseClasses; ++k) {
    const std::string key = "fine/" + std::to_string(k);
    fine.push_back(FineHead{
        make_dense(seed, key + "/dense1", kBenchWidth, kBenchWidth, learning_rate),
        make_dense(seed, key + "/dense2", kBenchWidth, kBenchWidth, learning_rate),
        make_dense(seed, key + "/dense3", kBenchWidth, kFineClasses, learning_rate),
    });
  }
  BenchModel m{features, std::move(cols),
               make_dense(seed, "coarse", kBenchWidth, kCoarseClasses, learning_rate),
               std::move(fine)};
  return m;
}

TensorLayer bench_features(const BenchModel& model, const TensorLayer& input) {
  std::vector<TensorLayer> outputs;
  outputs.reserve(model.columns.size());
  for (const auto& [d1, d2] : model.columns) {
    outputs.push_back(relu(dense(d2, relu(dense(d1, input)))));
  }
  return balanced_sum(std::move(outputs));
}

TensorLayer fine_logits(const BenchModel& model, std::size_t head, const TensorLayer& features) {
  const FineHead& h = model.fine.at(head);
  return with_probe(dense(h.d3, relu(dense(h.d2, relu(dense(h.d1, features))))), h.probe);
}

ScalarLayer bench_loss(const BenchModel& model, const BenchBatch& batch, bool skip_unmatched,
                       FineLoss fine_loss) {
  if (batch.coarse >= kCoarseClasses) throw usage_error("coarse label out of range");
  TensorLayer h = bench_features(model, as_layer(batch.x));
  std::vector<std::size_t> coarse_labels(batch.x.rows(), batch.coarse);
  ScalarLayer coarse = softmax_cross_entropy(dense(model.coarse, h), std::move(coarse_labels));
  if (skip_unmatched) {
    return coarse + softmax_cross_entropy(fine_logits(model, batch.coarse, h), batch.fine);
  }
  std::vector<ScalarLayer> fine;
  fine.reserve(model.fine.size());
  for (std::size_t k = 0; k < model.fine.size(); ++k) {
    fine.push_back(softmax_cross_entropy(fine_logits(model, k, h), batch.fine));
  }
  ScalarLayer total = balanced_sum(std::move(fine));
  if (fine_loss == FineLoss::Mean) total = (1.0 / static_cast<double>(model.fine.size())) * total;
  return coarse + total;
}

double bench_step(const BenchModel& model, const BenchBatch& batch, bool skip_unmatched,
                  Executor& ex, FineLoss fine_loss) {
  return run_blocking(train(bench_loss(model, batch, skip_unmatched, fine_loss)), ex);
}

TensorLayer bench_infer(const BenchModel& model, const Tensor& batch) {
  TensorLayer h = bench_features(model, as_layer(batch));
  auto shared = std::make_shared<const BenchModel>(model);
  return sequence_then(dense(model.coarse, h), [shared, h](const Tensor& logits) {
    return fine_logits(*shared, argmax(column_sums(logits).data()), h);
  });
}

SyntheticData::SyntheticData(std::size_t features, std::uint64_t seed)
    : features_(features), seed_(seed) {
  if (features == 0) throw usage_error("synthetic data needs at least one feature");
  for (std::size_t c = 0; c < kCoarseClasses; ++c) {
    Rng rng(seed, "data/mean/" + std::to_string(c));
    means_.push_back(rng.normal_tensor(Shape{features}, 0.0, 2.0));
    Rng proj(seed, "data/projection/" + std::to_string(c));
    projections_.push_back(proj.normal_tensor(Shape{features, kFineClasses}));
  }
}

BenchBatch SyntheticData::batch(std::size_t coarse, std::uint64_t index) const {
  if (coarse >= kCoarseClasses) throw usage_error("coarse label out of range");
  Rng rng(seed_, "data/batch/" + std::to_string(coarse) + "/" + std::to_string(index));
  std::vector<double> x(kBatchRows * features_);
  const Tensor& mean = means_[coarse];
  for (std::size_t i = 0; i < kBatchRows; ++i) {
    for (std::size_t j = 0; j < features_; ++j) x[i * features_ + j] = rng.normal() + mean[j];
  }
  Tensor xt = Tensor::matrix(kBatchRows, features_, std::move(x));
  Tensor scores = matmul(xt, projections_[coarse]);
  return BenchBatch{std::move(xt), coarse, argmax_rows(scores)};
}

// ---------------------------------------------------------------------------
// Diamond chain

ScalarLayer make_diamond_chain(const ScalarLayer& x, std::size_t depth) {
  ScalarLayer y = x;
  for (std::size_t k = 0; k < depth; ++k) y = y * y;
  return y;
}

DiamondReport run_diamond(std::size_t depth, GraphMode mode, Executor& ex, double initial,
                          double learning_rate) {
  if (depth == 0) throw usage_error("diamond depth must be at least 1");
  auto w = make_weight(initial, learning_rate);
  ScalarLayer root = make_diamond_chain(as_layer(w), depth);
  ForwardScope scope = ForwardScope::make(mode);
  const auto start = std::chrono::steady_clock::now();
  run_blocking(train_in(root, scope), ex);
  const auto stop = std::chrono::steady_clock::now();

  DiamondReport report;
  report.depth = depth;
  report.mode = mode;
  report.seconds = std::chrono::duration<double>(stop - start).count();
  report.final_store = w.value();
  const auto nodes = scope.nodes();
  report.node_count = nodes.size();
  report.min_node_flushes = std::numeric_limits<int>::max();
  for (const auto& n : nodes) {
    const int f = n->stats().flushes.load();
    report.total_flushes += f;
    report.min_node_flushes = std::min(report.min_node_flushes, f);
    report.max_node_flushes = std::max(report.max_node_flushes, f);
    if (n->counter() != 0 || !n->accumulator_empty()) report.counters_balanced = false;
    if (n->dependencies().empty() && n->requires_grad()) {
      report.leaf_backward_calls = n->stats().backward_calls.load();
      report.leaf_flushes = f;
    }
  }
  return report;
}

}  // namespace tapegraph
