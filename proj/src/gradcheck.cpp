#include "tapegraph/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>

namespace tapegraph {

namespace {

constexpr double kLo = -2.0;
constexpr double kHi = 2.0;

Shape random_shape(Rng& rng) { return Shape{1 + rng.index(4), 1 + rng.index(4)}; }

Tensor random_tensor(Rng& rng, const Shape& shape) { return rng.uniform_tensor(shape, kLo, kHi); }

/// Entries at least `gap` away from zero, so relu's kink is never straddled.
Tensor away_from_zero(Rng& rng, const Shape& shape, double gap) {
  std::vector<double> v(shape.numel());
  for (double& x : v) {
    do {
      x = rng.uniform(kLo, kHi);
    } while (std::abs(x) < gap);
  }
  return Tensor(shape, std::move(v));
}

const ScalarWeight& scalar(const std::vector<GradWeight>& w, std::size_t i) {
  return std::get<ScalarWeight>(w.at(i));
}

const TensorWeight& tensor(const std::vector<GradWeight>& w, std::size_t i) {
  return std::get<TensorWeight>(w.at(i));
}

GradcheckCase scalar_binary(std::string op, ScalarLayer (*f)(const ScalarWeight&, const ScalarWeight&)) {
  return GradcheckCase{
      std::move(op), "scalar",
      [](Rng& rng) { return GradInstance{{rng.uniform(kLo, kHi), rng.uniform(kLo, kHi)}}; },
      [f](const std::vector<GradWeight>& w, const GradInstance&) { return f(scalar(w, 0), scalar(w, 1)); }};
}

/// Elementwise tensor op of two same-shaped inputs, projected onto a random literal.
GradcheckCase tensor_binary(std::string op, TensorLayer (*f)(const TensorWeight&, const TensorWeight&)) {
  return GradcheckCase{
      std::move(op), "tensor",
      [](Rng& rng) {
        Shape s = random_shape(rng);
        return GradInstance{{random_tensor(rng, s), random_tensor(rng, s)}, random_tensor(rng, s)};
      },
      [f](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return dot(f(tensor(w, 0), tensor(w, 1)), inst.projection);
      }};
}

std::vector<double> flatten(const GradValue& v) {
  if (const double* d = std::get_if<double>(&v)) return {*d};
  auto data = std::get<Tensor>(v).data();
  return {data.begin(), data.end()};
}

GradValue with_element(const GradValue& v, std::size_t i, double x) {
  if (std::holds_alternative<double>(v)) return x;
  const Tensor& t = std::get<Tensor>(v);
  std::vector<double> data(t.data().begin(), t.data().end());
  data[i] = x;
  return Tensor(t.shape(), std::move(data));
}

/// Weights whose updates record the delta (summed) and leave the store alone.
struct RecordingWeights {
  std::vector<GradWeight> weights;
  std::vector<std::shared_ptr<std::vector<double>>> recorded;

  explicit RecordingWeights(const std::vector<GradValue>& inputs) {
    for (const auto& v : inputs) {
      auto slot = std::make_shared<std::vector<double>>(flatten(v).size(), 0.0);
      recorded.push_back(slot);
      if (const double* d = std::get_if<double>(&v)) {
        ScalarWeight w(*d, 1.0);
        w.set_update_rule([slot](double&, const double& delta, double) { (*slot)[0] += delta; });
        weights.emplace_back(w);
      } else {
        TensorWeight w(std::get<Tensor>(v), 1.0);
        w.set_update_rule([slot](Tensor&, const Tensor& delta, double) {
          for (std::size_t i = 0; i < delta.size(); ++i) (*slot)[i] += delta[i];
        });
        weights.emplace_back(w);
      }
    }
  }

  void assign(std::size_t i, const GradValue& v) {
    std::visit(
        [&](auto& w) {
          using W = std::decay_t<decltype(w)>;
          if constexpr (std::is_same_v<W, ScalarWeight>) {
            w.assign(std::get<double>(v));
          } else {
            w.assign(std::get<Tensor>(v));
          }
        },
        weights[i]);
  }
};

}  // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw usage_error("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  if (scale == 0.0) return 0.0;
  return std::sqrt(diff) / scale;
}

ScalarLayer faulty_adjoint(const ScalarLayer& x, double factor) {
  return ScalarLayer([x, factor](const ForwardScope& scope) {
    return map(x.forward(scope), [scope, factor](NodePtr<double> node) {
      Tape<double> t = node->tape();
      return scope.make_node(Tape<double>{t.data, closure_scale(factor, t.backward)}, {node});
    });
  });
}

std::vector<GradcheckCase> gradcheck_cases() {
  std::vector<GradcheckCase> cases;
  cases.push_back(scalar_binary("add", [](const ScalarWeight& a, const ScalarWeight& b) { return a + b; }));
  cases.push_back(tensor_binary("add", [](const TensorWeight& a, const TensorWeight& b) { return a + b; }));
  cases.push_back(scalar_binary("sub", [](const ScalarWeight& a, const ScalarWeight& b) { return a - b; }));
  cases.push_back(tensor_binary("sub", [](const TensorWeight& a, const TensorWeight& b) { return a - b; }));
  cases.push_back(scalar_binary("mul", [](const ScalarWeight& a, const ScalarWeight& b) { return a * b; }));
  cases.push_back(tensor_binary("mul", [](const TensorWeight& a, const TensorWeight& b) { return a * b; }));
  cases.push_back(GradcheckCase{
      "div", "scalar",
      [](Rng& rng) {
        const double b = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        return GradInstance{{rng.uniform(kLo, kHi), b}};
      },
      [](const std::vector<GradWeight>& w, const GradInstance&) { return scalar(w, 0) / scalar(w, 1); }});
  cases.push_back(GradcheckCase{
      "neg", "scalar", [](Rng& rng) { return GradInstance{{rng.uniform(kLo, kHi)}}; },
      [](const std::vector<GradWeight>& w, const GradInstance&) { return -scalar(w, 0); }});
  cases.push_back(GradcheckCase{
      "neg", "tensor",
      [](Rng& rng) {
        Shape s = random_shape(rng);
        return GradInstance{{random_tensor(rng, s)}, random_tensor(rng, s)};
      },
      [](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return dot(-tensor(w, 0), inst.projection);
      }});
  cases.push_back(GradcheckCase{
      "max", "scalar",
      [](Rng& rng) {
        double a = 0.0, b = 0.0;
        do {
          a = rng.uniform(kLo, kHi);
          b = rng.uniform(kLo, kHi);
        } while (std::abs(a - b) < 1e-3);
        return GradInstance{{a, b}};
      },
      [](const std::vector<GradWeight>& w, const GradInstance&) { return max(scalar(w, 0), scalar(w, 1)); }});
  cases.push_back(GradcheckCase{
      "dot", "tensor",
      [](Rng& rng) {
        Shape s = random_shape(rng);
        return GradInstance{{random_tensor(rng, s), random_tensor(rng, s)}};
      },
      [](const std::vector<GradWeight>& w, const GradInstance&) { return dot(tensor(w, 0), tensor(w, 1)); }});
  cases.push_back(GradcheckCase{
      "matmul", "tensor",
      [](Rng& rng) {
        const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 1 + rng.index(4);
        return GradInstance{{random_tensor(rng, Shape{m, k}), random_tensor(rng, Shape{k, n})},
                            random_tensor(rng, Shape{m, n})};
      },
      [](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return dot(matmul(tensor(w, 0), tensor(w, 1)), inst.projection);
      }});
  cases.push_back(GradcheckCase{
      "relu", "tensor",
      [](Rng& rng) {
        Shape s = random_shape(rng);
        return GradInstance{{away_from_zero(rng, s, 1e-3)}, random_tensor(rng, s)};
      },
      [](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return dot(relu(tensor(w, 0)), inst.projection);
      }});
  cases.push_back(GradcheckCase{
      "softmax_ce", "tensor",
      [](Rng& rng) {
        const std::size_t rows = 1 + rng.index(4), classes = 2 + rng.index(4);
        std::vector<std::size_t> labels(rows);
        for (auto& l : labels) l = rng.index(classes);
        return GradInstance{{random_tensor(rng, Shape{rows, classes})}, Tensor::zeros(Shape{1}),
                            std::move(labels)};
      },
      [](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return softmax_cross_entropy(tensor(w, 0), inst.labels);
      }});
  cases.push_back(GradcheckCase{
      "sum", "tensor",
      [](Rng& rng) { return GradInstance{{random_tensor(rng, random_shape(rng))}}; },
      [](const std::vector<GradWeight>& w, const GradInstance&) { return sum(tensor(w, 0)); }});
  cases.push_back(GradcheckCase{
      "scalar_mul", "tensor",
      [](Rng& rng) {
        Shape s = random_shape(rng);
        const double k = rng.uniform(kLo, kHi);
        return GradInstance{{k, random_tensor(rng, s)}, random_tensor(rng, s)};
      },
      [](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return dot(scalar(w, 0) * tensor(w, 1), inst.projection);
      }});
  cases.push_back(GradcheckCase{
      "add_row", "tensor",
      [](Rng& rng) {
        Shape s = random_shape(rng);
        return GradInstance{{random_tensor(rng, s), random_tensor(rng, Shape{s[1]})}, random_tensor(rng, s)};
      },
      [](const std::vector<GradWeight>& w, const GradInstance& inst) {
        return dot(add_row(tensor(w, 0), tensor(w, 1)), inst.projection);
      }});
  return cases;
}

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& c : gradcheck_cases()) {
    if (std::find(names.begin(), names.end(), c.op) == names.end()) names.push_back(c.op);
  }
  return names;
}

GradcheckResult run_gradcheck_case(const GradcheckCase& c, const GradcheckOptions& options,
                                   Executor& ex, bool inject_fault) {
  if (!(options.step > 0.0)) throw usage_error("finite-difference step must be positive");
  GradcheckResult result{c.op, c.variant, options.instances, 0.0, options.tolerance};
  Rng rng(options.seed, "gradcheck/" + c.op + "/" + c.variant);
  auto build = [&](const std::vector<GradWeight>& w, const GradInstance& inst) {
    ScalarLayer loss = c.build(w, inst);
    return inject_fault ? faulty_adjoint(loss) : loss;
  };
  for (std::size_t n = 0; n < options.instances; ++n) {
    const GradInstance inst = c.sample(rng);
    RecordingWeights rec(inst.inputs);
    run_blocking(train(build(rec.weights, inst)), ex);

    std::vector<double> analytic, numeric;
    for (std::size_t i = 0; i < inst.inputs.size(); ++i) {
      const std::vector<double> base = flatten(inst.inputs[i]);
      analytic.insert(analytic.end(), rec.recorded[i]->begin(), rec.recorded[i]->end());
      for (std::size_t j = 0; j < base.size(); ++j) {
        rec.assign(i, with_element(inst.inputs[i], j, base[j] + options.step));
        const double plus = run_blocking(predict(build(rec.weights, inst)), ex);
        rec.assign(i, with_element(inst.inputs[i], j, base[j] - options.step));
        const double minus = run_blocking(predict(build(rec.weights, inst)), ex);
        numeric.push_back((plus - minus) / (2.0 * options.step));
      }
      rec.assign(i, inst.inputs[i]);
    }
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
  }
  return result;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options, Executor& ex) {
  const auto names = gradcheck_op_names();
  for (const auto& list : {options.ops, options.fault_ops}) {
    for (const auto& op : list) {
      if (std::find(names.begin(), names.end(), op) == names.end()) {
        throw usage_error("unknown op '" + op + "'");
      }
    }
  }
  auto selected = [&](const std::string& op) {
    return options.ops.empty() || std::find(options.ops.begin(), options.ops.end(), op) != options.ops.end();
  };
  std::vector<GradcheckResult> results;
  for (const auto& c : gradcheck_cases()) {
    if (!selected(c.op)) continue;
    const bool fault =
        std::find(options.fault_ops.begin(), options.fault_ops.end(), c.op) != options.fault_ops.end();
    results.push_back(run_gradcheck_case(c, options, ex, fault));
  }
  return results;
}

}  // namespace tapegraph
