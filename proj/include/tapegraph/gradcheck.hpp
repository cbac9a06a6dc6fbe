#pragma once

// Central finite-difference checks for every differentiable operation.
//
// Each case samples inputs, wraps them in weights whose update rule records
// the delta instead of applying it, trains once to obtain the reverse-mode
// gradient, and compares it against (f(x+h) - f(x-h)) / 2h computed with
// predict. Tensor-valued ops are reduced to a scalar by a dot product with
// a random literal so that the upstream delta is not trivially ones.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tapegraph/executor.hpp"
#include "tapegraph/layers.hpp"
#include "tapegraph/rng.hpp"

namespace tapegraph {

using GradValue = std::variant<double, Tensor>;
using GradWeight = std::variant<ScalarWeight, TensorWeight>;

struct GradInstance {
  std::vector<GradValue> inputs;
  Tensor projection = Tensor::zeros(Shape{1});
  std::vector<std::size_t> labels;
};

struct GradcheckCase {
  std::string op;
  std::string variant;
  std::function<GradInstance(Rng&)> sample;
  std::function<ScalarLayer(const std::vector<GradWeight>&, const GradInstance&)> build;
};

struct GradcheckOptions {
  std::size_t instances = 100;
  double step = 1e-6;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  /// Subset of op names; empty runs every op.
  std::vector<std::string> ops;
  /// Ops whose output is routed through a deliberately wrong adjoint.
  std::vector<std::string> fault_ops;
};

struct GradcheckResult {
  std::string op;
  std::string variant;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// ||a - n|| / max(||a||, ||n||), or 0 when both are zero.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

std::vector<std::string> gradcheck_op_names();
std::vector<GradcheckCase> gradcheck_cases();

/// Identity forward whose backward scales the delta by `factor`.
ScalarLayer faulty_adjoint(const ScalarLayer& x, double factor = 1.5);

GradcheckResult run_gradcheck_case(const GradcheckCase& c, const GradcheckOptions& options,
                                   Executor& ex, bool inject_fault = false);

/// Runs the selected cases. Unknown op names raise UsageError.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options, Executor& ex);

}  // namespace tapegraph
