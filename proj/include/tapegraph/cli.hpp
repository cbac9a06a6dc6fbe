#pragma once

// The `tapegraph` command-line tool. Each command is a plain function so it
// can be driven from tests without spawning a process.
//
// Exit codes: 0 success, 1 ran but did not converge, 2 error.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tapegraph/nn.hpp"

namespace tapegraph::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnconverged = 1;
inline constexpr int kExitError = 2;

enum class Format { Csv, Json };

struct OutputConfig {
  std::string path;  // empty: no machine-readable output
  Format format = Format::Csv;
};

struct LinRegConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t iterations = 500;
  double learning_rate = 0.32;
  Normalization normalization = Normalization::MaxAbs;
  double input_scale = 0.02;
  std::size_t report_every = 50;
  OutputConfig output;
};

struct GradcheckConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t instances = 100;
  double tolerance = 1e-5;
  std::vector<std::string> ops;
  std::vector<std::string> fault_ops;
  OutputConfig output;
};

struct GatedConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t iterations = 5;
  double learning_rate = 1e-4;
  std::size_t features = 8;
  std::size_t hidden = 8;
  OutputConfig output;
};

struct BenchConfig {
  std::uint64_t seed = 0;
  std::vector<std::size_t> columns{1, 2, 4};
  std::vector<std::size_t> workers{1};
  std::vector<bool> skip{true, false};
  std::size_t warmup = 10;
  std::size_t iterations = 200;
  std::size_t windows = 5;
  std::size_t features = kBenchWidth;
  double learning_rate = 0.01;
  FineLoss fine_loss = FineLoss::Sum;
  OutputConfig output;
};

struct DiamondConfig {
  std::size_t depth = 10;
  std::size_t workers = 1;
  std::size_t naive_limit = 12;
  OutputConfig output;
};

int cmd_linreg(const LinRegConfig& config, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckConfig& config, std::ostream& out, std::ostream& err);
int cmd_gated(const GatedConfig& config, std::ostream& out, std::ostream& err);
int cmd_bench(const BenchConfig& config, std::ostream& out, std::ostream& err);
int cmd_diamond(const DiamondConfig& config, std::ostream& out, std::ostream& err);

/// Parses argv (argv[0] is the program name) and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tapegraph::cli
