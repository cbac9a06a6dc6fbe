#pragma once

// Self-timed training-throughput harness for the mixture-of-experts model.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tapegraph/nn.hpp"

namespace tapegraph {

struct BenchRecord {
  std::size_t columns = 0;
  std::size_t workers = 0;
  bool skip_unmatched = true;
  std::size_t iterations = 0;
  double ops_per_sec = 0.0;
  double ops_per_sec_stddev = 0.0;
  double wall_ms_per_step_mean = 0.0;
  double wall_ms_per_step_stddev = 0.0;
};

struct BenchOptions {
  std::size_t columns = 4;
  std::size_t workers = 1;
  bool skip_unmatched = true;
  std::size_t warmup = 10;
  std::size_t steps = 200;
  std::size_t windows = 5;
  std::size_t features = kBenchWidth;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  FineLoss fine_loss = FineLoss::Sum;
};

/// Builds the model, runs `warmup` untimed steps, then `steps` timed ones on a
/// fresh executor. ops_per_sec is steps / total time; its stddev is taken over
/// `windows` equal slices of the timed steps.
BenchRecord run_bench(const BenchOptions& options);

inline constexpr const char* kBenchCsvHeader = "columns,workers,skip,ops_per_sec,stddev";

/// Header plus one row per record; skip is 1/0, reals use 17 significant digits.
void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records);

/// Inverse of write_bench_csv. Only the CSV columns are filled in.
std::vector<BenchRecord> parse_bench_csv(std::istream& in);

void write_bench_json(std::ostream& out, const std::vector<BenchRecord>& records);
std::vector<BenchRecord> parse_bench_json(std::istream& in);

}  // namespace tapegraph
