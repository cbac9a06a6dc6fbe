#include "tapegraph/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace tapegraph {

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(field);
  return out;
}

std::size_t parse_count(const std::string& s, const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw usage_error(std::string("bad ") + what + " field '" + s + "'");
  }
  if (pos != s.size()) throw usage_error(std::string("bad ") + what + " field '" + s + "'");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& s, const char* what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw usage_error(std::string("bad ") + what + " field '" + s + "'");
  }
  if (pos != s.size()) throw usage_error(std::string("bad ") + what + " field '" + s + "'");
  return v;
}

}  // namespace

BenchRecord run_bench(const BenchOptions& options) {
  if (options.steps == 0) throw usage_error("bench needs at least one measured step");
  if (options.windows == 0 || options.windows > options.steps) {
    throw usage_error("bench windows must be between 1 and the step count");
  }
  Executor ex(options.workers);
  const BenchModel model =
      build_bench_model(options.columns, options.seed, options.features, options.learning_rate);
  const SyntheticData data(options.features, options.seed);
  std::uint64_t index = 0;
  auto step = [&] {
    const BenchBatch b = data.batch(index % kCoarseClasses, index);
    ++index;
    bench_step(model, b, options.skip_unmatched, ex, options.fine_loss);
  };
  for (std::size_t i = 0; i < options.warmup; ++i) step();

  using clock = std::chrono::steady_clock;
  std::vector<double> step_ms;
  step_ms.reserve(options.steps);
  for (std::size_t i = 0; i < options.steps; ++i) {
    const auto t0 = clock::now();
    step();
    step_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }

  std::vector<double> window_rates;
  const std::size_t per_window = options.steps / options.windows;
  for (std::size_t w = 0; w < options.windows; ++w) {
    const std::size_t begin = w * per_window;
    const std::size_t end = w + 1 == options.windows ? options.steps : begin + per_window;
    const double ms = std::accumulate(step_ms.begin() + begin, step_ms.begin() + end, 0.0);
    window_rates.push_back(static_cast<double>(end - begin) / (ms / 1000.0));
  }
  const double total_ms = std::accumulate(step_ms.begin(), step_ms.end(), 0.0);

  BenchRecord r;
  r.columns = options.columns;
  r.workers = options.workers;
  r.skip_unmatched = options.skip_unmatched;
  r.iterations = options.steps;
  r.ops_per_sec = static_cast<double>(options.steps) / (total_ms / 1000.0);
  r.ops_per_sec_stddev = stddev(window_rates);
  r.wall_ms_per_step_mean = mean(step_ms);
  r.wall_ms_per_step_stddev = stddev(step_ms);
  return r;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << kBenchCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.columns << ',' << r.workers << ',' << (r.skip_unmatched ? 1 : 0) << ','
        << format_real(r.ops_per_sec) << ',' << format_real(r.ops_per_sec_stddev) << '\n';
  }
}

std::vector<BenchRecord> parse_bench_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kBenchCsvHeader) {
    throw usage_error("bench CSV must start with the header '" + std::string(kBenchCsvHeader) + "'");
  }
  std::vector<BenchRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw usage_error("bench CSV row has " + std::to_string(f.size()) + " fields");
    BenchRecord r;
    r.columns = parse_count(f[0], "columns");
    r.workers = parse_count(f[1], "workers");
    if (f[2] != "0" && f[2] != "1") throw usage_error("bad skip field '" + f[2] + "'");
    r.skip_unmatched = f[2] == "1";
    r.ops_per_sec = parse_real(f[3], "ops_per_sec");
    r.ops_per_sec_stddev = parse_real(f[4], "stddev");
    records.push_back(r);
  }
  return records;
}

void write_bench_json(std::ostream& out, const std::vector<BenchRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"columns", r.columns},
                   {"workers", r.workers},
                   {"skip_unmatched", r.skip_unmatched},
                   {"iterations", r.iterations},
                   {"ops_per_sec", r.ops_per_sec},
                   {"ops_per_sec_stddev", r.ops_per_sec_stddev},
                   {"wall_ms_per_step_mean", r.wall_ms_per_step_mean},
                   {"wall_ms_per_step_stddev", r.wall_ms_per_step_stddev}});
  }
  out << arr.dump(2) << '\n';
}

std::vector<BenchRecord> parse_bench_json(std::istream& in) {
  std::vector<BenchRecord> records;
  try {
    const auto arr = nlohmann::json::parse(in);
    for (const auto& j : arr) {
      BenchRecord r;
      r.columns = j.at("columns").get<std::size_t>();
      r.workers = j.at("workers").get<std::size_t>();
      r.skip_unmatched = j.at("skip_unmatched").get<bool>();
      r.iterations = j.at("iterations").get<std::size_t>();
      r.ops_per_sec = j.at("ops_per_sec").get<double>();
      r.ops_per_sec_stddev = j.at("ops_per_sec_stddev").get<double>();
      r.wall_ms_per_step_mean = j.at("wall_ms_per_step_mean").get<double>();
      r.wall_ms_per_step_stddev = j.at("wall_ms_per_step_stddev").get<double>();
      records.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("bad bench JSON: ") + e.what());
  }
  return records;
}

}  // namespace tapegraph
