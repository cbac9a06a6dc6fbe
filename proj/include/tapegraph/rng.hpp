#pragma once

// Seed splitting. One root seed fans out to an independent stream per named
// weight:
//
//   stream_seed(root, key) = splitmix64(root ^ splitmix64(fnv1a64(key)))
//
// so adding a column (new keys) never shifts the values drawn for any other
// weight.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "tapegraph/tensor.hpp"

namespace tapegraph {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view key) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : key) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t stream_seed(std::uint64_t root, std::string_view key) noexcept {
  return splitmix64(root ^ splitmix64(fnv1a64(key)));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view key) : engine_(stream_seed(root, key)) {}

  /// Uniform on [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform on [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Tensor uniform_tensor(const Shape& shape, double lo = 0.0, double hi = 1.0);
  Tensor normal_tensor(const Shape& shape, double mean = 0.0, double stddev = 1.0);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

inline Tensor Rng::normal_tensor(const Shape& shape, double mean, double stddev) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = normal(mean, stddev);
  return Tensor(shape, std::move(v));
}

}  // namespace tapegraph
