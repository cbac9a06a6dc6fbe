#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tapegraph {

/// Ordered list of extents. Every extent is at least 1.
class Shape {
 public:
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const noexcept { return numel_; }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_ = 1;
};

/// Dense row-major array of doubles. Immutable once constructed, so copies
/// share storage and may cross threads freely.
class Tensor {
 public:
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> data() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;

  std::size_t rows() const;
  std::size_t cols() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && *a.data_ == *b.data_;
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

Tensor elementwise_add(const Tensor& a, const Tensor& b);
Tensor elementwise_sub(const Tensor& a, const Tensor& b);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor negate(const Tensor& a);
Tensor scalar_mul(double s, const Tensor& a);

/// (m x k) * (k x n) -> (m x n).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor relu_mask(const Tensor& a);

/// Softmax over the last axis of a rank-2 tensor, with per-row max subtraction.
Tensor softmax_rows(const Tensor& a);
/// log(sum(exp(row))) per row, computed stably.
std::vector<double> logsumexp_rows(const Tensor& a);

double sum_all(const Tensor& a);
/// Sum of elementwise products of two equally shaped tensors.
double dot(const Tensor& a, const Tensor& b);

/// Repeats a rank-1 vector `rows` times into a (rows x n) matrix.
Tensor broadcast_row(const Tensor& v, std::size_t rows);
/// Column sums of a rank-2 tensor as a rank-1 vector; adjoint of broadcast_row.
Tensor column_sums(const Tensor& a);

std::vector<std::size_t> argmax_rows(const Tensor& a);
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

}  // namespace tapegraph
