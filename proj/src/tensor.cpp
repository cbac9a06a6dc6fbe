#include "tapegraph/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tapegraph/error.hpp"

namespace tapegraph {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw shape_error(std::string(op) + ": " + a.shape().to_string() + " vs " +
                      b.shape().to_string());
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.shape().rank() != rank) {
    throw shape_error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                      a.shape().to_string());
  }
}

Tensor checked(const char* op, Shape shape, std::vector<double> data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw arithmetic_error(std::string(op) + " produced a non-finite value");
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

template <class F>
Tensor zip_with(const char* op, const Tensor& a, const Tensor& b, F f) {
  require_same_shape(op, a, b);
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return checked(op, a.shape(), std::move(out));
}

template <class F>
Tensor map_with(const char* op, const Tensor& a, F f) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return checked(op, a.shape(), std::move(out));
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw shape_error("extent must be >= 1 in " + to_string());
    if (numel_ > std::numeric_limits<std::size_t>::max() / d) {
      throw shape_error("element count overflows in " + to_string());
    }
    numel_ *= d;
  }
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(std::move(data))) {
  if (data_->size() != shape_.numel()) {
    throw shape_error("data length " + std::to_string(data_->size()) + " does not match shape " +
                      shape_.to_string());
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return filled(std::move(shape), 1.0); }

Tensor Tensor::filled(Shape shape, double value) {
  std::vector<double> data(shape.numel(), value);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_rank("at", *this, 2);
  if (row >= shape_[0] || col >= shape_[1]) throw shape_error("index out of range");
  return (*data_)[row * shape_[1] + col];
}

std::size_t Tensor::rows() const {
  require_rank("rows", *this, 2);
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_rank("cols", *this, 2);
  return shape_[1];
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
  return zip_with("elementwise_add", a, b, [](double x, double y) { return x + y; });
}

Tensor elementwise_sub(const Tensor& a, const Tensor& b) {
  return zip_with("elementwise_sub", a, b, [](double x, double y) { return x - y; });
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  return zip_with("elementwise_mul", a, b, [](double x, double y) { return x * y; });
}

Tensor negate(const Tensor& a) {
  return map_with("negate", a, [](double x) { return -x; });
}

Tensor scalar_mul(double s, const Tensor& a) {
  return map_with("scalar_mul", a, [s](double x) { return s * x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw shape_error("matmul: inner extents differ: " + a.shape().to_string() + " x " +
                      b.shape().to_string());
  }
  std::vector<double> out(m * n, 0.0);
  auto x = a.data();
  auto y = b.data();
  // i-t-j loop order; each out[i,j] is still summed over t left to right.
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = x[i * k + t];
      const double* brow = y.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return checked("matmul", Shape{m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<double> out(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return Tensor(Shape{n, m}, std::move(out));
}

Tensor relu(const Tensor& a) {
  return map_with("relu", a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor relu_mask(const Tensor& a) {
  return map_with("relu_mask", a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank("softmax_rows", a, 2);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<double> out(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return checked("softmax_rows", a.shape(), std::move(out));
}

std::vector<double> logsumexp_rows(const Tensor& a) {
  require_rank("logsumexp_rows", a, 2);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<double> out(m);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    out[i] = mx + std::log(total);
  }
  return out;
}

double sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return total;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  double total = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * y[i];
  return total;
}

Tensor broadcast_row(const Tensor& v, std::size_t rows) {
  require_rank("broadcast_row", v, 1);
  if (rows == 0) throw shape_error("broadcast_row: rows must be >= 1");
  const std::size_t n = v.size();
  std::vector<double> out(rows * n);
  auto x = v.data();
  for (std::size_t i = 0; i < rows; ++i) std::copy(x.begin(), x.end(), out.begin() + i * n);
  return Tensor(Shape{rows, n}, std::move(out));
}

Tensor column_sums(const Tensor& a) {
  require_rank("column_sums", a, 2);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<double> out(n, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  return checked("column_sums", Shape{n}, std::move(out));
}

std::vector<std::size_t> argmax_rows(const Tensor& a) {
  require_rank("argmax_rows", a, 2);
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<std::size_t> out(m);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + n) - row);
  }
  return out;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  if (labels.empty()) throw shape_error("one_hot: no labels");
  std::vector<double> out(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw shape_error("one_hot: label " + std::to_string(labels[i]) + " >= " +
                        std::to_string(classes));
    }
    out[i * classes + labels[i]] = 1.0;
  }
  return Tensor(Shape{labels.size(), classes}, std::move(out));
}

}  // namespace tapegraph
