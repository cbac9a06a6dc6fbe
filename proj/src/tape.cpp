#include "tapegraph/tape.hpp"

#include <cmath>
#include <string>

namespace tapegraph {

namespace {

double finite(const char* op, double v) {
  if (!std::isfinite(v)) throw arithmetic_error(std::string(op) + " produced a non-finite value");
  return v;
}

template <class T>
UpdateClosure<T> negated(UpdateClosure<T> f) {
  if constexpr (std::is_same_v<T, double>) {
    return closure_scale(-1.0, std::move(f));
  } else {
    return closure_map<Tensor, Tensor>(std::move(f), [](const Tensor& d) { return negate(d); });
  }
}

}  // namespace

Tape<double> dual_add(const Tape<double>& l, const Tape<double>& r) {
  return {finite("add", l.data + r.data), closure_plus(l.backward, r.backward)};
}

Tape<Tensor> dual_add(const Tape<Tensor>& l, const Tape<Tensor>& r) {
  return {elementwise_add(l.data, r.data), closure_plus(l.backward, r.backward)};
}

Tape<double> dual_sub(const Tape<double>& l, const Tape<double>& r) {
  return {finite("sub", l.data - r.data), closure_plus(l.backward, negated(r.backward))};
}

Tape<Tensor> dual_sub(const Tape<Tensor>& l, const Tape<Tensor>& r) {
  return {elementwise_sub(l.data, r.data), closure_plus(l.backward, negated(r.backward))};
}

Tape<double> dual_neg(const Tape<double>& x) { return {-x.data, negated(x.backward)}; }

Tape<Tensor> dual_neg(const Tape<Tensor>& x) { return {negate(x.data), negated(x.backward)}; }

Tape<double> dual_mul(const Tape<double>& l, const Tape<double>& r) {
  return {finite("mul", l.data * r.data),
          closure_plus(closure_scale(r.data, l.backward), closure_scale(l.data, r.backward))};
}

Tape<Tensor> dual_mul(const Tape<Tensor>& l, const Tape<Tensor>& r) {
  Tensor out = elementwise_mul(l.data, r.data);
  const Tensor& a = l.data;
  const Tensor& b = r.data;
  return {std::move(out),
          closure_plus(
              closure_map<Tensor, Tensor>(l.backward,
                                          [b](const Tensor& d) { return elementwise_mul(d, b); }),
              closure_map<Tensor, Tensor>(r.backward,
                                          [a](const Tensor& d) { return elementwise_mul(d, a); }))};
}

Tape<double> dual_div(const Tape<double>& l, const Tape<double>& r) {
  if (r.data == 0.0) throw arithmetic_error("division by zero");
  const double q = finite("div", l.data / r.data);
  return {q, closure_plus(closure_scale(1.0 / r.data, l.backward),
                          closure_scale(finite("div", -q / r.data), r.backward))};
}

Tape<double> dual_max(const Tape<double>& l, const Tape<double>& r) {
  if (l.data >= r.data) {
    return {l.data, closure_plus(l.backward, closure_scale(0.0, r.backward))};
  }
  return {r.data, closure_plus(closure_scale(0.0, l.backward), r.backward)};
}

Tape<Tensor> dual_matmul(const Tape<Tensor>& l, const Tape<Tensor>& r) {
  Tensor out = matmul(l.data, r.data);
  Tensor a_t = transpose(l.data);
  Tensor b_t = transpose(r.data);
  return {std::move(out),
          closure_plus(
              closure_map<Tensor, Tensor>(l.backward,
                                          [b_t](const Tensor& d) { return matmul(d, b_t); }),
              closure_map<Tensor, Tensor>(r.backward,
                                          [a_t](const Tensor& d) { return matmul(a_t, d); }))};
}

Tape<Tensor> dual_relu(const Tape<Tensor>& x) {
  Tensor mask = relu_mask(x.data);
  return {relu(x.data), closure_map<Tensor, Tensor>(x.backward, [mask](const Tensor& d) {
            return elementwise_mul(d, mask);
          })};
}

Tape<double> dual_sum(const Tape<Tensor>& x) {
  Shape shape = x.data.shape();
  return {finite("sum", sum_all(x.data)),
          closure_map<double, Tensor>(x.backward, [shape](const double& d) {
            return Tensor::filled(shape, d);
          })};
}

Tape<double> dual_dot(const Tape<Tensor>& l, const Tape<Tensor>& r) {
  const Tensor& a = l.data;
  const Tensor& b = r.data;
  return {finite("dot", dot(a, b)),
          closure_plus(
              closure_map<double, Tensor>(l.backward,
                                          [b](const double& d) { return scalar_mul(d, b); }),
              closure_map<double, Tensor>(r.backward,
                                          [a](const double& d) { return scalar_mul(d, a); }))};
}

Tape<Tensor> dual_scalar_mul_tensor(const Tape<double>& s, const Tape<Tensor>& t) {
  const double sv = s.data;
  const Tensor& tv = t.data;
  return {scalar_mul(sv, tv),
          closure_plus(
              closure_map<Tensor, double>(s.backward,
                                          [tv](const Tensor& d) { return dot(d, tv); }),
              closure_scale(sv, t.backward))};
}

Tape<Tensor> dual_add_row(const Tape<Tensor>& m, const Tape<Tensor>& row) {
  if (m.data.shape().rank() != 2 || row.data.shape().rank() != 1 ||
      m.data.shape()[1] != row.data.shape()[0]) {
    throw shape_error("add_row: " + m.data.shape().to_string() + " + row " +
                      row.data.shape().to_string());
  }
  Tensor out = elementwise_add(m.data, broadcast_row(row.data, m.data.shape()[0]));
  return {std::move(out),
          closure_plus(m.backward, closure_map<Tensor, Tensor>(row.backward, [](const Tensor& d) {
                         return column_sums(d);
                       }))};
}

Tape<double> dual_softmax_cross_entropy(const Tape<Tensor>& logits,
                                        const std::vector<std::size_t>& labels) {
  const Tensor& x = logits.data;
  if (x.shape().rank() != 2 || x.shape()[0] != labels.size()) {
    throw shape_error("softmax_cross_entropy: logits " + x.shape().to_string() + " with " +
                      std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t classes = x.shape()[1];
  Tensor targets = one_hot(labels, classes);
  std::vector<double> lse = logsumexp_rows(x);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) loss += lse[i] - x.at(i, labels[i]);
  loss /= static_cast<double>(batch);
  Tensor grad = scalar_mul(1.0 / static_cast<double>(batch),
                           elementwise_sub(softmax_rows(x), targets));
  return {finite("softmax_cross_entropy", loss),
          closure_map<double, Tensor>(logits.backward, [grad](const double& d) {
            return scalar_mul(d, grad);
          })};
}

}  // namespace tapegraph
