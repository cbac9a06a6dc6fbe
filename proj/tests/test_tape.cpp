#include <atomic>
#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "closure_trees.hpp"
#include "support.hpp"
#include "tapegraph/tape.hpp"

using namespace tapegraph;
using namespace tgtest;

namespace {

Tape<double> weight_tape(const ScalarWeight& w) { return w.tape(); }

}  // namespace

TEST_CASE("weights apply SGD only when the effect runs") {
  Executor ex(1);
  auto w = make_weight(5.0, 0.1);
  auto effect = w.tape().backward(now(1.0));
  CHECK(w.value() == 5.0);
  run_blocking(effect, ex);
  CHECK(w.value() == doctest::Approx(4.9).epsilon(1e-15));
  CHECK(w.update_count() == 1);

  auto v = make_weight(5.0, 0.1);
  run_blocking(v.tape().backward(now(0.0)), ex);
  CHECK(v.value() == 5.0);

  auto untouched = make_weight(5.0, 0.1);
  { auto never = untouched.tape().backward(now(1.0)); }
  CHECK(untouched.value() == 5.0);

  CHECK_THROWS_AS(make_weight(1.0, 0.0), Error);
  CHECK_THROWS_AS(make_weight(1.0, -1.0), Error);
}

TEST_CASE("custom update rules replace SGD") {
  Executor ex(1);
  auto w = make_weight(10.0, 0.5);
  w.set_update_rule([](double& s, const double& d, double lr) { s -= 2 * lr * d; });
  run_blocking(w.tape().backward(now(1.0)), ex);
  CHECK(w.value() == 9.0);
}

TEST_CASE("literal backward never forces its delta") {
  Executor ex(1);
  auto lit = make_literal<double>(3.0);
  CHECK(lit.data == 3.0);
  std::atomic<int> probe{0};
  run_blocking(lit.backward(delay([&] {
                 ++probe;
                 return 1.0;
               })),
               ex);
  CHECK(probe == 0);
}

TEST_CASE("closure_plus and closure_scale examples") {
  Executor ex(1);
  std::atomic<int> forced{0};
  auto counted = [&](double v) {
    return delay([&forced, v] {
      ++forced;
      return v;
    });
  };
  run_blocking(closure_plus(no_op_closure<double>(), no_op_closure<double>())(counted(1.0)), ex);
  CHECK(forced == 0);

  auto w = make_weight(10.0, 0.5);
  run_blocking(closure_plus(w.tape().backward, w.tape().backward)(counted(1.0)), ex);
  CHECK(forced == 1);
  auto twice = make_weight(10.0, 0.5);
  run_blocking(twice.tape().backward(now(1.0)), ex);
  run_blocking(twice.tape().backward(now(1.0)), ex);
  CHECK(w.value() == twice.value());
  CHECK(w.value() == 9.0);

  auto s1 = make_weight(4.0, 1.0);
  auto s2 = make_weight(4.0, 1.0);
  run_blocking(closure_scale(1.0, s1.tape().backward)(now(2.0)), ex);
  run_blocking(s2.tape().backward(now(2.0)), ex);
  CHECK(s1.value() == s2.value());

  auto z = make_weight(4.0, 1.0);
  run_blocking(closure_scale(0.0, z.tape().backward)(now(1.0)), ex);
  CHECK(z.value() == 4.0);

  auto a = make_weight(20.0, 1.0);
  auto b = make_weight(20.0, 1.0);
  run_blocking(closure_scale(3.0, a.tape().backward)(now(2.0)), ex);
  run_blocking(b.tape().backward(now(6.0)), ex);
  CHECK(a.value() == b.value());
  CHECK(a.value() == 14.0);
}

TEST_CASE("closure algebra laws over 1000 random trees") {
  Executor ex(1);
  Rng rng(77);
  constexpr std::size_t kWeights = 4;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> init;
    for (std::size_t i = 0; i < kWeights; ++i) init.push_back(static_cast<double>(rng.index(100)) - 50);
    const double delta = static_cast<double>(rng.index(9)) - 4;
    const TreePtr f = random_tree(rng, kWeights, 3);
    const TreePtr g = random_tree(rng, kWeights, 3);
    const TreePtr h = random_tree(rng, kWeights, 3);
    const double a = static_cast<double>(rng.index(7)) - 3;
    const double b = static_cast<double>(rng.index(7)) - 3;

    // Every realized tree matches the coefficient oracle.
    const TreePtr sample = plus(f, scale(a, g));
    std::vector<double> coeff(kWeights, 0.0);
    coefficients(sample, 1.0, coeff);
    const auto got = run_tree(sample, init, delta, ex);
    for (std::size_t i = 0; i < kWeights; ++i) CHECK(got[i] == init[i] - coeff[i] * delta);

    CHECK(run_tree(plus(plus(f, g), h), init, delta, ex) == run_tree(plus(f, plus(g, h)), init, delta, ex));
    CHECK(run_tree(plus(f, g), init, delta, ex) == run_tree(plus(g, f), init, delta, ex));
    CHECK(run_tree(scale(a, plus(f, g)), init, delta, ex) ==
          run_tree(plus(scale(a, f), scale(a, g)), init, delta, ex));
    CHECK(run_tree(scale(a, scale(b, f)), init, delta, ex) == run_tree(scale(a * b, f), init, delta, ex));
    CHECK(run_tree(scale(1.0, f), init, delta, ex) == run_tree(f, init, delta, ex));
  }
}

TEST_CASE("product rule on weights") {
  Executor ex(1);
  auto a = make_weight(2.0, 1.0);
  auto b = make_weight(3.0, 1.0);
  const Tape<double> p = dual_mul(weight_tape(a), weight_tape(b));
  CHECK(p.data == 6.0);
  run_blocking(p.backward(now(1.0)), ex);
  CHECK(a.value() == -1.0);
  CHECK(b.value() == 1.0);
}

TEST_CASE("adding a zero literal leaves data and gradient unchanged") {
  Executor ex(1);
  auto x = make_weight(7.0, 1.0);
  auto y = make_weight(7.0, 1.0);
  const Tape<double> s = dual_add(weight_tape(x), make_literal<double>(0.0));
  CHECK(s.data == 7.0);
  run_blocking(s.backward(now(2.0)), ex);
  run_blocking(y.tape().backward(now(2.0)), ex);
  CHECK(x.value() == y.value());
}

TEST_CASE("square of a weight has derivative 2w") {
  Executor ex(1);
  auto w = make_weight(3.0, 1.0);
  double grad = 0.0;
  w.set_update_rule([&](double&, const double& d, double) { grad += d; });
  const Tape<double> t = weight_tape(w);
  run_blocking(dual_mul(t, t).backward(now(1.0)), ex);
  const double h = 1e-6;
  const double fd = ((3.0 + h) * (3.0 + h) - (3.0 - h) * (3.0 - h)) / (2 * h);
  CHECK(grad == 6.0);
  CHECK(std::abs(grad - fd) / 6.0 < 1e-6);
}

TEST_CASE("scalar adjoints") {
  Executor ex(1);
  auto collect = [&](auto build, double x, double y) {
    auto a = make_weight(x, 1.0);
    auto b = make_weight(y, 1.0);
    double ga = 0, gb = 0;
    a.set_update_rule([&](double&, const double& d, double) { ga += d; });
    b.set_update_rule([&](double&, const double& d, double) { gb += d; });
    const Tape<double> t = build(weight_tape(a), weight_tape(b));
    run_blocking(t.backward(now(1.0)), ex);
    return std::pair<double, double>(ga, gb);
  };
  CHECK(collect([](auto l, auto r) { return dual_sub(l, r); }, 4, 9) == std::pair<double, double>(1, -1));
  CHECK(collect([](auto l, auto r) { return dual_div(l, r); }, 6, 2) == std::pair<double, double>(0.5, -1.5));
  CHECK(collect([](auto l, auto r) { return dual_max(l, r); }, 1, 2) == std::pair<double, double>(0, 1));
  CHECK(collect([](auto l, auto r) { return dual_max(l, r); }, 2, 2) == std::pair<double, double>(1, 0));
  CHECK(collect([](auto l, auto) { return dual_neg(l); }, 2, 2) == std::pair<double, double>(-1, 0));
  CHECK(dual_div(make_literal<double>(1.0), make_literal<double>(4.0)).data == 0.25);
  CHECK_THROWS_AS(dual_div(make_literal<double>(1.0), make_literal<double>(0.0)), Error);
}

TEST_CASE("tensor adjoints") {
  Executor ex(1);
  auto grad_of_weight = [&](TensorWeight& w) {
    auto g = std::make_shared<std::optional<Tensor>>();
    w.set_update_rule([g](Tensor&, const Tensor& d, double) {
      *g = g->has_value() ? elementwise_add(**g, d) : d;
    });
    return g;
  };

  SUBCASE("relu masks the delta") {
    auto a = make_weight(Tensor::vector({-1, 2}), 1.0);
    auto g = grad_of_weight(a);
    run_blocking(dual_relu(a.tape()).backward(now(Tensor::vector({5, 7}))), ex);
    CHECK(**g == Tensor::vector({0, 7}));
  }

  SUBCASE("matmul distributes delta by transposes") {
    Rng rng(4);
    const Tensor av = rng.uniform_tensor(Shape{3, 4}, -2, 2);
    const Tensor bv = rng.uniform_tensor(Shape{4, 2}, -2, 2);
    const Tensor delta = rng.uniform_tensor(Shape{3, 2}, -1, 1);
    auto a = make_weight(av, 1.0);
    auto b = make_weight(bv, 1.0);
    auto ga = grad_of_weight(a);
    auto gb = grad_of_weight(b);
    run_blocking(dual_matmul(a.tape(), b.tape()).backward(now(delta)), ex);
    CHECK(**ga == matmul(delta, transpose(bv)));
    CHECK(**gb == matmul(transpose(av), delta));

    // Finite differences of <delta, A B> with respect to each entry of A.
    const double h = 1e-6;
    for (std::size_t i = 0; i < av.size(); ++i) {
      std::vector<double> up(av.data().begin(), av.data().end()), down = up;
      up[i] += h;
      down[i] -= h;
      const double fd = (dot(delta, matmul(Tensor(av.shape(), up), bv)) -
                         dot(delta, matmul(Tensor(av.shape(), down), bv))) /
                        (2 * h);
      CHECK(std::abs((**ga)[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }

  SUBCASE("fused softmax cross-entropy gradient is p - y") {
    const Tensor logits = Tensor::matrix(1, 2, {0.3, -1.2});
    auto w = make_weight(logits, 1.0);
    auto g = grad_of_weight(w);
    const Tape<double> loss = dual_softmax_cross_entropy(w.tape(), {1});
    const Tensor p = softmax_rows(logits);
    CHECK(loss.data == doctest::Approx(-std::log(p[1])).epsilon(1e-14));
    run_blocking(loss.backward(now(1.0)), ex);
    CHECK(std::abs((**g)[0] - p[0]) < 1e-10);
    CHECK(std::abs((**g)[1] - (p[1] - 1.0)) < 1e-10);
  }

  SUBCASE("sum, dot, scalar scaling and row bias") {
    auto t = make_weight(Tensor::matrix(2, 2, {1, 2, 3, 4}), 1.0);
    auto gt = grad_of_weight(t);
    run_blocking(dual_sum(t.tape()).backward(now(2.0)), ex);
    CHECK(**gt == Tensor::filled(Shape{2, 2}, 2.0));

    auto s = make_weight(3.0, 1.0);
    double gs = 0;
    s.set_update_rule([&](double&, const double& d, double) { gs += d; });
    auto u = make_weight(Tensor::vector({1, 2}), 1.0);
    auto gu = grad_of_weight(u);
    const Tape<Tensor> st = dual_scalar_mul_tensor(s.tape(), u.tape());
    CHECK(st.data == Tensor::vector({3, 6}));
    run_blocking(st.backward(now(Tensor::vector({1, 1}))), ex);
    CHECK(gs == 3.0);
    CHECK(**gu == Tensor::vector({3, 3}));

    auto m = make_weight(Tensor::matrix(2, 2, {0, 0, 0, 0}), 1.0);
    auto row = make_weight(Tensor::vector({1, -1}), 1.0);
    auto grow = grad_of_weight(row);
    const Tape<Tensor> biased = dual_add_row(m.tape(), row.tape());
    CHECK(biased.data == Tensor::matrix(2, 2, {1, -1, 1, -1}));
    run_blocking(biased.backward(now(Tensor::matrix(2, 2, {1, 2, 3, 4}))), ex);
    CHECK(**grow == Tensor::vector({4, 6}));

    auto p = make_weight(Tensor::vector({1, 2}), 1.0);
    auto q = make_weight(Tensor::vector({3, 5}), 1.0);
    auto gp = grad_of_weight(p);
    const Tape<double> d = dual_dot(p.tape(), q.tape());
    CHECK(d.data == 13.0);
    run_blocking(d.backward(now(1.0)), ex);
    CHECK(**gp == Tensor::vector({3, 5}));
  }

  CHECK_THROWS_AS(dual_matmul(make_literal<Tensor>(Tensor::matrix(1, 2, {1, 2})),
                              make_literal<Tensor>(Tensor::matrix(1, 2, {1, 2}))),
                  Error);
}

TEST_CASE("building a backward task mutates nothing") {
  auto a = make_weight(2.0, 1.0);
  auto b = make_weight(3.0, 1.0);
  const Tape<double> p = dual_add(dual_mul(weight_tape(a), weight_tape(b)), weight_tape(a));
  { auto effect = p.backward(now(1.0)); }
  CHECK(a.value() == 2.0);
  CHECK(b.value() == 3.0);
  CHECK(a.update_count() == 0);
}
