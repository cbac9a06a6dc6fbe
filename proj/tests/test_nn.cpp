#include <chrono>
#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tapegraph/nn.hpp"

using namespace tapegraph;

namespace {

LinRegModel zero_model(std::size_t inputs, LinRegOptions opts = {}) {
  LinRegModel m = make_linreg_model(inputs, 0, opts);
  for (auto& w : m.weights) w.assign(0.0);
  m.bias.assign(0.0);
  return m;
}

Tensor gated_input(const GatedModel& m, std::uint64_t seed) {
  Rng rng(seed, "input");
  return rng.uniform_tensor(Shape{1, m.features});
}

void reset_probes(const GatedModel& m) {
  *m.gate_probe = 0;
  *m.left_probe = 0;
  *m.right_probe = 0;
}

}  // namespace

TEST_CASE("linreg loss examples") {
  Executor ex(1);
  const LinRegModel zero = zero_model(3, {.normalization = Normalization::None});
  CHECK(run_blocking(predict(linreg_loss(zero, {1, 2, 3}, 0.0)), ex) == 0.0);
  CHECK(run_blocking(predict(linreg_loss(zero, {3, 4, 5}, 6.0)), ex) == 36.0);
  CHECK_THROWS_AS(linreg_loss(zero, {1, 2}, 0.0), Error);

  const auto pairs = paper_linreg_pairs();
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].question == std::vector<double>{3, 4, 5});
  CHECK(pairs[0].expected == 6.0);
}

TEST_CASE("linreg bias gradient is twice the residual") {
  Executor ex(1);
  LinRegModel m = make_linreg_model(3, 5, {.normalization = Normalization::None});
  const std::vector<double> q{0.3, 0.4, 0.5};
  const double expected = 0.6;
  const double pred = run_blocking(predict(guess_next_number(m, q)), ex);
  auto build = [&] { return linreg_loss(m, q, expected); };
  std::vector<ScalarWeight> all = m.weights;
  all.push_back(m.bias);
  const double an = tgtest::analytic_gradients(all, build, ex).back();
  const double fd = tgtest::numeric_derivative(m.bias, build, ex);
  CHECK(an == doctest::Approx(2 * (pred - expected)).epsilon(1e-12));
  CHECK(std::abs(an - fd) / std::abs(an) < 1e-5);
}

TEST_CASE("one small step from zero decreases the loss") {
  Executor ex(1);
  LinRegModel m = zero_model(3, {.learning_rate = 1e-3, .normalization = Normalization::None});
  const std::vector<LinRegPair> pair{{{3, 4, 5}, 6}};
  const double before = linreg_total_loss(m, pair, ex);
  train_linreg(m, pair, 1, ex);
  CHECK(linreg_total_loss(m, pair, ex) < before);
}

TEST_CASE("learning rate zero leaves the model unchanged") {
  Executor ex(1);
  LinRegModel m = make_linreg_model(3, 9, {.learning_rate = 0.0});
  std::vector<double> before;
  for (const auto& w : m.weights) before.push_back(w.value());
  const double bias = m.bias.value();
  train_linreg(m, paper_linreg_pairs(), 20, ex);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.weights[i].value() == before[i]);
  CHECK(m.bias.value() == bias);
}

TEST_CASE("linreg learns the arithmetic progression") {
  Executor ex(1);
  const auto t0 = std::chrono::steady_clock::now();
  LinRegModel m = make_linreg_model(3, 0);
  const LinRegReport r = train_linreg(m, paper_linreg_pairs(), 500, ex);
  const double p = predict_linreg(m, {42, 43, 44}, ex);
  CHECK(std::abs(p - 45.0) < 1.0);
  CHECK(r.final_loss < 1e-2 * r.initial_loss);
  CHECK(r.loss_history.size() == 500);
  CHECK(tgtest::seconds_since(t0) < 5.0);
}

TEST_CASE("raw inputs with a large rate diverge with the iteration index") {
  Executor ex(1);
  LinRegModel m = make_linreg_model(3, 0, {.learning_rate = 0.5, .normalization = Normalization::None});
  try {
    train_linreg(m, paper_linreg_pairs(), 500, ex);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Arithmetic);
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("gate scores pick the branch with a strict comparison") {
  Executor ex(1);
  GatedModel m = make_gated_model(3);
  m.gate_left.assign(Tensor::zeros(Shape{m.hidden, 1}));
  m.gate_right.assign(Tensor::zeros(Shape{m.hidden, 1}));
  m.gate_left_bias.assign(0.9);
  m.gate_right_bias.assign(0.1);
  const Tensor x = gated_input(m, 1);
  const Tensor left = run_blocking(predict(left_subnet(m, as_layer(x))), ex);
  const Tensor right = run_blocking(predict(right_subnet(m, as_layer(x))), ex);
  for (auto s : {GatedStrategy::Eager, GatedStrategy::Sequential, GatedStrategy::Parallel}) {
    CHECK(run_blocking(predict(gated_forward(m, x, s, ex)), ex) == scalar_mul(0.9, left));
  }
  m.gate_left_bias.assign(0.4);
  m.gate_right_bias.assign(0.4);
  for (auto s : {GatedStrategy::Eager, GatedStrategy::Sequential, GatedStrategy::Parallel}) {
    CHECK(run_blocking(predict(gated_forward(m, x, s, ex)), ex) == scalar_mul(0.4, right));
  }
}

TEST_CASE("gated strategies agree and only the eager one repeats the gate") {
  Executor ex(1);
  const Tensor target = Tensor::zeros(Shape{1, 8});
  std::vector<std::vector<Tensor>> stores;
  for (auto s : {GatedStrategy::Eager, GatedStrategy::Sequential, GatedStrategy::Parallel}) {
    GatedModel m = make_gated_model(42);
    const Tensor x = gated_input(m, 42);
    reset_probes(m);
    const TensorLayer out = gated_forward(m, x, s, ex);
    const Tensor y = run_blocking(predict(out), ex);
    if (s == GatedStrategy::Eager) {
      CHECK(*m.gate_probe >= 2);
    } else {
      CHECK(*m.gate_probe == 1);
    }
    CHECK(*m.left_probe + *m.right_probe == 1);

    const bool took_left = *m.left_probe == 1;
    const Tensor untaken = took_left ? m.right.value() : m.left.value();
    reset_probes(m);
    run_blocking(train(gated_loss(gated_forward(m, x, s, ex), target)), ex);
    CHECK((took_left ? *m.right_probe : *m.left_probe) == 0);
    CHECK((took_left ? m.right.value() : m.left.value()) == untaken);
    CHECK((took_left ? m.right.update_count() : m.left.update_count()) == 0);

    stores.push_back({y, m.gate_hidden.value(), m.gate_left.value(), m.gate_right.value(),
                      Tensor::vector({m.gate_left_bias.value(), m.gate_right_bias.value()}), m.left.value(),
                      m.right.value()});
  }
  CHECK(stores[1] == stores[2]);
  CHECK(stores[0] == stores[1]);
}

TEST_CASE("gated strategies agree within 1e-12 on four workers") {
  Executor ex(4);
  const Tensor target = Tensor::zeros(Shape{1, 8});
  GatedModel a = make_gated_model(8), b = make_gated_model(8);
  const Tensor x = gated_input(a, 8);
  for (int i = 0; i < 3; ++i) {
    run_blocking(train(gated_loss(gated_forward(a, x, GatedStrategy::Sequential, ex), target)), ex);
    run_blocking(train(gated_loss(gated_forward(b, x, GatedStrategy::Parallel, ex), target)), ex);
  }
  const Tensor wa = a.gate_hidden.value(), wb = b.gate_hidden.value();
  for (std::size_t i = 0; i < wa.size(); ++i) CHECK(std::abs(wa[i] - wb[i]) <= 1e-12);
}

TEST_CASE("bench model skips unmatched fine heads") {
  Executor ex(1);
  const SyntheticData data(kBenchWidth, 1);
  const BenchBatch batch = data.batch(3, 0);
  CHECK(batch.x.shape() == Shape{kBatchRows, kBenchWidth});
  CHECK(batch.fine.size() == kBatchRows);
  for (std::size_t f : batch.fine) CHECK(f < kFineClasses);

  const BenchModel skip = build_bench_model(1, 7);
  bench_step(skip, batch, true, ex);
  int fired = 0;
  for (std::size_t k = 0; k < kCoarseClasses; ++k) fired += *skip.fine[k].probe;
  CHECK(fired == 1);
  CHECK(*skip.fine[3].probe == 1);

  const BenchModel all = build_bench_model(1, 7);
  bench_step(all, batch, false, ex);
  for (std::size_t k = 0; k < kCoarseClasses; ++k) CHECK(*all.fine[k].probe == 1);

  // The selected head sees the same features and the same loss term either way.
  CHECK(skip.fine[3].d1.w.value() == all.fine[3].d1.w.value());
  CHECK(skip.fine[3].d3.b.value() == all.fine[3].d3.b.value());
  CHECK(skip.fine[4].d1.w.update_count() == 0);
  CHECK(all.fine[4].d1.w.update_count() == 1);
}

TEST_CASE("bench model seeding is stable across column counts") {
  const BenchModel two = build_bench_model(2, 11);
  const BenchModel four = build_bench_model(4, 11);
  CHECK(two.columns[1].first.w.value() == four.columns[1].first.w.value());
  CHECK(two.coarse.w.value() == four.coarse.w.value());
  CHECK(two.fine[5].d2.w.value() == four.fine[5].d2.w.value());
  CHECK_FALSE(two.columns[0].first.w.value() == two.columns[1].first.w.value());
}

TEST_CASE("mean fine loss is the sum divided by the head count") {
  Executor ex(1);
  const SyntheticData data(kBenchWidth, 2);
  const BenchBatch batch = data.batch(0, 5);
  const BenchModel m = build_bench_model(1, 3);
  const double coarse = run_blocking(predict(bench_loss(m, batch, true)), ex) -
                        run_blocking(predict(softmax_cross_entropy(fine_logits(m, 0, bench_features(m, as_layer(batch.x))), batch.fine)), ex);
  const double total_sum = run_blocking(predict(bench_loss(m, batch, false, FineLoss::Sum)), ex);
  const double total_mean = run_blocking(predict(bench_loss(m, batch, false, FineLoss::Mean)), ex);
  CHECK(total_mean - coarse == doctest::Approx((total_sum - coarse) / kCoarseClasses).epsilon(1e-12));
}

TEST_CASE("bench inference picks one head from the coarse prediction") {
  Executor ex(1);
  const BenchModel m = build_bench_model(2, 4);
  const SyntheticData data(kBenchWidth, 4);
  const Tensor out = run_blocking(predict(bench_infer(m, data.batch(1, 0).x)), ex);
  CHECK(out.shape() == Shape{kBatchRows, kFineClasses});
  int fired = 0;
  for (const auto& h : m.fine) fired += *h.probe;
  CHECK(fired == 1);
}

TEST_CASE("diamond reports") {
  Executor ex(1);
  const DiamondReport naive = run_diamond(10, GraphMode::Naive, ex);
  CHECK(naive.leaf_backward_calls == 1024);
  const DiamondReport rc = run_diamond(2, GraphMode::RefCounted, ex);
  CHECK(rc.leaf_backward_calls == 2);
  CHECK(rc.final_store == -3.0);
}
