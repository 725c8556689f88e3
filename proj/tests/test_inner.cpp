#include <doctest.h>

#include "oracles.hpp"
#include "reweight/inner.hpp"

#include <cstring>

using namespace reweight;

namespace {

ModelSpec linear(int d) {
  ModelSpec s;
  s.kind = ModelKind::Linear;
  s.input_dim = d;
  return s;
}

AnnotatedDataset quadratic_1d() {
  // single sample x = 1, y = 1 with Square loss gives L = w (theta - 1)^2
  AnnotatedDataset ds;
  ds.batch.features = Mat::Ones(1, 1);
  ds.batch.labels = Vec::Ones(1);
  return ds;
}

AnnotatedDataset random_regression(Rng& rng, int n, int d) {
  AnnotatedDataset ds;
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  ds.batch.features = Mat::NullaryExpr(n, d, [&]() { return dist(rng); });
  Vec truth = Vec::NullaryExpr(d, [&]() { return dist(rng); });
  ds.batch.labels = ds.batch.features * truth + 0.05 * Vec::NullaryExpr(n, [&]() { return dist(rng); });
  return ds;
}

}  // namespace

TEST_CASE("hand iteration of the 1-D quadratic") {
  auto ds = quadratic_1d();
  InnerConfig cfg;
  cfg.steps = 2;
  cfg.learning_rate = 0.25;
  TrainResult r =
      train_weighted_erm(ds, Vec::Ones(1), linear(1), LossFamily::Square, cfg, Vec::Zero(1));
  CHECK(r.theta_Tm1[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.theta_T[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(r.loss_trace.size() == 2);
  CHECK(r.loss_trace[0] == doctest::Approx(1.0));
  CHECK(r.loss_trace[1] == doctest::Approx(0.25));
}

TEST_CASE("all-zero weights freeze the parameters") {
  Rng rng(3);
  auto ds = random_regression(rng, 6, 3);
  InnerConfig cfg;
  cfg.steps = 10;
  cfg.init_seed = 42;
  Vec theta0 = init_params(linear(3), cfg.init_seed);
  TrainResult r = train_weighted_erm(ds, Vec::Zero(6), linear(3), LossFamily::Square, cfg);
  CHECK((r.theta_T - theta0).norm() == 0.0);
}

TEST_CASE("full-batch GD approaches the closed-form WLS optimum") {
  Rng rng(17);
  auto ds = random_regression(rng, 40, 3);
  Vec w = Vec::NullaryExpr(40, [&]() { return 0.25 + static_cast<double>(rng() % 100) / 50.0; });
  InnerConfig cfg;
  cfg.steps = 4000;
  cfg.learning_rate = 0.05;
  TrainResult r = train_weighted_erm(ds, w, linear(3), LossFamily::Square, cfg);
  Vec exact = solve_weighted_least_squares(ds.batch.features, ds.batch.labels, w, 0.0);

  auto weighted_loss = [&](const Vec& th) {
    Vec res = ds.batch.labels - ds.batch.features * th;
    return res.array().square().matrix().dot(w) / 40.0;
  };
  CHECK(weighted_loss(r.theta_T) - weighted_loss(exact) <= 1e-6);
}

TEST_CASE("theta_Tm1 reproduces theta_T under one manual update") {
  Rng rng(29);
  auto ds = random_regression(rng, 12, 2);
  Vec w = Vec::Ones(12);
  InnerConfig cfg;
  cfg.steps = 7;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.05;
  cfg.init_seed = 5;
  TrainResult r = train_weighted_erm(ds, w, linear(2), LossFamily::Square, cfg);

  auto grads = per_sample_loss_grads(linear(2), r.theta_Tm1, ds.batch, LossFamily::Square);
  Vec g = grads.grads.transpose() * w / 12.0 + cfg.weight_decay * r.theta_Tm1;
  Vec reapplied = r.theta_Tm1 - cfg.learning_rate * g;
  CHECK(oracles::rel_error(reapplied, r.theta_T) <= 1e-14);
}

TEST_CASE("identical configs give bit-identical results") {
  Rng rng(4);
  auto ds = random_regression(rng, 15, 3);
  Vec w = Vec::Ones(15);
  InnerConfig cfg;
  cfg.steps = 20;
  cfg.optimizer = InnerOptimizer::SGD;
  cfg.batch_size = 4;
  cfg.init_seed = 77;
  TrainResult a = train_weighted_erm(ds, w, linear(3), LossFamily::Square, cfg);
  TrainResult b = train_weighted_erm(ds, w, linear(3), LossFamily::Square, cfg);
  CHECK(std::memcmp(a.theta_T.data(), b.theta_T.data(), sizeof(double) * 3) == 0);
  CHECK(std::memcmp(a.loss_trace.data(), b.loss_trace.data(), sizeof(double) * 20) == 0);
  CHECK(a.last_batch == b.last_batch);
  CHECK(a.last_batch.size() == 4);
}

TEST_CASE("divergence is reported with a step index") {
  auto ds = quadratic_1d();
  InnerConfig cfg;
  cfg.steps = 60;
  cfg.learning_rate = 1e12;  // wildly unstable on the quadratic
  Vec huge = Vec::Constant(1, 1e200);
  bool threw = false;
  try {
    train_weighted_erm(ds, Vec::Ones(1), linear(1), LossFamily::Square, cfg, huge);
  } catch (const DivergenceError& e) {
    threw = true;
    CHECK(e.step >= 0);
  }
  CHECK(threw);
}

TEST_CASE("WLS hand examples") {
  // interpolation of the first coordinate
  Rng rng(10);
  Mat X = Mat::NullaryExpr(8, 3, [&]() { return static_cast<double>(rng() % 7) - 3.0; });
  Vec y = X.col(0);
  Vec theta = solve_weighted_least_squares(X, y, Vec::Ones(8), 0.0);
  CHECK(theta[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(theta[1]) <= 1e-10);
  CHECK(std::abs(theta[2]) <= 1e-10);

  // two samples, one dimension, hand normal equation
  Mat X2(2, 1);
  X2 << 1, 2;
  Vec y2(2);
  y2 << 1, 4;
  Vec th2 = solve_weighted_least_squares(X2, y2, Vec::Ones(2), 0.0);
  CHECK(th2[0] == doctest::Approx(1.8).epsilon(1e-14));
}

TEST_CASE("WLS with concentrated weight matches an iterative solve") {
  // weight concentrated on one duplicated sample, ridge > 0
  Mat X(4, 2);
  X << 1, 2, 1, 2, 3, -1, 0.5, 0.5;
  Vec y(4);
  y << 2, 2, 1, 0;
  Vec w(4);
  w << 5, 5, 0, 0;
  double ridge = 0.3;
  Vec theta = solve_weighted_least_squares(X, y, w, ridge);

  // brute-force gradient descent on the same objective
  Vec th = Vec::Zero(2);
  for (int t = 0; t < 200000; ++t) {
    Vec grad = Vec::Zero(2);
    for (int i = 0; i < 4; ++i) {
      double r = y[i] - X.row(i).dot(th);
      grad -= 2.0 * w[i] * r * X.row(i).transpose();
    }
    grad += 2.0 * ridge * th;
    th -= 1e-3 * grad;
  }
  CHECK((theta - th).norm() <= 1e-8);
}

TEST_CASE("WLS argmin is invariant to weight scaling") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    auto ds = random_regression(rng, 12, 3);
    Vec w = Vec::NullaryExpr(12, [&]() { return 0.1 + static_cast<double>(rng() % 50) / 10.0; });
    Vec a = solve_weighted_least_squares(ds.batch.features, ds.batch.labels, w, 0.0);
    Vec b = solve_weighted_least_squares(ds.batch.features, ds.batch.labels, 7.3 * w, 0.0);
    CHECK((a - b).norm() <= 1e-10);
  }
}

TEST_CASE("singular ridge-free system raises") {
  Mat X(3, 2);
  X << 1, 1, 2, 2, 3, 3;  // rank 1
  Vec y(3);
  y << 1, 2, 3;
  CHECK_THROWS_AS(solve_weighted_least_squares(X, y, Vec::Ones(3), 0.0), std::runtime_error);
  // with ridge the system is well posed
  Vec theta = solve_weighted_least_squares(X, y, Vec::Ones(3), 1e-3);
  CHECK(all_finite(theta));
  CHECK_THROWS_AS(solve_weighted_least_squares(X, y, Vec::Zero(3), 0.0), std::invalid_argument);
}
