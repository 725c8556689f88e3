#include "reweight/inner.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reweight {

void InnerConfig::validate() const {
  require(steps >= 1, "inner steps must be >= 1");
  require(learning_rate > 0.0, "inner learning rate must be positive");
  require(weight_decay >= 0.0, "weight decay must be nonnegative");
  if (optimizer == InnerOptimizer::SGD) require(batch_size >= 0, "batch size must be >= 0");
}

TrainResult train_weighted_erm(const AnnotatedDataset& data, const Vec& effective_weights,
                               const ModelSpec& model, LossFamily family, const InnerConfig& cfg,
                               const std::optional<Vec>& init) {
  cfg.validate();
  data.validate();
  int n = data.n();
  require(effective_weights.size() == n, "effective weight length mismatch");
  require(all_finite(effective_weights) && effective_weights.minCoeff() >= 0.0,
          "effective weights must be finite and nonnegative");

  Vec theta = init ? *init : init_params(model, cfg.init_seed);
  require(theta.size() == model.param_count(), "init params length mismatch");

  bool full_batch = cfg.optimizer == InnerOptimizer::GD || cfg.batch_size == 0 ||
                    cfg.batch_size >= n;

  // seeded epoch shuffles so the final mini-batch is reproducible
  Rng shuffle_rng(mix_seed(cfg.init_seed, 0x5486d5ULL));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  int cursor = n;  // forces a reshuffle on first use

  TrainResult out;
  out.loss_trace.resize(cfg.steps);
  Vec theta_prev = theta;
  std::vector<int> batch_idx;

  for (int t = 0; t < cfg.steps; ++t) {
    const AnnotatedDataset* step_data = &data;
    AnnotatedDataset scratch;
    Vec step_w;
    if (full_batch) {
      batch_idx.clear();
      step_w = effective_weights;
    } else {
      if (cursor + cfg.batch_size > n) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch_idx.assign(order.begin() + cursor, order.begin() + cursor + cfg.batch_size);
      cursor += cfg.batch_size;
      scratch = data.subset(batch_idx);
      step_data = &scratch;
      step_w.resize(cfg.batch_size);
      for (int k = 0; k < cfg.batch_size; ++k) step_w[k] = effective_weights[batch_idx[k]];
    }

    int m = step_data->n();
    Vec f = forward(model, theta, step_data->batch);
    double loss = 0.0;
    Vec kappa(m);
    for (int i = 0; i < m; ++i) {
      auto ld = loss_derivatives(family, f[i], step_data->batch.labels[i]);
      loss += step_w[i] * ld.value;
      kappa[i] = step_w[i] * ld.d1;
    }
    loss = loss / m + 0.5 * cfg.weight_decay * theta.squaredNorm();
    if (!std::isfinite(loss)) throw DivergenceError(t);
    out.loss_trace[t] = loss;

    Vec grad = output_grad_weighted_sum(model, theta, step_data->batch, kappa) / m;
    if (cfg.weight_decay > 0.0) grad += cfg.weight_decay * theta;

    theta_prev = theta;
    theta -= cfg.learning_rate * grad;
  }

  out.theta_T = std::move(theta);
  out.theta_Tm1 = std::move(theta_prev);
  out.last_batch = full_batch ? std::vector<int>{} : batch_idx;
  return out;
}

Vec solve_weighted_least_squares(const Mat& X, const Vec& y, const Vec& w, double ridge) {
  int n = static_cast<int>(X.rows());
  int d = static_cast<int>(X.cols());
  require(y.size() == n && w.size() == n, "WLS dimension mismatch");
  require(ridge >= 0.0, "ridge must be nonnegative");
  require(w.minCoeff() >= 0.0, "weights must be nonnegative");
  require(w.sum() > 0.0, "weights must not all be zero");

  int rows = ridge > 0.0 ? n + d : n;
  Mat A(rows, d);
  Vec b = Vec::Zero(rows);
  Vec sw = w.cwiseSqrt();
  A.topRows(n) = X.array().colwise() * sw.array();
  b.head(n) = y.cwiseProduct(sw);
  if (ridge > 0.0) A.bottomRows(d) = std::sqrt(ridge) * Mat::Identity(d, d);

  Eigen::ColPivHouseholderQR<Mat> qr(A);
  if (ridge == 0.0 && qr.rank() < d)
    throw std::runtime_error("weighted least squares system is singular (ridge = 0)");
  return qr.solve(b);
}

}  // namespace reweight
