#pragma once

#include "reweight/common.hpp"

#include <vector>

namespace reweight {

enum class ModelKind { Linear, Logistic, Mlp };
enum class Activation { ReLU, Tanh };

// Loss families. Models output a scalar f per sample; for LogisticBCE the
// output is the logit, not the probability.
enum class LossFamily { Square, LogisticBCE };

struct ModelSpec {
  ModelKind kind = ModelKind::Linear;
  int input_dim = 1;
  std::vector<int> hidden_dims;  // empty for Linear/Logistic
  Activation activation = Activation::ReLU;

  void validate() const;
  int param_count() const;
};

struct Batch {
  Mat features;  // n x d, one row per sample
  Vec labels;    // n; in {0,1} for LogisticBCE

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

struct LossDerivatives {
  double value;  // l(f, y)
  double d1;     // dl/df
  double d2;     // d2l/df2
};

LossDerivatives loss_derivatives(LossFamily family, double f, double y);

// Seeded symmetric-uniform init, scale 1/sqrt(fan_in) per layer.
Vec init_params(const ModelSpec& spec, std::uint64_t seed);

// Per-sample outputs f_i.
Vec forward(const ModelSpec& spec, const Vec& params, const Batch& batch);

struct PerSampleLossGrads {
  Vec losses;  // n
  Mat grads;   // n x |theta|, row i = grad of l(f(x_i), y_i) wrt theta
};

PerSampleLossGrads per_sample_loss_grads(const ModelSpec& spec, const Vec& params,
                                         const Batch& batch, LossFamily family);

// n x |theta| matrix of per-sample output gradients d f_i / d theta.
Mat per_sample_output_grads(const ModelSpec& spec, const Vec& params, const Batch& batch);

// sum_i kappa_i * grad_theta f_i, computed with batched backprop. Every risk
// gradient in this codebase reduces to this contraction.
Vec output_grad_weighted_sum(const ModelSpec& spec, const Vec& params, const Batch& batch,
                             const Vec& kappa);

// Per-sample directional derivatives <grad_theta f_i, tangent> (forward mode).
Vec output_jvp(const ModelSpec& spec, const Vec& params, const Batch& batch, const Vec& tangent);

}  // namespace reweight
