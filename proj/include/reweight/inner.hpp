#pragma once

#include "reweight/risks.hpp"

#include <optional>

namespace reweight {

enum class InnerOptimizer { GD, SGD };

struct InnerConfig {
  int steps = 100;
  double learning_rate = 0.1;
  double weight_decay = 0.0;
  InnerOptimizer optimizer = InnerOptimizer::GD;
  int batch_size = 0;  // 0 = full batch (only read for SGD)
  std::uint64_t init_seed = 0;

  void validate() const;
};

struct TrainResult {
  Vec theta_T;
  Vec theta_Tm1;           // parameters one step before theta_T
  Vec loss_trace;          // step losses, evaluated at the pre-update parameters
  std::vector<int> last_batch;  // samples in the final update; empty = full batch
};

// T steps of (stochastic) gradient descent on
//   (1/|B|) sum_{i in B} w_i l_i(theta) + weight_decay/2 * ||theta||^2
// from a fresh seeded init (or the supplied one). Throws DivergenceError with
// the step index when a step loss goes non-finite.
TrainResult train_weighted_erm(const AnnotatedDataset& data, const Vec& effective_weights,
                               const ModelSpec& model, LossFamily family, const InnerConfig& cfg,
                               const std::optional<Vec>& init = {});

// argmin_theta sum_i w_i (y_i - x_i^T theta)^2 + ridge ||theta||^2 via a
// rank-revealing QR on the sqrt-weighted design. Ridge-free singular systems
// raise instead of falling back to a pseudo-inverse.
Vec solve_weighted_least_squares(const Mat& X, const Vec& y, const Vec& w, double ridge);

}  // namespace reweight
