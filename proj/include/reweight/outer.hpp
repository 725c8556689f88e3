#pragma once

#include "reweight/inner.hpp"

namespace reweight {

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
  Vec m, v;
  long step_count = 0;

  void reset(int n);
  // Consumes one gradient and returns the additive parameter delta.
  Vec step(const Vec& grad, double lr);
};

struct MaskSample {
  Vec m;            // entries in {0, 1}; m_i = 1 iff soft_logits_i >= 0
  Vec soft_logits;  // perturbed logits kept for the straight-through backward
  double temperature = 1.0;
};

struct ReweightState {
  Vec w;  // sample weights, >= 0
  Vec s;  // keep probabilities in [0, 1], sum <= budget
  double budget = 0.0;
  AdamState adam_w, adam_s;

  void validate() const;
};

struct OuterConfig {
  int iterations = 100;
  double lr_w = 0.25;
  double lr_s = 5e-2;
  RiskSpec risk;
  double temperature = 1.0;
  bool sparsity_enabled = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// m_i = 1 iff logit(s_i) + g1 - g0 >= 0 with g0, g1 ~ Gumbel(0,1); marginally
// P(m_i = 1) = s_i. Boundary s_i in {0, 1} short-circuits deterministically.
MaskSample sample_mask(const Vec& s, double temperature, Rng& rng);

// Euclidean projection onto the nonnegative orthant.
Vec project_nonneg(Vec w);

// Euclidean projection onto {0 <= s <= 1, sum s <= K}: clip to the box; if the
// budget still binds, bisect tau so that sum clip(s - tau, 0, 1) = K.
Vec project_capped_box_simplex(const Vec& s, double K);

// One-step truncated hypergradient for w:
//   g_i = (m_i / |B|) <grad_theta R(D_v, theta_T), grad_theta l_i(theta_Tm1)>
// over the final inner update's batch B. The inner step contributes a factor
// of -eta_theta that is folded into the outer learning rate, so the outer
// gradient is a *negative* multiple of the returned vector.
Vec hypergrad_w(const TrainResult& tr, const AnnotatedDataset& data_tr,
                const AnnotatedDataset& data_v, const RiskSpec& risk, const ModelSpec& model,
                LossFamily family, const Vec* mask = nullptr);

// Straight-through hypergradient for s: the w path above times
// d sigma(soft_logit / temperature) / d s_i, with the 1/(s(1-s)) logit
// derivative clamped. Coordinates with s in {0, 1} get gradient 0.
Vec hypergrad_s(const TrainResult& tr, const AnnotatedDataset& data_tr,
                const AnnotatedDataset& data_v, const RiskSpec& risk, const ModelSpec& model,
                LossFamily family, const ReweightState& state, const MaskSample& mask);

struct OuterIterRecord {
  int iter = 0;
  double val_risk = 0.0;
  double val_acc = 0.0;
  double w_mean = 0.0, w_min = 0.0, w_max = 0.0;
  double s_saturation = 0.0;  // fraction of s within 0.1 of {0, 1}
  std::vector<double> group_weight_fraction;  // per train group, when annotated
};

struct WeightedCoreset {
  std::vector<int> indices;
  Vec weights;
};

struct ReweightResult {
  ReweightState state;
  WeightedCoreset coreset;   // s thresholded at 0.5
  Vec mask_threshold;        // 0/1 keep mask from thresholding s
  Vec mask_sampled;          // one final draw from p(m|s), recorded alongside
  std::vector<OuterIterRecord> history;
};

// The bilevel driver: initialize w = 1, s = K/n; each iteration samples a
// mask, trains the inner problem from a fresh seeded init, takes Adam steps on
// the truncated hypergradients, and projects back onto the feasible set.
// sparsity_enabled = false keeps s = 1 with all-ones masks and learns w only.
ReweightResult run_reweighting(const AnnotatedDataset& data_tr, const AnnotatedDataset& data_v,
                               const ModelSpec& model, LossFamily family,
                               const InnerConfig& inner_cfg, const OuterConfig& outer_cfg,
                               double K);

}  // namespace reweight
