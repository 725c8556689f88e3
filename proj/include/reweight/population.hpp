#pragma once

#include "reweight/mixing.hpp"

#include <string>
#include <vector>

namespace reweight {

// Exact finite joint distribution over (y, z_c, z_s). Value maps embed each
// category as a real vector so moments and regressions are well defined;
// probabilities may contain zeros except where an operation demands strict
// positivity (the closed-form weight).
struct DiscreteJoint {
  Vec y_values;   // |Y|
  Mat zc_values;  // |Z_c| x d_c, one embedding per category
  Mat zs_values;  // |Z_s| x d_s
  std::vector<double> p;  // |Y| * |Z_c| * |Z_s|, sums to 1

  int ny() const { return static_cast<int>(y_values.size()); }
  int nc() const { return static_cast<int>(zc_values.rows()); }
  int ns() const { return static_cast<int>(zs_values.rows()); }
  int dc() const { return static_cast<int>(zc_values.cols()); }
  int ds() const { return static_cast<int>(zs_values.cols()); }
  int dim() const { return dc() + ds(); }

  double prob(int y, int c, int s) const { return p[(y * nc() + c) * ns() + s]; }
  double& prob(int y, int c, int s) { return p[(y * nc() + c) * ns() + s]; }
  Vec z_embed(int c, int s) const;

  void validate(bool strictly_positive = false) const;
};

// Cellwise weight w(y, z_c, z_s) with mean one under the joint.
struct WeightTable {
  std::vector<double> w;

  double at(int y, int c, int s, const DiscreteJoint& joint) const {
    return w[(y * joint.nc() + c) * joint.ns() + s];
  }
  void validate(const DiscreteJoint& joint) const;
};

WeightTable unit_weight(const DiscreteJoint& joint);

// The debiasing weight w(y, x) = P(y, z_c) P(z_s) / P(y, z_c, z_s). Under the
// reweighted law, z_s is independent of (y, z_c) while P(y, z_c) and P(z_s)
// are preserved. Requires a strictly positive joint.
WeightTable closed_form_weight(const DiscreteJoint& joint);

// P_w = w * p as a new joint (sums to one by the weight-table invariant).
DiscreteJoint weighted_joint(const DiscreteJoint& joint, const WeightTable& weight);

struct WeightedMoments {
  Mat sigma_x;   // E_w[x x^T], d x d
  Vec cross_x;   // E_w[x y], d
  Mat sigma_z;   // E_w[z z^T] in latent coordinates
  Vec cross_z;   // E_w[z y]
  Mat cov_cs;    // Cov_w(z_c, z_s), d_c x d_s
  Mat pw_yc;     // P_w(y, z_c), |Y| x |Z_c|
  Vec pw_s;      // P_w(z_s)
  Vec mean_zc, mean_zs;
  double mean_y = 0.0;
  double mean_weight = 0.0;  // sum p * w
};

WeightedMoments weighted_moments(const DiscreteJoint& joint, const WeightTable& weight,
                                 const MixingMatrix& mixing);

// Exact population minimizer of the weighted square loss in x-space:
// theta = (Sigma_x^w)^{-1} E_w[x y].
Vec population_wls(const DiscreteJoint& joint, const WeightTable& weight,
                   const MixingMatrix& mixing);

// Latent-space pullback theta_z = S^T theta_x; its tail d_s entries are the
// spurious block.
Vec pullback(const MixingMatrix& mixing, const Vec& theta_x);

struct DebiasedPredictor {
  Vec theta_bar;    // d, equals T^T [theta_bar_c; 0]
  Vec theta_bar_c;  // d_c
};

// Core-only population regression mapped back through the mixing.
DebiasedPredictor optimal_debiased_predictor(const DiscreteJoint& joint,
                                             const MixingMatrix& mixing);

enum class CondSet { None, Zc, Zs, ZcZs };

// Exact Shannon conditional entropy H[Y | cond] in nats, with 0 log 0 := 0.
double conditional_entropy(const DiscreteJoint& dist, CondSet cond);

// Plain-text round-trip of the joint (17 significant digits).
void save_joint(const DiscreteJoint& joint, const std::string& path);
DiscreteJoint load_joint(const std::string& path);

// Random strictly positive joint with embeddings centered under their own
// marginals (the regression identities are exact only for centered,
// intercept-free embeddings). Cell probabilities are bounded away from zero.
DiscreteJoint random_positive_joint(Rng& rng, int nc, int ns, int dc = 1, int ds = 1);

}  // namespace reweight
