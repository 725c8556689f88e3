#pragma once

#include "reweight/model.hpp"

#include <vector>

namespace reweight {

enum class RiskKind { ERM, IRMv1, REx, GroupDRO, CVaR };

struct RiskSpec {
  RiskKind kind = RiskKind::ERM;
  double lambda = 0.0;  // IRMv1/REx penalty weight
  double alpha = 1.0;   // CVaR ball size, in (0, 1]

  void validate() const;
};

// Samples plus the annotations the risks need. Empty env/group vectors mean
// "absent"; weights of size 0 mean all-ones.
struct AnnotatedDataset {
  Batch batch;
  std::vector<int> env_ids;
  std::vector<int> group_ids;
  Vec weights;

  int n() const { return batch.n(); }
  bool has_envs() const { return !env_ids.empty(); }
  bool has_groups() const { return !group_ids.empty(); }
  bool has_weights() const { return weights.size() > 0; }
  int num_envs() const;
  int num_groups() const;
  void validate() const;
  AnnotatedDataset subset(const std::vector<int>& idx) const;
};

std::vector<std::vector<int>> index_lists(const std::vector<int>& ids, int count);

// Maximizer of sum w_i l_i over {w >= 0, ||w||_inf <= 1/(alpha n), ||w||_1 = 1}:
// hard weight on the floor(alpha n) largest losses, the remainder on the next
// one (ties broken toward the lower index).
Vec cvar_sup_weights(const Vec& losses, double alpha);

double risk_value(const RiskSpec& spec, const AnnotatedDataset& data, const ModelSpec& model,
                  const Vec& params, LossFamily family);

// Analytic gradient of risk_value wrt theta.
Vec risk_grad(const RiskSpec& spec, const AnnotatedDataset& data, const ModelSpec& model,
              const Vec& params, LossFamily family);

// Fraction of samples whose thresholded prediction matches the label
// (logit 0 for LogisticBCE, 0.5 for Square-on-{0,1} labels).
double accuracy(const ModelSpec& model, const Vec& params, const Batch& batch, LossFamily family);

}  // namespace reweight
