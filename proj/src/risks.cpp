#include "reweight/risks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reweight {

namespace {

void check_ids(const std::vector<int>& ids, int n, const char* what) {
  require(static_cast<int>(ids.size()) == n, std::string(what) + " ids length mismatch");
  int max_id = -1;
  for (int id : ids) {
    require(id >= 0, std::string(what) + " ids must be nonnegative");
    max_id = std::max(max_id, id);
  }
  std::vector<int> seen(max_id + 1, 0);
  for (int id : ids) seen[id] = 1;
  for (int id = 0; id <= max_id; ++id)
    require(seen[id] == 1, std::string(what) + " ids must be contiguous from 0");
}

struct PerSample {
  Vec f, loss, d1, d2, w;
};

PerSample per_sample(const AnnotatedDataset& data, const ModelSpec& model, const Vec& params,
                     LossFamily family) {
  PerSample ps;
  ps.f = forward(model, params, data.batch);
  int n = data.n();
  ps.loss.resize(n);
  ps.d1.resize(n);
  ps.d2.resize(n);
  for (int i = 0; i < n; ++i) {
    auto ld = loss_derivatives(family, ps.f[i], data.batch.labels[i]);
    ps.loss[i] = ld.value;
    ps.d1[i] = ld.d1;
    ps.d2[i] = ld.d2;
  }
  ps.w = data.has_weights() ? data.weights : Vec::Ones(n);
  return ps;
}

struct EnvStats {
  std::vector<std::vector<int>> envs;
  Vec env_loss;   // weighted mean loss per environment
  Vec env_dummy;  // mean of w * l' * f per environment (IRMv1 dummy-classifier grad)
};

EnvStats env_stats(const AnnotatedDataset& data, const PerSample& ps) {
  EnvStats st;
  st.envs = index_lists(data.env_ids, data.num_envs());
  int ne = static_cast<int>(st.envs.size());
  st.env_loss = Vec::Zero(ne);
  st.env_dummy = Vec::Zero(ne);
  for (int e = 0; e < ne; ++e) {
    for (int i : st.envs[e]) {
      st.env_loss[e] += ps.w[i] * ps.loss[i];
      st.env_dummy[e] += ps.w[i] * ps.d1[i] * ps.f[i];
    }
    st.env_loss[e] /= st.envs[e].size();
    st.env_dummy[e] /= st.envs[e].size();
  }
  return st;
}

int worst_group(const AnnotatedDataset& data, const PerSample& ps, Vec* group_loss_out,
                std::vector<std::vector<int>>* groups_out) {
  auto groups = index_lists(data.group_ids, data.num_groups());
  Vec group_loss = Vec::Zero(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    for (int i : groups[g]) group_loss[g] += ps.w[i] * ps.loss[i];
    group_loss[g] /= groups[g].size();
  }
  // ties break toward the lowest group id
  int worst = 0;
  for (int g = 1; g < group_loss.size(); ++g)
    if (group_loss[g] > group_loss[worst]) worst = g;
  if (group_loss_out) *group_loss_out = group_loss;
  if (groups_out) *groups_out = groups;
  return worst;
}

void check_annotations(const RiskSpec& spec, const AnnotatedDataset& data) {
  data.validate();
  if (spec.kind == RiskKind::IRMv1 || spec.kind == RiskKind::REx)
    require(data.has_envs(), "risk requires environment annotations");
  if (spec.kind == RiskKind::GroupDRO)
    require(data.has_groups(), "risk requires group annotations");
  if (spec.kind == RiskKind::CVaR)
    require(!data.has_weights(),
            "CVaR risk is defined on the unweighted empirical distribution");
}

}  // namespace

void RiskSpec::validate() const {
  require(lambda >= 0.0, "lambda must be nonnegative");
  if (kind == RiskKind::CVaR) require(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
}

int AnnotatedDataset::num_envs() const {
  return has_envs() ? *std::max_element(env_ids.begin(), env_ids.end()) + 1 : 0;
}

int AnnotatedDataset::num_groups() const {
  return has_groups() ? *std::max_element(group_ids.begin(), group_ids.end()) + 1 : 0;
}

void AnnotatedDataset::validate() const {
  batch.validate();
  if (has_envs()) check_ids(env_ids, n(), "environment");
  if (has_groups()) check_ids(group_ids, n(), "group");
  if (has_weights()) {
    require(weights.size() == n(), "weights length mismatch");
    require(all_finite(weights) && weights.minCoeff() >= 0.0,
            "weights must be finite and nonnegative");
  }
}

AnnotatedDataset AnnotatedDataset::subset(const std::vector<int>& idx) const {
  AnnotatedDataset out;
  out.batch.features.resize(idx.size(), batch.features.cols());
  out.batch.labels.resize(idx.size());
  if (has_weights()) out.weights.resize(idx.size());
  for (size_t k = 0; k < idx.size(); ++k) {
    out.batch.features.row(k) = batch.features.row(idx[k]);
    out.batch.labels[k] = batch.labels[idx[k]];
    if (has_weights()) out.weights[k] = weights[idx[k]];
  }
  if (has_envs())
    for (int i : idx) out.env_ids.push_back(env_ids[i]);
  if (has_groups())
    for (int i : idx) out.group_ids.push_back(group_ids[i]);
  return out;
}

std::vector<std::vector<int>> index_lists(const std::vector<int>& ids, int count) {
  std::vector<std::vector<int>> lists(count);
  for (size_t i = 0; i < ids.size(); ++i) lists[ids[i]].push_back(static_cast<int>(i));
  for (const auto& l : lists) require(!l.empty(), "empty environment/group");
  return lists;
}

Vec cvar_sup_weights(const Vec& losses, double alpha) {
  int n = static_cast<int>(losses.size());
  require(n >= 1, "cvar needs at least one loss");
  require(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
  double cap = 1.0 / (alpha * n);
  int k = static_cast<int>(std::floor(alpha * n + 1e-9));
  k = std::min(k, n);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (losses[a] != losses[b]) return losses[a] > losses[b];
    return a < b;
  });

  Vec w = Vec::Zero(n);
  for (int r = 0; r < k; ++r) w[order[r]] = cap;
  double remainder = 1.0 - k * cap;
  if (remainder > 1e-15 && k < n) w[order[k]] = remainder;
  return w;
}

double risk_value(const RiskSpec& spec, const AnnotatedDataset& data, const ModelSpec& model,
                  const Vec& params, LossFamily family) {
  spec.validate();
  check_annotations(spec, data);
  PerSample ps = per_sample(data, model, params, family);
  int n = data.n();

  switch (spec.kind) {
    case RiskKind::ERM:
      return ps.w.dot(ps.loss) / n;
    case RiskKind::IRMv1: {
      EnvStats st = env_stats(data, ps);
      return st.env_loss.sum() + spec.lambda * st.env_dummy.squaredNorm();
    }
    case RiskKind::REx: {
      EnvStats st = env_stats(data, ps);
      int ne = static_cast<int>(st.envs.size());
      double mean = st.env_loss.mean();
      double var = (st.env_loss.array() - mean).square().sum() / ne;
      return st.env_loss.sum() + spec.lambda * var;
    }
    case RiskKind::GroupDRO: {
      Vec group_loss;
      worst_group(data, ps, &group_loss, nullptr);
      return group_loss.maxCoeff();
    }
    case RiskKind::CVaR: {
      Vec w = cvar_sup_weights(ps.loss, spec.alpha);
      return w.dot(ps.loss);
    }
  }
  throw std::logic_error("unreachable risk kind");
}

Vec risk_grad(const RiskSpec& spec, const AnnotatedDataset& data, const ModelSpec& model,
              const Vec& params, LossFamily family) {
  spec.validate();
  check_annotations(spec, data);
  PerSample ps = per_sample(data, model, params, family);
  int n = data.n();
  // every risk gradient is sum_i kappa_i * grad f_i for a coefficient vector kappa
  Vec kappa = Vec::Zero(n);

  switch (spec.kind) {
    case RiskKind::ERM:
      kappa = ps.w.cwiseProduct(ps.d1) / n;
      break;
    case RiskKind::IRMv1: {
      EnvStats st = env_stats(data, ps);
      for (size_t e = 0; e < st.envs.size(); ++e) {
        double ne = static_cast<double>(st.envs[e].size());
        for (int i : st.envs[e]) {
          double penalty_term =
              2.0 * st.env_dummy[e] * ps.w[i] * (ps.d2[i] * ps.f[i] + ps.d1[i]) / ne;
          kappa[i] = ps.w[i] * ps.d1[i] / ne + spec.lambda * penalty_term;
        }
      }
      break;
    }
    case RiskKind::REx: {
      EnvStats st = env_stats(data, ps);
      int ne = static_cast<int>(st.envs.size());
      double mean = st.env_loss.mean();
      for (int e = 0; e < ne; ++e) {
        double coef = 1.0 + spec.lambda * 2.0 * (st.env_loss[e] - mean) / ne;
        for (int i : st.envs[e])
          kappa[i] = coef * ps.w[i] * ps.d1[i] / st.envs[e].size();
      }
      break;
    }
    case RiskKind::GroupDRO: {
      std::vector<std::vector<int>> groups;
      Vec group_loss;
      int worst = worst_group(data, ps, &group_loss, &groups);
      for (int i : groups[worst]) kappa[i] = ps.w[i] * ps.d1[i] / groups[worst].size();
      break;
    }
    case RiskKind::CVaR: {
      // Danskin: gradient through the maximizing weights only
      Vec w = cvar_sup_weights(ps.loss, spec.alpha);
      kappa = w.cwiseProduct(ps.d1);
      break;
    }
  }
  return output_grad_weighted_sum(model, params, data.batch, kappa);
}

double accuracy(const ModelSpec& model, const Vec& params, const Batch& batch,
                LossFamily family) {
  Vec f = forward(model, params, batch);
  double threshold = family == LossFamily::LogisticBCE ? 0.0 : 0.5;
  int correct = 0;
  for (int i = 0; i < batch.n(); ++i) {
    bool pred = f[i] >= threshold;
    bool truth = batch.labels[i] >= 0.5;
    if (pred == truth) ++correct;
  }
  return static_cast<double>(correct) / batch.n();
}

}  // namespace reweight
