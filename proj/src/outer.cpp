#include "reweight/outer.hpp"

#include <cmath>

namespace reweight {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Cap on the 1/(s(1-s)) logit derivative in the straight-through factor;
// keeps near-boundary coordinates from swamping the Adam moments.
constexpr double kLogitDerivCap = 1e4;

double gumbel(Rng& rng) {
  // -log(-log(U)), U in (0, 1)
  std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
  return -std::log(-std::log(unif(rng)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double z = std::exp(x);
  return z / (1.0 + z);
}

// Shared contraction of the validation-risk gradient at theta_T with the
// per-sample training loss gradients at theta_Tm1, over the last inner batch.
// Returns c_i = <grad R, grad l_i(theta_Tm1)> / |B| for i in B, 0 elsewhere.
Vec truncated_contraction(const TrainResult& tr, const AnnotatedDataset& data_tr,
                          const AnnotatedDataset& data_v, const RiskSpec& risk,
                          const ModelSpec& model, LossFamily family) {
  require(tr.theta_T.size() == model.param_count() &&
              tr.theta_Tm1.size() == model.param_count(),
          "train result parameter length mismatch");
  Vec grad_risk = risk_grad(risk, data_v, model, tr.theta_T, family);

  const bool full = tr.last_batch.empty();
  int n = data_tr.n();
  Batch batch = full ? data_tr.batch : data_tr.subset(tr.last_batch).batch;
  int m = batch.n();

  Vec f = forward(model, tr.theta_Tm1, batch);
  Vec df = output_jvp(model, tr.theta_Tm1, batch, grad_risk);  // <grad f_i, grad R>
  Vec c = Vec::Zero(n);
  for (int k = 0; k < m; ++k) {
    int i = full ? k : tr.last_batch[k];
    double d1 = loss_derivatives(family, f[k], batch.labels[k]).d1;
    c[i] = d1 * df[k] / m;
  }
  return c;
}

}  // namespace

void AdamState::reset(int n) {
  m = Vec::Zero(n);
  v = Vec::Zero(n);
  step_count = 0;
}

Vec AdamState::step(const Vec& grad, double lr) {
  require(m.size() == grad.size(), "adam state size mismatch");
  ++step_count;
  m = kBeta1 * m + (1.0 - kBeta1) * grad;
  v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count));
  Vec mhat = m / bc1;
  Vec vhat = v / bc2;
  return (-lr * mhat.array() / (vhat.array().sqrt() + kAdamEps)).matrix();
}

void ReweightState::validate() const {
  require(w.size() == s.size(), "w/s length mismatch");
  require(w.minCoeff() >= 0.0, "w must be nonnegative");
  require(s.minCoeff() >= 0.0 && s.maxCoeff() <= 1.0, "s must lie in [0, 1]");
  require(s.sum() <= budget + 1e-9, "s exceeds the sparsity budget");
}

void OuterConfig::validate() const {
  require(iterations >= 0, "iterations must be nonnegative");
  require(lr_w > 0.0 && lr_s > 0.0, "outer learning rates must be positive");
  require(temperature > 0.0, "temperature must be positive");
  risk.validate();
}

MaskSample sample_mask(const Vec& s, double temperature, Rng& rng) {
  require(temperature > 0.0, "temperature must be positive");
  require(all_finite(s) && s.minCoeff() >= 0.0 && s.maxCoeff() <= 1.0, "s must lie in [0, 1]");
  int n = static_cast<int>(s.size());
  MaskSample out;
  out.temperature = temperature;
  out.m.resize(n);
  out.soft_logits.resize(n);
  for (int i = 0; i < n; ++i) {
    if (s[i] <= 0.0) {
      out.soft_logits[i] = -std::numeric_limits<double>::infinity();
      out.m[i] = 0.0;
      continue;
    }
    if (s[i] >= 1.0) {
      out.soft_logits[i] = std::numeric_limits<double>::infinity();
      out.m[i] = 1.0;
      continue;
    }
    double logit = std::log(s[i] / (1.0 - s[i]));
    out.soft_logits[i] = logit + gumbel(rng) - gumbel(rng);
    out.m[i] = out.soft_logits[i] >= 0.0 ? 1.0 : 0.0;
  }
  return out;
}

Vec project_nonneg(Vec w) { return w.cwiseMax(0.0); }

Vec project_capped_box_simplex(const Vec& s, double K) {
  require(K > 0.0, "budget K must be positive");
  require(all_finite(s), "projection input must be finite");
  Vec clipped = s.cwiseMax(0.0).cwiseMin(1.0);
  if (clipped.sum() <= K) return clipped;

  auto clipped_sum = [&](double tau) {
    return (s.array() - tau).cwiseMax(0.0).cwiseMin(1.0).sum();
  };
  double lo = 0.0, hi = s.maxCoeff();
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double sum = clipped_sum(mid);
    if (std::abs(sum - K) <= 1e-12) {
      lo = hi = mid;
      break;
    }
    (sum > K ? lo : hi) = mid;
  }
  double tau = 0.5 * (lo + hi);
  return (s.array() - tau).cwiseMax(0.0).cwiseMin(1.0);
}

Vec hypergrad_w(const TrainResult& tr, const AnnotatedDataset& data_tr,
                const AnnotatedDataset& data_v, const RiskSpec& risk, const ModelSpec& model,
                LossFamily family, const Vec* mask) {
  Vec c = truncated_contraction(tr, data_tr, data_v, risk, model, family);
  if (mask) {
    require(mask->size() == c.size(), "mask length mismatch");
    c = c.cwiseProduct(*mask);
  }
  return c;
}

Vec hypergrad_s(const TrainResult& tr, const AnnotatedDataset& data_tr,
                const AnnotatedDataset& data_v, const RiskSpec& risk, const ModelSpec& model,
                LossFamily family, const ReweightState& state, const MaskSample& mask) {
  require(mask.m.size() == data_tr.n(), "mask length mismatch");
  Vec c = truncated_contraction(tr, data_tr, data_v, risk, model, family);
  int n = data_tr.n();
  Vec g = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    double si = state.s[i];
    if (si <= 0.0 || si >= 1.0) continue;  // infinite logit: gradient 0 by convention
    double scaled = mask.soft_logits[i] / mask.temperature;
    double sg = sigmoid(scaled);
    double logit_deriv = std::min(1.0 / (si * (1.0 - si)), kLogitDerivCap);
    double straight_through = sg * (1.0 - sg) / mask.temperature * logit_deriv;
    g[i] = state.w[i] * c[i] * straight_through;
  }
  return g;
}

ReweightResult run_reweighting(const AnnotatedDataset& data_tr, const AnnotatedDataset& data_v,
                               const ModelSpec& model, LossFamily family,
                               const InnerConfig& inner_cfg, const OuterConfig& outer_cfg,
                               double K) {
  outer_cfg.validate();
  data_tr.validate();
  data_v.validate();
  int n = data_tr.n();
  require(K > 0.0 && K <= n, "budget K must lie in (0, n]");

  ReweightResult out;
  ReweightState& st = out.state;
  st.w = Vec::Ones(n);
  st.s = outer_cfg.sparsity_enabled ? Vec::Constant(n, K / n) : Vec::Ones(n);
  st.budget = outer_cfg.sparsity_enabled ? K : static_cast<double>(n);
  st.adam_w.reset(n);
  st.adam_s.reset(n);

  bool track_groups = data_tr.has_groups();
  int num_groups = track_groups ? data_tr.num_groups() : 0;

  for (int iter = 0; iter < outer_cfg.iterations; ++iter) {
    Rng mask_rng(mix_seed(outer_cfg.seed, 0xa5a5, iter));
    MaskSample mask;
    if (outer_cfg.sparsity_enabled) {
      mask = sample_mask(st.s, outer_cfg.temperature, mask_rng);
    } else {
      mask.m = Vec::Ones(n);
      mask.soft_logits = Vec::Constant(n, std::numeric_limits<double>::infinity());
      mask.temperature = outer_cfg.temperature;
    }

    InnerConfig step_cfg = inner_cfg;
    step_cfg.init_seed = mix_seed(outer_cfg.seed, 0x17e0, iter);
    Vec eff_w = st.w.cwiseProduct(mask.m);
    TrainResult tr = train_weighted_erm(data_tr, eff_w, model, family, step_cfg);

    Vec gw = hypergrad_w(tr, data_tr, data_v, outer_cfg.risk, model, family, &mask.m);
    // outer gradient is a negative multiple of the returned contraction
    st.w = project_nonneg(st.w + st.adam_w.step(-gw, outer_cfg.lr_w));
    if (outer_cfg.sparsity_enabled) {
      Vec gs = hypergrad_s(tr, data_tr, data_v, outer_cfg.risk, model, family, st, mask);
      st.s = project_capped_box_simplex(st.s + st.adam_s.step(-gs, outer_cfg.lr_s), K);
    }

    OuterIterRecord rec;
    rec.iter = iter;
    rec.val_risk = risk_value(outer_cfg.risk, data_v, model, tr.theta_T, family);
    rec.val_acc = accuracy(model, tr.theta_T, data_v.batch, family);
    rec.w_mean = st.w.mean();
    rec.w_min = st.w.minCoeff();
    rec.w_max = st.w.maxCoeff();
    rec.s_saturation =
        (st.s.array() <= 0.1 || st.s.array() >= 0.9).cast<double>().mean();
    if (track_groups) {
      Vec ws = st.w.cwiseProduct(st.s);
      double total = ws.sum();
      rec.group_weight_fraction.assign(num_groups, 0.0);
      if (total > 0.0) {
        for (int i = 0; i < n; ++i)
          rec.group_weight_fraction[data_tr.group_ids[i]] += ws[i] / total;
      }
    }
    out.history.push_back(std::move(rec));
  }

  out.mask_threshold = (st.s.array() >= 0.5).cast<double>();
  Rng final_rng(mix_seed(outer_cfg.seed, 0xf17a));
  out.mask_sampled = outer_cfg.sparsity_enabled
                         ? sample_mask(st.s, outer_cfg.temperature, final_rng).m
                         : Vec::Ones(n);
  for (int i = 0; i < n; ++i) {
    if (out.mask_threshold[i] > 0.0) {
      out.coreset.indices.push_back(i);
    }
  }
  out.coreset.weights.resize(out.coreset.indices.size());
  for (size_t k = 0; k < out.coreset.indices.size(); ++k)
    out.coreset.weights[k] = st.w[out.coreset.indices[k]];
  return out;
}

}  // namespace reweight
