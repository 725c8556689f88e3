#include "reweight/model.hpp"

#include <cmath>

namespace reweight {

namespace {

struct LayerDims {
  int in;
  int out;
};

// Mlp layers including the final scalar head. Linear/Logistic have no layers
// here; they are a bare inner product with no bias.
std::vector<LayerDims> layer_dims(const ModelSpec& spec) {
  std::vector<LayerDims> dims;
  if (spec.kind != ModelKind::Mlp) return dims;
  int in = spec.input_dim;
  for (int h : spec.hidden_dims) {
    dims.push_back({in, h});
    in = h;
  }
  dims.push_back({in, 1});
  return dims;
}

double activate(Activation a, double z) {
  return a == Activation::ReLU ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// ReLU subgradient at 0 is 0.
double activate_deriv(Activation a, double z) {
  if (a == Activation::ReLU) return z > 0.0 ? 1.0 : 0.0;
  double t = std::tanh(z);
  return 1.0 - t * t;
}

struct ParamView {
  Eigen::Map<const Mat> W;  // out x in
  Eigen::Map<const Vec> b;  // out
};

ParamView layer_view(const Vec& params, int offset, const LayerDims& d) {
  return {Eigen::Map<const Mat>(params.data() + offset, d.out, d.in),
          Eigen::Map<const Vec>(params.data() + offset + d.out * d.in, d.out)};
}

struct MlpCache {
  std::vector<Mat> pre;  // pre-activations Z_l, n x out_l
  std::vector<Mat> act;  // act[0] = X, act[l] = activation(Z_l) for hidden layers
};

MlpCache mlp_forward(const ModelSpec& spec, const Vec& params, const Mat& X) {
  auto dims = layer_dims(spec);
  MlpCache cache;
  cache.act.push_back(X);
  int offset = 0;
  for (size_t l = 0; l < dims.size(); ++l) {
    auto view = layer_view(params, offset, dims[l]);
    Mat z = cache.act.back() * view.W.transpose();
    z.rowwise() += view.b.transpose();
    cache.pre.push_back(z);
    if (l + 1 < dims.size()) {
      cache.act.push_back(z.unaryExpr([&](double v) { return activate(spec.activation, v); }));
    }
    offset += dims[l].out * (dims[l].in + 1);
  }
  return cache;
}

void check_shapes(const ModelSpec& spec, const Vec& params, const Batch& batch) {
  spec.validate();
  batch.validate();
  require(params.size() == spec.param_count(), "params length does not match model spec");
  require(batch.dim() == spec.input_dim, "batch feature dim does not match model spec");
  require(all_finite(params), "params contain non-finite entries");
}

double sigmoid(double f) {
  if (f >= 0.0) {
    double z = std::exp(-f);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(f);
  return z / (1.0 + z);
}

double softplus(double f) {
  // log(1 + e^f), stable for large |f|
  return f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
}

}  // namespace

void ModelSpec::validate() const {
  require(input_dim >= 1, "input_dim must be positive");
  for (int h : hidden_dims) require(h >= 1, "hidden dims must be positive");
  if (kind != ModelKind::Mlp) {
    require(hidden_dims.empty(), "Linear/Logistic models take no hidden dims");
  }
}

int ModelSpec::param_count() const {
  if (kind != ModelKind::Mlp) return input_dim;
  int count = 0;
  for (const auto& d : layer_dims(*this)) count += d.out * (d.in + 1);
  return count;
}

void Batch::validate() const {
  require(n() >= 1, "batch must contain at least one sample");
  require(labels.size() == n(), "labels length does not match feature rows");
  require(all_finite(features) && all_finite(labels), "batch contains non-finite entries");
}

LossDerivatives loss_derivatives(LossFamily family, double f, double y) {
  require(std::isfinite(f) && std::isfinite(y), "loss inputs must be finite");
  if (family == LossFamily::Square) {
    double r = f - y;
    return {r * r, 2.0 * r, 2.0};
  }
  require(y == 0.0 || y == 1.0, "LogisticBCE labels must be 0 or 1");
  double s = sigmoid(f);
  return {softplus(f) - y * f, s - y, s * (1.0 - s)};
}

Vec init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Vec theta(spec.param_count());
  Rng rng(seed);
  if (spec.kind != ModelKind::Mlp) {
    double bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < theta.size(); ++i) theta[i] = dist(rng);
    return theta;
  }
  int offset = 0;
  for (const auto& d : layer_dims(spec)) {
    double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    int count = d.out * (d.in + 1);
    for (int i = 0; i < count; ++i) theta[offset + i] = dist(rng);
    offset += count;
  }
  return theta;
}

Vec forward(const ModelSpec& spec, const Vec& params, const Batch& batch) {
  check_shapes(spec, params, batch);
  if (spec.kind != ModelKind::Mlp) return batch.features * params;
  auto cache = mlp_forward(spec, params, batch.features);
  return cache.pre.back().col(0);
}

Mat per_sample_output_grads(const ModelSpec& spec, const Vec& params, const Batch& batch) {
  check_shapes(spec, params, batch);
  int n = batch.n();
  if (spec.kind != ModelKind::Mlp) return batch.features;

  auto dims = layer_dims(spec);
  auto cache = mlp_forward(spec, params, batch.features);
  int num_layers = static_cast<int>(dims.size());

  std::vector<int> offsets(num_layers);
  int offset = 0;
  for (int l = 0; l < num_layers; ++l) {
    offsets[l] = offset;
    offset += dims[l].out * (dims[l].in + 1);
  }

  Mat grads = Mat::Zero(n, params.size());
  // deltas[l]: n x out_l, derivative of f wrt pre-activation of layer l
  std::vector<Mat> deltas(num_layers);
  deltas[num_layers - 1] = Mat::Ones(n, 1);
  for (int l = num_layers - 1; l > 0; --l) {
    auto view = layer_view(params, offsets[l], dims[l]);
    Mat back = deltas[l] * view.W;  // n x in_l
    deltas[l - 1] = back.cwiseProduct(cache.pre[l - 1].unaryExpr(
        [&](double z) { return activate_deriv(spec.activation, z); }));
  }
  for (int l = 0; l < num_layers; ++l) {
    const Mat& input = cache.act[l];  // n x in_l
    for (int i = 0; i < n; ++i) {
      // W block is column-major (out x in): flat[c*out + r]
      for (int c = 0; c < dims[l].in; ++c)
        for (int r = 0; r < dims[l].out; ++r)
          grads(i, offsets[l] + c * dims[l].out + r) = deltas[l](i, r) * input(i, c);
      int b0 = offsets[l] + dims[l].out * dims[l].in;
      for (int r = 0; r < dims[l].out; ++r) grads(i, b0 + r) = deltas[l](i, r);
    }
  }
  return grads;
}

PerSampleLossGrads per_sample_loss_grads(const ModelSpec& spec, const Vec& params,
                                         const Batch& batch, LossFamily family) {
  Vec f = forward(spec, params, batch);
  int n = batch.n();
  Vec losses(n), d1(n);
  for (int i = 0; i < n; ++i) {
    auto ld = loss_derivatives(family, f[i], batch.labels[i]);
    losses[i] = ld.value;
    d1[i] = ld.d1;
  }
  Mat grads = per_sample_output_grads(spec, params, batch);
  grads.array().colwise() *= d1.array();
  return {std::move(losses), std::move(grads)};
}

Vec output_grad_weighted_sum(const ModelSpec& spec, const Vec& params, const Batch& batch,
                             const Vec& kappa) {
  check_shapes(spec, params, batch);
  require(kappa.size() == batch.n(), "kappa length does not match batch size");
  if (spec.kind != ModelKind::Mlp) return batch.features.transpose() * kappa;

  auto dims = layer_dims(spec);
  auto cache = mlp_forward(spec, params, batch.features);
  int num_layers = static_cast<int>(dims.size());
  Vec grad = Vec::Zero(params.size());

  std::vector<int> offsets(num_layers);
  int offset = 0;
  for (int l = 0; l < num_layers; ++l) {
    offsets[l] = offset;
    offset += dims[l].out * (dims[l].in + 1);
  }

  Mat delta = Mat::Constant(batch.n(), 1, 1.0);
  delta.col(0) = kappa;
  for (int l = num_layers - 1; l >= 0; --l) {
    auto view = layer_view(params, offsets[l], dims[l]);
    Mat gw = delta.transpose() * cache.act[l];  // out x in
    Eigen::Map<Mat>(grad.data() + offsets[l], dims[l].out, dims[l].in) = gw;
    Eigen::Map<Vec>(grad.data() + offsets[l] + dims[l].out * dims[l].in, dims[l].out) =
        delta.colwise().sum().transpose();
    if (l > 0) {
      Mat back = delta * view.W;
      delta = back.cwiseProduct(cache.pre[l - 1].unaryExpr(
          [&](double z) { return activate_deriv(spec.activation, z); }));
    }
  }
  return grad;
}

Vec output_jvp(const ModelSpec& spec, const Vec& params, const Batch& batch, const Vec& tangent) {
  check_shapes(spec, params, batch);
  require(tangent.size() == params.size(), "tangent length does not match params");
  if (spec.kind != ModelKind::Mlp) return batch.features * tangent;

  auto dims = layer_dims(spec);
  int n = batch.n();
  Mat a = batch.features;
  Mat da = Mat::Zero(n, spec.input_dim);
  int offset = 0;
  Mat z, dz;
  for (size_t l = 0; l < dims.size(); ++l) {
    auto view = layer_view(params, offset, dims[l]);
    auto dview = layer_view(tangent, offset, dims[l]);
    z = a * view.W.transpose();
    z.rowwise() += view.b.transpose();
    dz = a * dview.W.transpose() + da * view.W.transpose();
    dz.rowwise() += dview.b.transpose();
    if (l + 1 < dims.size()) {
      Mat dact = z.unaryExpr([&](double v) { return activate_deriv(spec.activation, v); });
      a = z.unaryExpr([&](double v) { return activate(spec.activation, v); });
      da = dz.cwiseProduct(dact);
    }
    offset += dims[l].out * (dims[l].in + 1);
  }
  return dz.col(0);
}

}  // namespace reweight
