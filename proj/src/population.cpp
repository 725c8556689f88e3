#include "reweight/population.hpp"

#include <Eigen/LU>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace reweight {

namespace {

double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

void write_vec(std::ostream& os, const char* tag, const Vec& v) {
  os << tag;
  for (int i = 0; i < v.size(); ++i) os << " " << std::setprecision(17) << v[i];
  os << "\n";
}

}  // namespace

Vec DiscreteJoint::z_embed(int c, int s) const {
  Vec z(dim());
  z.head(dc()) = zc_values.row(c).transpose();
  z.tail(ds()) = zs_values.row(s).transpose();
  return z;
}

void DiscreteJoint::validate(bool strictly_positive) const {
  require(ny() >= 1 && nc() >= 1 && ns() >= 1, "joint support must be non-empty");
  require(static_cast<int>(p.size()) == ny() * nc() * ns(), "probability table size mismatch");
  double total = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, "probabilities must be finite and nonnegative");
    if (strictly_positive) require(v > 0.0, "joint violates the strictly-positive assumption");
    total += v;
  }
  require(std::abs(total - 1.0) <= 1e-12, "probabilities must sum to one");
}

void WeightTable::validate(const DiscreteJoint& joint) const {
  require(w.size() == joint.p.size(), "weight table size mismatch");
  double mean = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    require(std::isfinite(w[i]) && w[i] >= 0.0, "weights must be finite and nonnegative");
    mean += w[i] * joint.p[i];
  }
  require(std::abs(mean - 1.0) <= 1e-12, "weight table must have mean one under the joint");
}

WeightTable unit_weight(const DiscreteJoint& joint) {
  WeightTable t;
  t.w.assign(joint.p.size(), 1.0);
  return t;
}

WeightTable closed_form_weight(const DiscreteJoint& joint) {
  joint.validate(/*strictly_positive=*/true);
  int ny = joint.ny(), nc = joint.nc(), ns = joint.ns();
  // marginals P(y, z_c) and P(z_s)
  Mat p_yc = Mat::Zero(ny, nc);
  Vec p_s = Vec::Zero(ns);
  for (int y = 0; y < ny; ++y)
    for (int c = 0; c < nc; ++c)
      for (int s = 0; s < ns; ++s) {
        p_yc(y, c) += joint.prob(y, c, s);
        p_s[s] += joint.prob(y, c, s);
      }
  WeightTable t;
  t.w.resize(joint.p.size());
  for (int y = 0; y < ny; ++y)
    for (int c = 0; c < nc; ++c)
      for (int s = 0; s < ns; ++s)
        t.w[(y * nc + c) * ns + s] = p_yc(y, c) * p_s[s] / joint.prob(y, c, s);
  return t;
}

DiscreteJoint weighted_joint(const DiscreteJoint& joint, const WeightTable& weight) {
  joint.validate();
  weight.validate(joint);
  DiscreteJoint out = joint;
  for (size_t i = 0; i < out.p.size(); ++i) out.p[i] = joint.p[i] * weight.w[i];
  return out;
}

WeightedMoments weighted_moments(const DiscreteJoint& joint, const WeightTable& weight,
                                 const MixingMatrix& mixing) {
  joint.validate();
  weight.validate(joint);
  require(mixing.S.rows() == joint.dim(), "mixing size does not match joint dimension");
  int ny = joint.ny(), nc = joint.nc(), ns = joint.ns();
  int d = joint.dim(), dc = joint.dc(), ds = joint.ds();

  WeightedMoments m;
  m.sigma_z = Mat::Zero(d, d);
  m.cross_z = Vec::Zero(d);
  m.pw_yc = Mat::Zero(ny, nc);
  m.pw_s = Vec::Zero(ns);
  m.mean_zc = Vec::Zero(dc);
  m.mean_zs = Vec::Zero(ds);
  Mat e_zc_zs = Mat::Zero(dc, ds);

  for (int y = 0; y < ny; ++y)
    for (int c = 0; c < nc; ++c)
      for (int s = 0; s < ns; ++s) {
        double pw = joint.prob(y, c, s) * weight.at(y, c, s, joint);
        if (pw == 0.0) continue;
        Vec z = joint.z_embed(c, s);
        m.sigma_z += pw * z * z.transpose();
        m.cross_z += pw * joint.y_values[y] * z;
        m.pw_yc(y, c) += pw;
        m.pw_s[s] += pw;
        m.mean_zc += pw * z.head(dc);
        m.mean_zs += pw * z.tail(ds);
        m.mean_y += pw * joint.y_values[y];
        e_zc_zs += pw * z.head(dc) * z.tail(ds).transpose();
        m.mean_weight += pw;
      }

  m.cov_cs = e_zc_zs - m.mean_zc * m.mean_zs.transpose();
  m.sigma_x = mixing.S * m.sigma_z * mixing.S.transpose();
  m.cross_x = mixing.S * m.cross_z;
  return m;
}

Vec population_wls(const DiscreteJoint& joint, const WeightTable& weight,
                   const MixingMatrix& mixing) {
  WeightedMoments m = weighted_moments(joint, weight, mixing);
  Eigen::FullPivLU<Mat> lu(m.sigma_x);
  if (!lu.isInvertible())
    throw std::runtime_error("weighted second-moment matrix is singular");
  return lu.solve(m.cross_x);
}

Vec pullback(const MixingMatrix& mixing, const Vec& theta_x) {
  return mixing.S.transpose() * theta_x;
}

DebiasedPredictor optimal_debiased_predictor(const DiscreteJoint& joint,
                                             const MixingMatrix& mixing) {
  joint.validate();
  require(mixing.S.rows() == joint.dim(), "mixing size does not match joint dimension");
  int dc = joint.dc();
  Mat sigma_c = Mat::Zero(dc, dc);
  Vec cross_c = Vec::Zero(dc);
  for (int y = 0; y < joint.ny(); ++y)
    for (int c = 0; c < joint.nc(); ++c)
      for (int s = 0; s < joint.ns(); ++s) {
        double pv = joint.prob(y, c, s);
        if (pv == 0.0) continue;
        Vec zc = joint.zc_values.row(c).transpose();
        sigma_c += pv * zc * zc.transpose();
        cross_c += pv * joint.y_values[y] * zc;
      }
  Eigen::FullPivLU<Mat> lu(sigma_c);
  if (!lu.isInvertible()) throw std::runtime_error("core second-moment matrix is singular");
  DebiasedPredictor out;
  out.theta_bar_c = lu.solve(cross_c);
  Vec padded = Vec::Zero(joint.dim());
  padded.head(dc) = out.theta_bar_c;
  out.theta_bar = mixing.T.transpose() * padded;
  return out;
}

double conditional_entropy(const DiscreteJoint& dist, CondSet cond) {
  dist.validate();
  int ny = dist.ny(), nc = dist.nc(), ns = dist.ns();

  // H[Y | C] = -sum_{y,cond} q(y,cond) log q(y,cond) + sum_cond q(cond) log q(cond)
  auto entropy_of = [&](auto&& key_joint, auto&& key_cond, int joint_cells, int cond_cells) {
    std::vector<double> qj(joint_cells, 0.0), qc(cond_cells, 0.0);
    for (int y = 0; y < ny; ++y)
      for (int c = 0; c < nc; ++c)
        for (int s = 0; s < ns; ++s) {
          double pv = dist.prob(y, c, s);
          qj[key_joint(y, c, s)] += pv;
          qc[key_cond(y, c, s)] += pv;
        }
    double h = 0.0;
    for (double v : qj) h -= xlogx(v);
    for (double v : qc) h += xlogx(v);
    return h;
  };

  switch (cond) {
    case CondSet::None:
      return entropy_of([&](int y, int, int) { return y; },
                        [&](int, int, int) { return 0; }, ny, 1);
    case CondSet::Zc:
      return entropy_of([&](int y, int c, int) { return y * nc + c; },
                        [&](int, int c, int) { return c; }, ny * nc, nc);
    case CondSet::Zs:
      return entropy_of([&](int y, int, int s) { return y * ns + s; },
                        [&](int, int, int s) { return s; }, ny * ns, ns);
    case CondSet::ZcZs:
      return entropy_of([&](int y, int c, int s) { return (y * nc + c) * ns + s; },
                        [&](int, int c, int s) { return c * ns + s; }, ny * nc * ns, nc * ns);
  }
  throw std::logic_error("unreachable conditioning set");
}

DiscreteJoint random_positive_joint(Rng& rng, int nc, int ns, int dc, int ds) {
  require(dc >= 1 && dc < nc && ds >= 1 && ds < ns, "embedding dims too large for support");
  std::uniform_real_distribution<double> punif(0.05, 1.0);
  std::uniform_real_distribution<double> vunif(0.4, 1.6);
  std::bernoulli_distribution sign(0.5);

  DiscreteJoint j;
  j.y_values.resize(2);
  j.y_values << -1.0, 1.0;
  j.zc_values = Mat::NullaryExpr(nc, dc, [&]() { return (sign(rng) ? 1.0 : -1.0) * vunif(rng); });
  j.zs_values = Mat::NullaryExpr(ns, ds, [&]() { return (sign(rng) ? 1.0 : -1.0) * vunif(rng); });
  j.p.resize(static_cast<size_t>(2) * nc * ns);
  double total = 0.0;
  for (double& v : j.p) {
    v = punif(rng);
    total += v;
  }
  for (double& v : j.p) v /= total;
  // fix the last cell so the table sums to one exactly in floating point
  double partial = 0.0;
  for (size_t i = 0; i + 1 < j.p.size(); ++i) partial += j.p[i];
  j.p.back() = 1.0 - partial;

  // center embeddings under their marginals
  Vec p_c = Vec::Zero(nc), p_s = Vec::Zero(ns);
  for (int y = 0; y < 2; ++y)
    for (int c = 0; c < nc; ++c)
      for (int s = 0; s < ns; ++s) {
        p_c[c] += j.prob(y, c, s);
        p_s[s] += j.prob(y, c, s);
      }
  j.zc_values.rowwise() -= (p_c.transpose() * j.zc_values).row(0);
  j.zs_values.rowwise() -= (p_s.transpose() * j.zs_values).row(0);
  return j;
}

void save_joint(const DiscreteJoint& joint, const std::string& path) {
  joint.validate();
  std::ofstream out(path);
  require(out.good(), "cannot open joint file for writing: " + path);
  out << "sizes " << joint.ny() << " " << joint.nc() << " " << joint.ns() << " " << joint.dc()
      << " " << joint.ds() << "\n";
  write_vec(out, "y_values", joint.y_values);
  for (int c = 0; c < joint.nc(); ++c)
    write_vec(out, "zc_values", joint.zc_values.row(c).transpose());
  for (int s = 0; s < joint.ns(); ++s)
    write_vec(out, "zs_values", joint.zs_values.row(s).transpose());
  for (int y = 0; y < joint.ny(); ++y)
    for (int c = 0; c < joint.nc(); ++c)
      for (int s = 0; s < joint.ns(); ++s)
        out << "p " << y << " " << c << " " << s << " " << std::setprecision(17)
            << joint.prob(y, c, s) << "\n";
  require(out.good(), "failed writing joint file: " + path);
}

DiscreteJoint load_joint(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open joint file: " + path);
  std::string tag;
  int ny, nc, ns, dc, ds;
  in >> tag >> ny >> nc >> ns >> dc >> ds;
  require(in.good() && tag == "sizes", "malformed joint file header: " + path);

  DiscreteJoint j;
  j.y_values.resize(ny);
  j.zc_values.resize(nc, dc);
  j.zs_values.resize(ns, ds);
  j.p.assign(static_cast<size_t>(ny) * nc * ns, 0.0);

  in >> tag;
  require(tag == "y_values", "expected y_values in " + path);
  for (int y = 0; y < ny; ++y) in >> j.y_values[y];
  for (int c = 0; c < nc; ++c) {
    in >> tag;
    require(tag == "zc_values", "expected zc_values in " + path);
    for (int k = 0; k < dc; ++k) in >> j.zc_values(c, k);
  }
  for (int s = 0; s < ns; ++s) {
    in >> tag;
    require(tag == "zs_values", "expected zs_values in " + path);
    for (int k = 0; k < ds; ++k) in >> j.zs_values(s, k);
  }
  while (in >> tag) {
    require(tag == "p", "unexpected record '" + tag + "' in " + path);
    int y, c, s;
    double v;
    in >> y >> c >> s >> v;
    require(in.good() || in.eof(), "malformed probability record in " + path);
    j.prob(y, c, s) = v;
  }
  j.validate();
  return j;
}

}  // namespace reweight
