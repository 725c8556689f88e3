#include "reweight/mixing.hpp"

#include <Eigen/QR>

#include <cmath>

namespace reweight {

void MixingMatrix::validate() const {
  require(S.rows() == S.cols() && T.rows() == T.cols() && S.rows() == T.rows(),
          "mixing matrices must be square and same size");
  Mat resid = T * S - Mat::Identity(S.rows(), S.cols());
  require(resid.cwiseAbs().maxCoeff() <= 1e-8, "T is not an inverse of S");
}

MixingMatrix make_mixing(int dim, std::uint64_t seed) {
  require(dim >= 1, "mixing dim must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(-0.5 * std::log(10.0), 0.5 * std::log(10.0));

  for (int attempt = 0; attempt < 16; ++attempt) {
    Mat g1 = Mat::NullaryExpr(dim, dim, [&]() { return normal(rng); });
    Mat g2 = Mat::NullaryExpr(dim, dim, [&]() { return normal(rng); });
    Mat q1 = Eigen::HouseholderQR<Mat>(g1).householderQ();
    Mat q2 = Eigen::HouseholderQR<Mat>(g2).householderQ();
    Vec scales = Vec::NullaryExpr(dim, [&]() { return std::exp(log_scale(rng)); });
    MixingMatrix m;
    m.S = q1 * scales.asDiagonal() * q2.transpose();
    m.T = q2 * scales.cwiseInverse().asDiagonal() * q1.transpose();
    Mat resid = m.T * m.S - Mat::Identity(dim, dim);
    if (resid.cwiseAbs().maxCoeff() <= 1e-8) return m;
  }
  throw std::runtime_error("failed to build a well-conditioned mixing matrix");
}

MixingMatrix identity_mixing(int dim) {
  MixingMatrix m;
  m.S = Mat::Identity(dim, dim);
  m.T = Mat::Identity(dim, dim);
  return m;
}

Mat entangle(const Mat& Z, const MixingMatrix& mixing) {
  require(Z.cols() == mixing.S.rows(), "entangle dimension mismatch");
  return Z * mixing.S.transpose();
}

}  // namespace reweight
