#include <doctest.h>

#include "oracles.hpp"
#include "reweight/datasets.hpp"
#include "reweight/inner.hpp"

#include <cstdio>

using namespace reweight;

namespace {

double spurious_agreement(const AnnotatedDataset& ds) {
  // group id encodes 2*label + agree
  int agree = 0;
  for (int g : ds.group_ids) agree += g % 2;
  return static_cast<double>(agree) / ds.n();
}

// fixed core-only classifier: sign of the mean core coordinate
double core_only_accuracy(const AnnotatedDataset& ds, int core_dim) {
  int correct = 0;
  for (int i = 0; i < ds.n(); ++i) {
    double score = ds.batch.features.row(i).head(core_dim).mean();
    bool pred = score >= 0.0;
    if (pred == (ds.batch.labels[i] >= 0.5)) ++correct;
  }
  return static_cast<double>(correct) / ds.n();
}

}  // namespace

TEST_CASE("generators are pure functions of config and seed") {
  TwoEnvConfig cfg;
  cfg.n_train_per_env = 50;
  cfg.n_val = 20;
  cfg.n_test = 30;
  cfg.seed = 11;
  auto a = gen_two_env(cfg);
  auto b = gen_two_env(cfg);
  CHECK((a.train.batch.features - b.train.batch.features).norm() == 0.0);
  CHECK((a.test.batch.labels - b.test.batch.labels).norm() == 0.0);
  CHECK(a.train.env_ids == b.train.env_ids);

  auto t1 = gen_toy_2d(40, 0.8, 3);
  auto t2 = gen_toy_2d(40, 0.8, 3);
  CHECK((t1.batch.features - t2.batch.features).norm() == 0.0);
}

TEST_CASE("empirical agreements converge to the correlation tuple") {
  TwoEnvConfig cfg;
  cfg.n_train_per_env = 50000;
  cfg.n_val = 50000;
  cfg.n_test = 50000;
  cfg.train_corrs = {0.9, 0.8};
  cfg.test_corr = 0.1;
  cfg.label_noise = 0.25;
  cfg.seed = 5;
  auto data = gen_two_env(cfg);

  std::vector<int> env0, env1;
  for (int i = 0; i < data.train.n(); ++i)
    (data.train.env_ids[i] == 0 ? env0 : env1).push_back(i);
  CHECK(spurious_agreement(data.train.subset(env0)) == doctest::Approx(0.9).epsilon(0.0111));
  CHECK(spurious_agreement(data.train.subset(env1)) == doctest::Approx(0.8).epsilon(0.0125));
  CHECK(spurious_agreement(data.test) == doctest::Approx(0.1).epsilon(0.1));
  CHECK(std::abs(spurious_agreement(data.test) - 0.1) <= 0.01);

  // label noise: fraction of samples whose core sign disagrees with the label
  int noisy = 0;
  for (int i = 0; i < data.train.n(); ++i) {
    double core = data.train.batch.features.row(i).head(cfg.core_dim).mean();
    bool clean_label = core >= 0.0;
    // core sign estimates the clean label; disagreement rate approaches noise
    if (clean_label != (data.train.batch.labels[i] >= 0.5)) ++noisy;
  }
  double rate = static_cast<double>(noisy) / data.train.n();
  CHECK(rate > 0.2);  // 0.25 blurred by the feature noise
  CHECK(rate < 0.35);
}

TEST_CASE("neutral test correlation removes spurious information") {
  TwoEnvConfig cfg;
  cfg.n_train_per_env = 100;
  cfg.n_test = 40000;
  cfg.label_noise = 0.0;
  cfg.core_margin = 2.0;
  cfg.seed = 21;
  cfg.test_corr = 0.5;
  auto neutral = gen_two_env(cfg);
  cfg.test_corr = 0.1;
  auto shifted = gen_two_env(cfg);
  double acc_neutral = core_only_accuracy(neutral.test, cfg.core_dim);
  double acc_shifted = core_only_accuracy(shifted.test, cfg.core_dim);
  CHECK(std::abs(acc_neutral - acc_shifted) <= 0.01);

  // noiseless, large margin: core-only classifier is nearly perfect
  CHECK(acc_shifted >= 0.99);
}

TEST_CASE("entanglement preserves linear fits and round-trips") {
  MixingMatrix id = identity_mixing(3);
  Rng rng(4);
  std::uniform_real_distribution<double> dist(-1, 1);
  Mat Z = Mat::NullaryExpr(30, 3, [&]() { return dist(rng); });
  CHECK((entangle(Z, id) - Z).norm() == 0.0);

  MixingMatrix mix = make_mixing(3, 17);
  mix.validate();
  Mat X = entangle(Z, mix);
  Mat back = entangle(X, MixingMatrix{mix.T, mix.S});
  CHECK((back - Z).cwiseAbs().maxCoeff() <= 1e-10);

  // condition number bound
  Eigen::JacobiSVD<Mat> svd(mix.S);
  CHECK(svd.singularValues()(0) / svd.singularValues()(2) <= 10.0 + 1e-9);

  // linear hypothesis class is invariant under invertible reparameterization
  Vec y = Vec::NullaryExpr(30, [&]() { return dist(rng); });
  Vec w = Vec::Ones(30);
  Vec theta_z = solve_weighted_least_squares(Z, y, w, 0.0);
  Vec theta_x = solve_weighted_least_squares(X, y, w, 0.0);
  double loss_z = (y - Z * theta_z).squaredNorm();
  double loss_x = (y - X * theta_x).squaredNorm();
  CHECK(std::abs(loss_z - loss_x) <= 1e-8);
}

TEST_CASE("two-env generator supports entangled output") {
  TwoEnvConfig cfg;
  cfg.n_train_per_env = 200;
  cfg.n_val = 50;
  cfg.n_test = 50;
  cfg.entangle = true;
  cfg.seed = 9;
  auto data = gen_two_env(cfg);
  REQUIRE(data.mixing.has_value());
  data.mixing->validate();
  // un-mixing recovers axis-aligned clouds: unmixed core coordinate predicts
  // labels far better than chance
  Mat unmixed = data.test.batch.features * data.mixing->T.transpose();
  AnnotatedDataset flat = data.test;
  flat.batch.features = unmixed;
  CHECK(core_only_accuracy(flat, cfg.core_dim) >= 0.6);
}

TEST_CASE("group generator: sizes, balance, and empty-group error") {
  GroupConfig cfg;
  cfg.n_train = 4000;
  cfg.n_val = 400;
  cfg.n_test = 4000;
  cfg.majority_fraction = 0.95;
  cfg.seed = 31;
  auto data = gen_group(cfg);

  std::array<int, 4> train_counts = {0, 0, 0, 0};
  for (int g : data.train.group_ids) train_counts[g]++;
  // minority cells (label != attribute) are groups 1 and 2
  CHECK(train_counts[1] + train_counts[2] <= static_cast<int>(0.05 * cfg.n_train * 1.6));
  CHECK(train_counts[1] + train_counts[2] >= 1);

  std::array<int, 4> test_counts = {0, 0, 0, 0};
  for (int g : data.test.group_ids) test_counts[g]++;
  for (int g = 0; g < 4; ++g) CHECK(test_counts[g] >= static_cast<int>(0.2 * cfg.n_test));

  GroupConfig tiny = cfg;
  tiny.n_val = 3;  // cannot contain four groups
  CHECK_THROWS_AS(gen_group(tiny), std::invalid_argument);
}

TEST_CASE("toy 2-D boundary: spurious coefficient tracks the correlation") {
  auto neutral = gen_toy_2d(10000, 0.5, 13);
  Vec th = solve_weighted_least_squares(neutral.batch.features, neutral.batch.labels,
                                        Vec::Ones(10000), 0.0);
  CHECK(std::abs(th[1]) / std::abs(th[0]) <= 0.1);

  auto skewed = gen_toy_2d(10000, 0.95, 13);
  th = solve_weighted_least_squares(skewed.batch.features, skewed.batch.labels, Vec::Ones(10000),
                                    0.0);
  CHECK(std::abs(th[1]) / std::abs(th[0]) >= 0.3);

  CHECK_THROWS_AS(gen_toy_2d(0, 0.5, 1), std::invalid_argument);
}

TEST_CASE("dataset export/import round-trips exactly") {
  TwoEnvConfig cfg;
  cfg.n_train_per_env = 25;
  cfg.n_val = 10;
  cfg.n_test = 10;
  cfg.seed = 77;
  auto data = gen_two_env(cfg);
  std::string path = "/tmp/reweight_test_dataset.tsv";
  export_dataset(data.train, path);
  AnnotatedDataset back = import_dataset(path);
  CHECK((back.batch.features - data.train.batch.features).norm() == 0.0);
  CHECK((back.batch.labels - data.train.batch.labels).norm() == 0.0);
  CHECK(back.env_ids == data.train.env_ids);
  CHECK(back.group_ids == data.train.group_ids);
  std::remove(path.c_str());
}
