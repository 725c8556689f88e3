#pragma once

#include "reweight/mixing.hpp"
#include "reweight/risks.hpp"

#include <array>
#include <optional>
#include <string>

namespace reweight {

// Two training environments with different spurious-feature/label agreement,
// an in-distribution validation split, and a test split with shifted
// agreement. Labels are {0, 1}; groups are label x spurious-agreement cells.
struct TwoEnvConfig {
  int n_train_per_env = 500;
  int n_val = 500;
  int n_test = 2000;
  std::array<double, 2> train_corrs = {0.9, 0.8};
  double test_corr = 0.1;
  double label_noise = 0.25;
  int core_dim = 4;
  int spurious_dim = 4;
  double core_margin = 1.0;
  bool entangle = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TwoEnvData {
  AnnotatedDataset train, val, test;
  std::optional<MixingMatrix> mixing;  // set when entangled
};

TwoEnvData gen_two_env(const TwoEnvConfig& cfg);

// Group-shift task: binary label, binary attribute, four label x attribute
// groups. Training groups are skewed by majority_fraction; test is balanced.
struct GroupConfig {
  int n_train = 2000;
  int n_val = 400;
  int n_test = 2000;
  double majority_fraction = 0.95;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroupData {
  AnnotatedDataset train, val, test;
};

GroupData gen_group(const GroupConfig& cfg);

// 2-D illustrative dataset: x1 carries the label, x2 agrees with it with
// probability corr.
AnnotatedDataset gen_toy_2d(int n, double corr, std::uint64_t seed);

// Columnar text export: header row, feature columns, label, env, group.
void export_dataset(const AnnotatedDataset& data, const std::string& path);
AnnotatedDataset import_dataset(const std::string& path);

}  // namespace reweight
