#include "reweight/datasets.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace reweight {

namespace {

// The attribute cloud is a near-deterministic shortcut (background/channel
// analogue); the core cloud is clean enough that the loss tail stays
// minority-dominated. Fixing the minority then requires balancing the
// attribute, which only minority samples can provide.
constexpr double kGroupCoreMargin = 1.8;
constexpr double kGroupAttrMargin = 4.0;

// The spurious cloud is tight, mirroring the near-deterministic color/channel
// features of the image benchmarks; core clouds keep unit noise.
constexpr double kSpuriousNoiseScale = 0.3;

struct LatentDraw {
  int label;   // possibly noisy
  int agree;   // spurious/attribute sign aligned with the label
  double core_sign;
  double spur_sign;
};

LatentDraw draw_latents(Rng& rng, double corr, double label_noise) {
  std::bernoulli_distribution half(0.5);
  LatentDraw d;
  int y_clean = half(rng) ? 1 : 0;
  d.label = y_clean;
  if (label_noise > 0.0 && std::bernoulli_distribution(label_noise)(rng)) d.label = 1 - d.label;
  d.core_sign = y_clean ? 1.0 : -1.0;
  d.agree = std::bernoulli_distribution(corr)(rng) ? 1 : 0;
  double label_sign = d.label ? 1.0 : -1.0;
  d.spur_sign = d.agree ? label_sign : -label_sign;
  return d;
}

AnnotatedDataset gen_two_env_split(const TwoEnvConfig& cfg, const std::vector<double>& corrs,
                                   const std::vector<int>& env_of_sample, Rng& rng) {
  int n = static_cast<int>(env_of_sample.size());
  int d = cfg.core_dim + cfg.spurious_dim;
  AnnotatedDataset ds;
  ds.batch.features.resize(n, d);
  ds.batch.labels.resize(n);
  ds.env_ids.resize(n);
  ds.group_ids.resize(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::normal_distribution<double> spur_noise(0.0, kSpuriousNoiseScale);
  for (int i = 0; i < n; ++i) {
    int e = env_of_sample[i];
    LatentDraw lat = draw_latents(rng, corrs[e], cfg.label_noise);
    for (int j = 0; j < cfg.core_dim; ++j)
      ds.batch.features(i, j) = lat.core_sign * cfg.core_margin + noise(rng);
    for (int j = 0; j < cfg.spurious_dim; ++j)
      ds.batch.features(i, cfg.core_dim + j) = lat.spur_sign * cfg.core_margin + spur_noise(rng);
    ds.batch.labels[i] = lat.label;
    ds.env_ids[i] = e;
    ds.group_ids[i] = 2 * lat.label + lat.agree;
  }
  return ds;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void TwoEnvConfig::validate() const {
  require(n_train_per_env >= 1 && n_val >= 1 && n_test >= 1, "split sizes must be positive");
  for (double c : train_corrs) require(c > 0.0 && c < 1.0, "train correlations must be in (0,1)");
  require(test_corr > 0.0 && test_corr < 1.0, "test correlation must be in (0,1)");
  require(label_noise >= 0.0 && label_noise < 0.5, "label noise must be in [0, 0.5)");
  require(core_dim >= 1 && spurious_dim >= 1, "feature dims must be positive");
  require(core_margin > 0.0, "core margin must be positive");
}

TwoEnvData gen_two_env(const TwoEnvConfig& cfg) {
  cfg.validate();
  TwoEnvData out;
  std::vector<double> train_corrs = {cfg.train_corrs[0], cfg.train_corrs[1]};

  {
    Rng rng(mix_seed(cfg.seed, 0x7e01));
    std::vector<int> envs(2 * cfg.n_train_per_env);
    for (int i = 0; i < cfg.n_train_per_env; ++i) envs[i] = 0;
    for (int i = cfg.n_train_per_env; i < 2 * cfg.n_train_per_env; ++i) envs[i] = 1;
    out.train = gen_two_env_split(cfg, train_corrs, envs, rng);
  }
  {
    // validation is drawn from the training environments' mixture
    Rng rng(mix_seed(cfg.seed, 0x7e02));
    std::vector<int> envs(cfg.n_val);
    std::bernoulli_distribution half(0.5);
    for (int i = 0; i < cfg.n_val; ++i) envs[i] = half(rng) ? 1 : 0;
    out.val = gen_two_env_split(cfg, train_corrs, envs, rng);
  }
  {
    Rng rng(mix_seed(cfg.seed, 0x7e03));
    std::vector<int> envs(cfg.n_test, 0);
    out.test = gen_two_env_split(cfg, {cfg.test_corr}, envs, rng);
  }

  if (cfg.entangle) {
    MixingMatrix mixing = make_mixing(cfg.core_dim + cfg.spurious_dim, mix_seed(cfg.seed, 0x7e04));
    out.train.batch.features = entangle(out.train.batch.features, mixing);
    out.val.batch.features = entangle(out.val.batch.features, mixing);
    out.test.batch.features = entangle(out.test.batch.features, mixing);
    out.mixing = std::move(mixing);
  }
  return out;
}

void GroupConfig::validate() const {
  require(n_train >= 1 && n_val >= 1 && n_test >= 1, "split sizes must be positive");
  require(majority_fraction > 0.5 && majority_fraction < 1.0,
          "majority fraction must be in (0.5, 1)");
  require(feature_noise > 0.0, "feature noise scale must be positive");
}

namespace {

AnnotatedDataset gen_group_split(const GroupConfig& cfg, int n, double majority, Rng& rng) {
  AnnotatedDataset ds;
  ds.batch.features.resize(n, 4);
  ds.batch.labels.resize(n);
  ds.group_ids.resize(n);
  std::bernoulli_distribution half(0.5);
  std::bernoulli_distribution maj(majority);
  std::normal_distribution<double> noise(0.0, cfg.feature_noise);
  for (int i = 0; i < n; ++i) {
    int y = half(rng) ? 1 : 0;
    int a = maj(rng) ? y : 1 - y;
    double ys = y ? 1.0 : -1.0;
    double as = a ? 1.0 : -1.0;
    ds.batch.features(i, 0) = ys * kGroupCoreMargin + noise(rng);
    ds.batch.features(i, 1) = ys * kGroupCoreMargin + noise(rng);
    ds.batch.features(i, 2) = as * kGroupAttrMargin + noise(rng);
    ds.batch.features(i, 3) = as * kGroupAttrMargin + noise(rng);
    ds.batch.labels[i] = y;
    ds.group_ids[i] = 2 * y + a;
  }
  return ds;
}

void require_four_groups(const AnnotatedDataset& ds, const char* split) {
  std::array<int, 4> counts = {0, 0, 0, 0};
  for (int g : ds.group_ids) counts[g]++;
  for (int g = 0; g < 4; ++g)
    require(counts[g] > 0, std::string("empty group in ") + split + " split");
}

}  // namespace

GroupData gen_group(const GroupConfig& cfg) {
  cfg.validate();
  GroupData out;
  {
    Rng rng(mix_seed(cfg.seed, 0x9701));
    out.train = gen_group_split(cfg, cfg.n_train, cfg.majority_fraction, rng);
  }
  {
    Rng rng(mix_seed(cfg.seed, 0x9702));
    out.val = gen_group_split(cfg, cfg.n_val, cfg.majority_fraction, rng);
  }
  {
    Rng rng(mix_seed(cfg.seed, 0x9703));
    out.test = gen_group_split(cfg, cfg.n_test, 0.5, rng);  // balanced groups
  }
  require_four_groups(out.val, "validation");
  require_four_groups(out.test, "test");
  return out;
}

AnnotatedDataset gen_toy_2d(int n, double corr, std::uint64_t seed) {
  require(n >= 1, "toy dataset needs at least one sample");
  require(corr > 0.0 && corr < 1.0, "correlation must be in (0,1)");
  Rng rng(mix_seed(seed, 0x2d2d));
  AnnotatedDataset ds;
  ds.batch.features.resize(n, 2);
  ds.batch.labels.resize(n);
  ds.group_ids.resize(n);
  std::bernoulli_distribution half(0.5);
  std::bernoulli_distribution agree(corr);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (int i = 0; i < n; ++i) {
    int y = half(rng) ? 1 : 0;
    double ys = y ? 1.0 : -1.0;
    int ag = agree(rng) ? 1 : 0;
    ds.batch.features(i, 0) = ys + noise(rng);
    ds.batch.features(i, 1) = (ag ? ys : -ys) + noise(rng);
    ds.batch.labels[i] = y;
    ds.group_ids[i] = 2 * y + ag;
  }
  return ds;
}

void export_dataset(const AnnotatedDataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path);
  require(out.good(), "cannot open dataset file for writing: " + path);
  int d = data.batch.dim();
  for (int j = 0; j < d; ++j) out << "x" << j << "\t";
  out << "label";
  if (data.has_envs()) out << "\tenv";
  if (data.has_groups()) out << "\tgroup";
  out << "\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < d; ++j) out << format_double(data.batch.features(i, j)) << "\t";
    out << format_double(data.batch.labels[i]);
    if (data.has_envs()) out << "\t" << data.env_ids[i];
    if (data.has_groups()) out << "\t" << data.group_ids[i];
    out << "\n";
  }
  require(out.good(), "failed writing dataset file: " + path);
}

AnnotatedDataset import_dataset(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open dataset file: " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::vector<std::string> cols;
  std::string col;
  while (hs >> col) cols.push_back(col);
  int d = 0;
  bool has_env = false, has_group = false;
  for (const auto& c : cols) {
    if (c.rfind("x", 0) == 0 && c != "label") ++d;
    if (c == "env") has_env = true;
    if (c == "group") has_group = true;
  }
  require(d >= 1, "dataset file has no feature columns: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    require(static_cast<int>(vals.size()) == static_cast<int>(cols.size()),
            "malformed dataset row in " + path);
    rows.push_back(std::move(vals));
  }
  int n = static_cast<int>(rows.size());
  require(n >= 1, "dataset file has no rows: " + path);

  AnnotatedDataset ds;
  ds.batch.features.resize(n, d);
  ds.batch.labels.resize(n);
  if (has_env) ds.env_ids.resize(n);
  if (has_group) ds.group_ids.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.batch.features(i, j) = rows[i][j];
    ds.batch.labels[i] = rows[i][d];
    int k = d + 1;
    if (has_env) ds.env_ids[i] = static_cast<int>(rows[i][k++]);
    if (has_group) ds.group_ids[i] = static_cast<int>(rows[i][k++]);
  }
  ds.validate();
  return ds;
}

}  // namespace reweight
