#pragma once

#include "reweight/datasets.hpp"
#include "reweight/outer.hpp"
#include "reweight/population.hpp"

#include <map>
#include <string>
#include <vector>

namespace reweight {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Minimal INI-style config: [section] headers, key = value lines, '#' comments.
class IniFile {
 public:
  static IniFile parse_file(const std::string& path);
  static IniFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key) const;
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
  const std::string& text() const { return text_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string text_;
  std::string origin_;

  [[noreturn]] void fail(const std::string& section, const std::string& key,
                         const std::string& msg) const;
};

enum class DatasetKind { TwoEnv, Group, Toy2d };

struct DatasetSection {
  DatasetKind kind = DatasetKind::TwoEnv;
  TwoEnvConfig two_env;
  GroupConfig group;
  int toy_n = 2000;
  double toy_corr = 0.9;
};

struct SplitData {
  AnnotatedDataset train, val, test;
  int core_dim = 0;  // leading core-feature columns (0 = unknown/entangled)
};

SplitData generate_dataset(const DatasetSection& section, std::uint64_t seed);

enum class BaselineKind { ERM, GroupOracleUpweight, IRMv1Direct, GroupDRODirect };

struct RunConfig {
  DatasetSection dataset;
  ModelSpec model;
  LossFamily family = LossFamily::LogisticBCE;
  InnerConfig inner;
  OuterConfig outer;
  double budget_fraction = 1.0;  // K = fraction * n_train unless budget set
  double budget = 0.0;           // absolute K; 0 = use fraction
  std::vector<BaselineKind> baselines;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  std::vector<int> sweep_n_vals = {100, 400, 1600, 6400};
  int sweep_repeats = 20;

  double resolved_budget(int n_train) const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const IniFile& ini);

struct MetricsRecord {
  std::string method;
  double avg_acc = 0.0;
  double worst_group_acc = 0.0;
  std::vector<double> per_group_acc;  // on test
  std::vector<double> per_env_acc;    // on validation
  double wall_seconds = 0.0;          // reported separately, not in the CSV
};

// Weighted ERM training followed by test/val metrics; every caller shares the
// same derived init seed so identical weights reproduce identical models.
MetricsRecord train_and_eval(const std::string& method, const SplitData& data,
                             const Vec& effective_weights, const ModelSpec& model,
                             LossFamily family, const InnerConfig& inner, std::uint64_t seed);

struct ExperimentResult {
  std::vector<MetricsRecord> finals;
  std::vector<OuterIterRecord> history;  // reweighted run, when present
  ReweightResult reweight;               // valid when reweight_ran
  bool reweight_ran = false;
};

// Full orchestration: generate + export data, run baselines and the bilevel
// reweighting, emit metrics.csv / metrics.jsonl / weights.txt / summary.txt.
ExperimentResult run_experiment_config(const RunConfig& cfg, const std::string& config_text);

// CLI wrapper: returns the process exit code (0 ok, 1 validation, 2 run failure).
int run_experiment(const std::string& config_path);

// Weighted ERM with frozen weights from a weights file; model/inner/seed come
// from the supplied config. Reproduces the ERM baseline when weights are one.
MetricsRecord eval_weighted_erm(const std::string& data_dir, const std::string& weights_file,
                                const std::string& model_config_path);

struct GapRow {
  int n_val = 0;
  double mean_abs_gap = 0.0;
  int repeats = 0;
  bool single_seed = false;
};

// Validation-vs-held-out risk gap at the learned-reweighting solution, per
// validation size. The population proxy is a 10x larger held-out draw.
std::vector<GapRow> sweep_generalization_gap(const RunConfig& cfg);

// Least-squares slope of log(gap) vs log(n).
double gap_loglog_slope(const std::vector<GapRow>& rows);

struct OracleCheck {
  std::string name;
  int cases = 0;
  double max_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct OracleReport {
  std::vector<OracleCheck> checks;
  bool all_pass = false;
};

// Randomized battery over strictly positive joints and mixings: closed-form
// weight identities, block covariance structure, identifiability, entropy
// identities, plus a deliberate negative control.
OracleReport oracle_suite(std::uint64_t seed);

// Weight-file round-trip used by run/eval.
void write_weights_file(const std::string& path, const ReweightState& state, const Vec& mask);
struct WeightsFile {
  Vec w, s, m;
};
WeightsFile read_weights_file(const std::string& path);

}  // namespace reweight
