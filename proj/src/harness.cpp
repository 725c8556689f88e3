#include "reweight/harness.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace reweight {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kEvalTrainTag = 0xe7a1;  // shared by every evaluation training

std::string format17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  const char* root = std::getenv("REWEIGHT_OUTPUT_ROOT");
  if (root && *root && p.is_relative()) p = fs::path(root) / p;
  return p;
}

Vec per_group_accuracy(const ModelSpec& model, const Vec& params, const AnnotatedDataset& data,
                       LossFamily family) {
  auto groups = index_lists(data.group_ids, data.num_groups());
  Vec acc(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    auto sub = data.subset(groups[g]);
    acc[g] = accuracy(model, params, sub.batch, family);
  }
  return acc;
}

std::string baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::ERM: return "erm";
    case BaselineKind::GroupOracleUpweight: return "group_oracle_upweight";
    case BaselineKind::IRMv1Direct: return "irmv1_direct";
    case BaselineKind::GroupDRODirect: return "group_dro_direct";
  }
  return "?";
}

// Plain risk-minimization baseline: full-batch descent on the requested OOD
// risk over the training split.
Vec train_direct_risk(const RiskSpec& risk, const SplitData& data, const ModelSpec& model,
                      LossFamily family, const InnerConfig& inner, std::uint64_t seed) {
  Vec theta = init_params(model, mix_seed(seed, kEvalTrainTag));
  for (int t = 0; t < inner.steps; ++t) {
    Vec g = risk_grad(risk, data.train, model, theta, family);
    if (inner.weight_decay > 0.0) g += inner.weight_decay * theta;
    theta -= inner.learning_rate * g;
    require(all_finite(theta), "direct risk training diverged");
  }
  return theta;
}

MetricsRecord metrics_for(const std::string& method, const SplitData& data,
                          const ModelSpec& model, const Vec& theta, LossFamily family) {
  MetricsRecord rec;
  rec.method = method;
  rec.avg_acc = accuracy(model, theta, data.test.batch, family);
  if (data.test.has_groups()) {
    Vec acc = per_group_accuracy(model, theta, data.test, family);
    rec.per_group_acc.assign(acc.data(), acc.data() + acc.size());
    rec.worst_group_acc = acc.minCoeff();
  } else {
    rec.worst_group_acc = rec.avg_acc;
  }
  if (data.val.has_envs()) {
    auto envs = index_lists(data.val.env_ids, data.val.num_envs());
    for (const auto& idx : envs) {
      auto sub = data.val.subset(idx);
      rec.per_env_acc.push_back(accuracy(model, theta, sub.batch, family));
    }
  }
  return rec;
}

std::string csv_header(int num_groups, int num_envs) {
  std::ostringstream os;
  os << "method,record,iter,val_risk,val_acc,s_saturation,w_mean,w_min,w_max";
  for (int g = 0; g < num_groups; ++g) os << ",group_weight_frac_" << g;
  os << ",avg_acc,worst_group_acc";
  for (int g = 0; g < num_groups; ++g) os << ",group_acc_" << g;
  for (int e = 0; e < num_envs; ++e) os << ",val_env_acc_" << e;
  return os.str();
}

void append_iter_row(std::ostream& csv, std::vector<json>& jsonl, const OuterIterRecord& rec,
                     const std::string& method, int num_groups, int num_envs) {
  csv << method << ",iter," << rec.iter << "," << format17(rec.val_risk) << ","
      << format17(rec.val_acc) << "," << format17(rec.s_saturation) << ","
      << format17(rec.w_mean) << "," << format17(rec.w_min) << "," << format17(rec.w_max);
  for (int g = 0; g < num_groups; ++g) {
    csv << ",";
    if (g < static_cast<int>(rec.group_weight_fraction.size()))
      csv << format17(rec.group_weight_fraction[g]);
  }
  csv << ",,";
  for (int g = 0; g < num_groups; ++g) csv << ",";
  for (int e = 0; e < num_envs; ++e) csv << ",";
  csv << "\n";

  json j{{"method", method},          {"record", "iter"},
         {"iter", rec.iter},          {"val_risk", rec.val_risk},
         {"val_acc", rec.val_acc},    {"s_saturation", rec.s_saturation},
         {"w_mean", rec.w_mean},      {"w_min", rec.w_min},
         {"w_max", rec.w_max}};
  if (!rec.group_weight_fraction.empty()) j["group_weight_fraction"] = rec.group_weight_fraction;
  jsonl.push_back(std::move(j));
}

void append_final_row(std::ostream& csv, std::vector<json>& jsonl, const MetricsRecord& rec,
                      int num_groups, int num_envs) {
  csv << rec.method << ",final,,,,,,,";
  for (int g = 0; g < num_groups; ++g) csv << ",";
  csv << "," << format17(rec.avg_acc) << "," << format17(rec.worst_group_acc);
  for (int g = 0; g < num_groups; ++g) {
    csv << ",";
    if (g < static_cast<int>(rec.per_group_acc.size())) csv << format17(rec.per_group_acc[g]);
  }
  for (int e = 0; e < num_envs; ++e) {
    csv << ",";
    if (e < static_cast<int>(rec.per_env_acc.size())) csv << format17(rec.per_env_acc[e]);
  }
  csv << "\n";

  json j{{"method", rec.method},
         {"record", "final"},
         {"avg_acc", rec.avg_acc},
         {"worst_group_acc", rec.worst_group_acc}};
  if (!rec.per_group_acc.empty()) j["per_group_acc"] = rec.per_group_acc;
  if (!rec.per_env_acc.empty()) j["per_env_acc"] = rec.per_env_acc;
  jsonl.push_back(std::move(j));
}

}  // namespace

SplitData generate_dataset(const DatasetSection& section, std::uint64_t seed) {
  SplitData out;
  switch (section.kind) {
    case DatasetKind::TwoEnv: {
      TwoEnvConfig cfg = section.two_env;
      cfg.seed = seed;
      auto data = gen_two_env(cfg);
      out.train = std::move(data.train);
      out.val = std::move(data.val);
      out.test = std::move(data.test);
      out.core_dim = cfg.entangle ? 0 : cfg.core_dim;
      break;
    }
    case DatasetKind::Group: {
      GroupConfig cfg = section.group;
      cfg.seed = seed;
      auto data = gen_group(cfg);
      out.train = std::move(data.train);
      out.val = std::move(data.val);
      out.test = std::move(data.test);
      out.core_dim = 2;
      break;
    }
    case DatasetKind::Toy2d: {
      // single generator call split 60/20/20
      auto all = gen_toy_2d(section.toy_n, section.toy_corr, seed);
      int n = all.n();
      int n_train = n * 3 / 5, n_val = n / 5;
      std::vector<int> tr_idx, val_idx, te_idx;
      for (int i = 0; i < n; ++i) {
        if (i < n_train) {
          tr_idx.push_back(i);
        } else if (i < n_train + n_val) {
          val_idx.push_back(i);
        } else {
          te_idx.push_back(i);
        }
      }
      out.train = all.subset(tr_idx);
      out.val = all.subset(val_idx);
      out.test = all.subset(te_idx);
      out.core_dim = 1;
      break;
    }
  }
  return out;
}

MetricsRecord train_and_eval(const std::string& method, const SplitData& data,
                             const Vec& effective_weights, const ModelSpec& model,
                             LossFamily family, const InnerConfig& inner, std::uint64_t seed) {
  auto t0 = std::chrono::steady_clock::now();
  InnerConfig cfg = inner;
  cfg.init_seed = mix_seed(seed, kEvalTrainTag);
  TrainResult tr = train_weighted_erm(data.train, effective_weights, model, family, cfg);
  MetricsRecord rec = metrics_for(method, data, model, tr.theta_T, family);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

ExperimentResult run_experiment_config(const RunConfig& cfg, const std::string& config_text) {
  SplitData data = generate_dataset(cfg.dataset, cfg.seed);
  int n_train = data.train.n();
  std::uint64_t config_hash = fnv1a(config_text);

  fs::path out_dir = resolve_output_dir(cfg.output_dir);
  fs::create_directories(out_dir);

  export_dataset(data.train, (out_dir / "train.tsv").string());
  export_dataset(data.val, (out_dir / "val.tsv").string());
  export_dataset(data.test, (out_dir / "test.tsv").string());
  {
    std::ofstream meta(out_dir / "meta.txt");
    meta << "# regeneration record: config + seed\n";
    meta << "config_hash " << std::hex << config_hash << std::dec << "\n";
    meta << "seed " << cfg.seed << "\n";
    meta << "core_dim " << data.core_dim << "\n";
    meta << "n_train " << n_train << "\n";
    meta << "config_begin\n" << config_text << "\nconfig_end\n";
  }

  ExperimentResult result;
  auto wall_start = std::chrono::steady_clock::now();

  for (BaselineKind kind : cfg.baselines) {
    switch (kind) {
      case BaselineKind::ERM:
        result.finals.push_back(train_and_eval("erm", data, Vec::Ones(n_train), cfg.model,
                                               cfg.family, cfg.inner, cfg.seed));
        break;
      case BaselineKind::GroupOracleUpweight: {
        require(data.train.has_groups(), "group_oracle_upweight requires train group ids");
        auto groups = index_lists(data.train.group_ids, data.train.num_groups());
        Vec w(n_train);
        double G = static_cast<double>(groups.size());
        for (const auto& idx : groups)
          for (int i : idx) w[i] = n_train / (G * idx.size());
        result.finals.push_back(train_and_eval("group_oracle_upweight", data, w, cfg.model,
                                               cfg.family, cfg.inner, cfg.seed));
        break;
      }
      case BaselineKind::IRMv1Direct: {
        RiskSpec risk{RiskKind::IRMv1, cfg.outer.risk.lambda, 1.0};
        Vec theta = train_direct_risk(risk, data, cfg.model, cfg.family, cfg.inner, cfg.seed);
        result.finals.push_back(
            metrics_for("irmv1_direct", data, cfg.model, theta, cfg.family));
        break;
      }
      case BaselineKind::GroupDRODirect: {
        RiskSpec risk{RiskKind::GroupDRO, 0.0, 1.0};
        Vec theta = train_direct_risk(risk, data, cfg.model, cfg.family, cfg.inner, cfg.seed);
        result.finals.push_back(
            metrics_for("group_dro_direct", data, cfg.model, theta, cfg.family));
        break;
      }
    }
  }

  if (cfg.outer.iterations > 0) {
    // the outer loop sees train + validation handles only, never test
    double K = cfg.resolved_budget(n_train);
    result.reweight = run_reweighting(data.train, data.val, cfg.model, cfg.family, cfg.inner,
                                      cfg.outer, K);
    result.reweight_ran = true;
    result.history = result.reweight.history;

    Vec eff = result.reweight.state.w.cwiseProduct(result.reweight.mask_threshold);
    result.finals.push_back(
        train_and_eval("reweighted", data, eff, cfg.model, cfg.family, cfg.inner, cfg.seed));
    write_weights_file((out_dir / "weights.txt").string(), result.reweight.state,
                       result.reweight.mask_threshold);
  }

  double wall_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  int num_groups = data.test.has_groups() ? data.test.num_groups() : 0;
  int num_envs = data.val.has_envs() ? data.val.num_envs() : 0;
  std::ofstream csv(out_dir / "metrics.csv");
  std::vector<json> jsonl;
  csv << csv_header(num_groups, num_envs) << "\n";
  for (const auto& rec : result.history)
    append_iter_row(csv, jsonl, rec, "reweighted", num_groups, num_envs);
  for (const auto& rec : result.finals) append_final_row(csv, jsonl, rec, num_groups, num_envs);
  csv.close();

  std::ofstream jf(out_dir / "metrics.jsonl");
  for (const auto& j : jsonl) jf << j.dump() << "\n";
  jf.close();

  std::ofstream summary(out_dir / "summary.txt");
  summary << "config_hash " << std::hex << config_hash << std::dec << "\n";
  summary << "seed " << cfg.seed << "\n";
  summary << "wall_seconds " << wall_total << "\n";
  for (const auto& rec : result.finals) {
    summary << rec.method << " avg_acc " << rec.avg_acc << " worst_group_acc "
            << rec.worst_group_acc << "\n";
  }
  if (result.reweight_ran) {
    summary << "coreset_size " << result.reweight.coreset.indices.size() << "\n";
    summary << "sampled_mask_keep " << result.reweight.mask_sampled.sum() << "\n";
  }
  return result;
}

int run_experiment(const std::string& config_path) {
  RunConfig cfg;
  std::string text;
  try {
    IniFile ini = IniFile::parse_file(config_path);
    text = ini.text();
    cfg = parse_run_config(ini);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  try {
    run_experiment_config(cfg, text);
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

void write_weights_file(const std::string& path, const ReweightState& state, const Vec& mask) {
  std::ofstream out(path);
  require(out.good(), "cannot open weights file for writing: " + path);
  out << "# index w s m\n";
  for (int i = 0; i < state.w.size(); ++i)
    out << i << " " << format17(state.w[i]) << " " << format17(state.s[i]) << " "
        << static_cast<int>(mask[i]) << "\n";
  require(out.good(), "failed writing weights file: " + path);
}

WeightsFile read_weights_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open weights file: " + path);
  std::string line;
  std::vector<std::array<double, 4>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::array<double, 4> row{};
    ls >> row[0] >> row[1] >> row[2] >> row[3];
    require(!ls.fail(), "malformed weights row: " + line);
    rows.push_back(row);
  }
  WeightsFile wf;
  int n = static_cast<int>(rows.size());
  wf.w.resize(n);
  wf.s.resize(n);
  wf.m.resize(n);
  for (int i = 0; i < n; ++i) {
    int idx = static_cast<int>(rows[i][0]);
    require(idx >= 0 && idx < n, "weights file index out of range");
    wf.w[idx] = rows[i][1];
    wf.s[idx] = rows[i][2];
    wf.m[idx] = rows[i][3];
  }
  return wf;
}

MetricsRecord eval_weighted_erm(const std::string& data_dir, const std::string& weights_file,
                                const std::string& model_config_path) {
  IniFile ini = IniFile::parse_file(model_config_path);
  RunConfig cfg = parse_run_config(ini);

  fs::path dir(data_dir);
  SplitData data;
  data.train = import_dataset((dir / "train.tsv").string());
  data.val = import_dataset((dir / "val.tsv").string());
  data.test = import_dataset((dir / "test.tsv").string());

  WeightsFile wf = read_weights_file(weights_file);
  require(wf.w.size() == data.train.n(), "weights file does not cover the training set");

  ModelSpec model = cfg.model;
  model.input_dim = data.train.batch.dim();
  Vec eff = wf.w.cwiseProduct(wf.m);
  return train_and_eval("eval_weighted_erm", data, eff, model, cfg.family, cfg.inner, cfg.seed);
}

std::vector<GapRow> sweep_generalization_gap(const RunConfig& cfg) {
  std::vector<GapRow> rows;
  for (int n_val : cfg.sweep_n_vals) {
    double gap_sum = 0.0;
    for (int r = 0; r < cfg.sweep_repeats; ++r) {
      std::uint64_t seed_r = mix_seed(cfg.seed, static_cast<std::uint64_t>(n_val), r);

      DatasetSection section = cfg.dataset;
      if (section.kind == DatasetKind::TwoEnv) {
        section.two_env.n_val = n_val;
      } else if (section.kind == DatasetKind::Group) {
        section.group.n_val = n_val;
      } else {
        throw std::invalid_argument("sweep requires a two_env or group dataset");
      }
      SplitData data = generate_dataset(section, seed_r);

      // held-out population proxy: a fresh draw, 10x the validation size
      DatasetSection proxy_section = section;
      if (proxy_section.kind == DatasetKind::TwoEnv) {
        proxy_section.two_env.n_val = 10 * n_val;
      } else {
        proxy_section.group.n_val = 10 * n_val;
      }
      SplitData proxy = generate_dataset(proxy_section, mix_seed(seed_r, 0xbead));

      OuterConfig outer = cfg.outer;
      outer.seed = seed_r;
      double K = cfg.resolved_budget(data.train.n());
      ReweightResult rw = run_reweighting(data.train, data.val, cfg.model, cfg.family, cfg.inner,
                                          outer, K);
      Vec eff = rw.state.w.cwiseProduct(rw.mask_threshold);
      InnerConfig inner = cfg.inner;
      inner.init_seed = mix_seed(seed_r, kEvalTrainTag);
      TrainResult tr = train_weighted_erm(data.train, eff, cfg.model, cfg.family, inner);

      double val_risk =
          risk_value(cfg.outer.risk, data.val, cfg.model, tr.theta_T, cfg.family);
      double proxy_risk =
          risk_value(cfg.outer.risk, proxy.val, cfg.model, tr.theta_T, cfg.family);
      gap_sum += std::abs(val_risk - proxy_risk);
    }
    GapRow row;
    row.n_val = n_val;
    row.repeats = cfg.sweep_repeats;
    row.single_seed = cfg.sweep_repeats == 1;
    row.mean_abs_gap = gap_sum / cfg.sweep_repeats;
    rows.push_back(row);
  }

  fs::path out_dir = resolve_output_dir(cfg.output_dir);
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "gap_sweep.csv");
  csv << "n_val,mean_abs_gap,repeats,single_seed\n";
  for (const auto& row : rows)
    csv << row.n_val << "," << format17(row.mean_abs_gap) << "," << row.repeats << ","
        << (row.single_seed ? 1 : 0) << "\n";
  return rows;
}

double gap_loglog_slope(const std::vector<GapRow>& rows) {
  require(rows.size() >= 2, "slope needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = static_cast<int>(rows.size());
  for (const auto& r : rows) {
    double x = std::log(static_cast<double>(r.n_val));
    double y = std::log(std::max(r.mean_abs_gap, 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

OracleReport oracle_suite(std::uint64_t seed) {
  OracleReport report;
  Rng rng(mix_seed(seed, 0x0bac1e));

  OracleCheck spurious{"identifiability_spurious_block", 0, 0.0, 1e-8, false};
  OracleCheck core{"identifiability_core_match", 0, 0.0, 1e-8, false};
  OracleCheck cov{"block_cross_covariance", 0, 0.0, 1e-12, false};
  OracleCheck marg{"marginal_preservation", 0, 0.0, 1e-12, false};
  OracleCheck mean1{"weight_mean_one", 0, 0.0, 1e-12, false};
  OracleCheck entropy{"entropy_identities", 0, 0.0, 1e-12, false};

  for (int trial = 0; trial < 100; ++trial) {
    int nc = 2 + static_cast<int>(rng() % 2);
    int ns = 2 + static_cast<int>(rng() % 2);
    DiscreteJoint joint = random_positive_joint(rng, nc, ns);
    MixingMatrix mixing = make_mixing(joint.dim(), rng());
    WeightTable weight = closed_form_weight(joint);

    WeightedMoments m = weighted_moments(joint, weight, mixing);
    WeightedMoments m1 = weighted_moments(joint, unit_weight(joint), identity_mixing(joint.dim()));
    cov.max_err = std::max(cov.max_err, m.cov_cs.cwiseAbs().maxCoeff());
    marg.max_err = std::max({marg.max_err, (m.pw_yc - m1.pw_yc).cwiseAbs().maxCoeff(),
                             (m.pw_s - m1.pw_s).cwiseAbs().maxCoeff()});
    mean1.max_err = std::max(mean1.max_err, std::abs(m.mean_weight - 1.0));

    Vec theta_z = pullback(mixing, population_wls(joint, weight, mixing));
    spurious.max_err = std::max(spurious.max_err, theta_z.tail(joint.ds()).cwiseAbs().maxCoeff());
    DebiasedPredictor opt = optimal_debiased_predictor(joint, mixing);
    core.max_err = std::max(core.max_err,
                            (theta_z.head(joint.dc()) - opt.theta_bar_c).cwiseAbs().maxCoeff());

    DiscreteJoint pw = weighted_joint(joint, weight);
    double h_w_full = conditional_entropy(pw, CondSet::ZcZs);
    double h_w_core = conditional_entropy(pw, CondSet::Zc);
    double h_core = conditional_entropy(joint, CondSet::Zc);
    entropy.max_err = std::max({entropy.max_err, std::abs(h_w_full - h_w_core),
                                std::abs(h_w_core - h_core)});

    for (OracleCheck* c : {&spurious, &core, &cov, &marg, &mean1, &entropy}) c->cases += 1;
  }

  // negative control: the unit weight on a correlated joint must fail the
  // independence check (a passing control means the battery detects the bias)
  OracleCheck control{"negative_control_detects_bias", 1, 0.0, 1e-3, false};
  {
    Rng crng(mix_seed(seed, 0xbadc0de));
    DiscreteJoint joint = random_positive_joint(crng, 2, 2);
    // force a strong y-z_s correlation
    joint.prob(0, 0, 0) += 0.2;
    joint.prob(1, 1, 1) += 0.2;
    double total = 0.0;
    for (double v : joint.p) total += v;
    for (double& v : joint.p) v /= total;
    double partial = 0.0;
    for (size_t i = 0; i + 1 < joint.p.size(); ++i) partial += joint.p[i];
    joint.p.back() = 1.0 - partial;

    WeightedMoments m = weighted_moments(joint, unit_weight(joint), identity_mixing(2));
    control.max_err = m.cov_cs.cwiseAbs().maxCoeff();
    control.pass = control.max_err > control.tolerance;  // bias must be visible
  }

  // minimal 2x2x2 case
  OracleCheck minimal{"minimal_2x2x2_case", 1, 0.0, 1e-8, false};
  {
    Rng mrng(mix_seed(seed, 0x222));
    DiscreteJoint joint = random_positive_joint(mrng, 2, 2);
    Vec theta_z = pullback(identity_mixing(2),
                           population_wls(joint, closed_form_weight(joint), identity_mixing(2)));
    minimal.max_err = theta_z.tail(1).cwiseAbs().maxCoeff();
    minimal.pass = minimal.max_err <= minimal.tolerance;
  }

  for (OracleCheck* c : {&spurious, &core, &cov, &marg, &mean1, &entropy})
    c->pass = c->max_err <= c->tolerance;

  report.checks = {spurious, core, cov, marg, mean1, entropy, control, minimal};
  report.all_pass = true;
  for (const auto& c : report.checks) report.all_pass = report.all_pass && c.pass;
  return report;
}

}  // namespace reweight
