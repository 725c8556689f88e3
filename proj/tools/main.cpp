#include <CLI11.hpp>

#include "reweight/harness.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace {

using namespace reweight;

int cmd_gen(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg;
  std::string text;
  try {
    IniFile ini = IniFile::parse_file(config_path);
    text = ini.text();
    cfg = parse_run_config(ini);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  try {
    SplitData data = generate_dataset(cfg.dataset, cfg.seed);
    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    export_dataset(data.train, (dir / "train.tsv").string());
    export_dataset(data.val, (dir / "val.tsv").string());
    export_dataset(data.test, (dir / "test.tsv").string());
    std::ofstream meta(dir / "meta.txt");
    meta << "# regeneration record: config + seed\n";
    meta << "config_hash " << std::hex << fnv1a(text) << std::dec << "\n";
    meta << "seed " << cfg.seed << "\n";
    meta << "core_dim " << data.core_dim << "\n";
    meta << "n_train " << data.train.n() << "\n";
    meta << "config_begin\n" << text << "\nconfig_end\n";
    std::cout << "wrote train/val/test + meta to " << dir.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& weights, const std::string& model) {
  try {
    MetricsRecord rec = eval_weighted_erm(data_dir, weights, model);
    std::cout << "avg_acc " << rec.avg_acc << "\n";
    std::cout << "worst_group_acc " << rec.worst_group_acc << "\n";
    for (size_t g = 0; g < rec.per_group_acc.size(); ++g)
      std::cout << "group_acc_" << g << " " << rec.per_group_acc[g] << "\n";
    for (size_t e = 0; e < rec.per_env_acc.size(); ++e)
      std::cout << "val_env_acc_" << e << " " << rec.per_env_acc[e] << "\n";
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_sweep(const std::string& config_path) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  try {
    auto rows = sweep_generalization_gap(cfg);
    std::cout << "n_val  mean_abs_gap  repeats\n";
    for (const auto& r : rows) {
      std::cout << std::setw(5) << r.n_val << "  " << std::setw(12) << r.mean_abs_gap << "  "
                << std::setw(7) << r.repeats << (r.single_seed ? "  (single seed)" : "") << "\n";
    }
    if (rows.size() >= 2)
      std::cout << "log-log slope " << gap_loglog_slope(rows) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cmd_oracle(std::uint64_t seed) {
  OracleReport report = oracle_suite(seed);
  std::cout << std::left << std::setw(36) << "check" << std::setw(8) << "cases" << std::setw(14)
            << "max_err" << std::setw(12) << "tolerance" << "status\n";
  for (const auto& c : report.checks) {
    std::cout << std::left << std::setw(36) << c.name << std::setw(8) << c.cases << std::setw(14)
              << std::scientific << std::setprecision(3) << c.max_err << std::setw(12)
              << c.tolerance << (c.pass ? "PASS" : "FAIL") << "\n";
  }
  std::cout.unsetf(std::ios::scientific);
  std::cout << (report.all_pass ? "all oracle checks passed" : "oracle checks FAILED") << "\n";
  return report.all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sample-reweighting toolkit for distribution-shift experiments"};
  app.require_subcommand(1);

  std::string run_config;
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("config", run_config, "config file")->required();

  std::string eval_data, eval_weights, eval_model;
  auto* eval = app.add_subcommand("eval", "weighted ERM with frozen weights");
  eval->add_option("--data", eval_data, "dataset directory (train/val/test tsv)")->required();
  eval->add_option("--weights", eval_weights, "weights file (index w s m)")->required();
  eval->add_option("--model", eval_model, "config file providing [model]/[inner]/[run]")
      ->required();

  std::string gen_config, gen_out = "data";
  auto* gen = app.add_subcommand("gen", "generate a dataset from a config file");
  gen->add_option("config", gen_config, "config file with a [dataset] section")->required();
  gen->add_option("--out", gen_out, "output directory");

  std::string sweep_config;
  auto* sweep = app.add_subcommand("sweep", "validation-size generalization-gap sweep");
  sweep->add_option("config", sweep_config, "config file")->required();

  std::uint64_t oracle_seed = 0;
  auto* oracle = app.add_subcommand("oracle", "run the population-oracle check battery");
  oracle->add_option("--seed", oracle_seed, "battery seed");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return reweight::run_experiment(run_config);
  if (eval->parsed()) return cmd_eval(eval_data, eval_weights, eval_model);
  if (gen->parsed()) return cmd_gen(gen_config, gen_out);
  if (sweep->parsed()) return cmd_sweep(sweep_config);
  if (oracle->parsed()) return cmd_oracle(oracle_seed);
  return 1;
}
