#include "reweight/harness.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace reweight {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

IniFile IniFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

IniFile IniFile::parse_string(const std::string& text, const std::string& origin) {
  IniFile ini;
  ini.text_ = text;
  ini.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      ini.sections_[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key outside any [section]");
    ini.sections_[section][key] = value;
  }
  return ini;
}

void IniFile::fail(const std::string& section, const std::string& key,
                   const std::string& msg) const {
  throw ConfigError(origin_ + ": [" + section + "] " + key + ": " + msg);
}

bool IniFile::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string IniFile::get_string(const std::string& section, const std::string& key) const {
  if (!has(section, key)) fail(section, key, "missing required field");
  return sections_.at(section).at(key);
}

std::string IniFile::get_string(const std::string& section, const std::string& key,
                                const std::string& fallback) const {
  return has(section, key) ? sections_.at(section).at(key) : fallback;
}

double IniFile::get_double(const std::string& section, const std::string& key) const {
  std::string raw = get_string(section, key);
  try {
    size_t pos = 0;
    double v = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    fail(section, key, "expected a number, got '" + raw + "'");
  }
}

double IniFile::get_double(const std::string& section, const std::string& key,
                           double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

int IniFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  if (!has(section, key)) return fallback;
  std::string raw = get_string(section, key);
  try {
    size_t pos = 0;
    int v = std::stoi(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    fail(section, key, "expected an integer, got '" + raw + "'");
  }
}

bool IniFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  std::string raw = lower(get_string(section, key));
  if (raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  fail(section, key, "expected a boolean, got '" + raw + "'");
}

std::uint64_t IniFile::get_u64(const std::string& section, const std::string& key) const {
  std::string raw = get_string(section, key);
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    fail(section, key, "expected an unsigned integer, got '" + raw + "'");
  }
}

std::vector<std::string> IniFile::get_list(const std::string& section,
                                           const std::string& key) const {
  std::vector<std::string> out;
  if (!has(section, key)) return out;
  std::string raw = get_string(section, key);
  std::istringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

namespace {

ModelSpec parse_model(const IniFile& ini) {
  ModelSpec spec;
  std::string kind = lower(ini.get_string("model", "kind", "linear"));
  if (kind == "linear") {
    spec.kind = ModelKind::Linear;
  } else if (kind == "logistic") {
    spec.kind = ModelKind::Logistic;
  } else if (kind == "mlp") {
    spec.kind = ModelKind::Mlp;
  } else {
    throw ConfigError("[model] kind: unknown model '" + kind + "'");
  }
  if (spec.kind == ModelKind::Mlp) {
    for (const auto& h : ini.get_list("model", "hidden")) spec.hidden_dims.push_back(std::stoi(h));
    if (spec.hidden_dims.empty())
      throw ConfigError("[model] hidden: mlp requires at least one hidden dim");
  }
  std::string act = lower(ini.get_string("model", "activation", "relu"));
  if (act == "relu") {
    spec.activation = Activation::ReLU;
  } else if (act == "tanh") {
    spec.activation = Activation::Tanh;
  } else {
    throw ConfigError("[model] activation: unknown activation '" + act + "'");
  }
  return spec;
}

RiskSpec parse_risk(const IniFile& ini) {
  RiskSpec risk;
  std::string kind = lower(ini.get_string("outer", "risk", "erm"));
  if (kind == "erm") {
    risk.kind = RiskKind::ERM;
  } else if (kind == "irmv1") {
    risk.kind = RiskKind::IRMv1;
  } else if (kind == "rex") {
    risk.kind = RiskKind::REx;
  } else if (kind == "group_dro") {
    risk.kind = RiskKind::GroupDRO;
  } else if (kind == "cvar") {
    risk.kind = RiskKind::CVaR;
  } else {
    throw ConfigError("[outer] risk: unknown risk '" + kind + "'");
  }
  risk.lambda = ini.get_double("outer", "lambda", 0.0);
  risk.alpha = ini.get_double("outer", "alpha", 0.2);
  return risk;
}

DatasetSection parse_dataset(const IniFile& ini, std::uint64_t seed) {
  DatasetSection ds;
  std::string kind = lower(ini.get_string("dataset", "kind"));
  if (kind == "two_env") {
    ds.kind = DatasetKind::TwoEnv;
    auto& c = ds.two_env;
    c.n_train_per_env = ini.get_int("dataset", "n_train_per_env", c.n_train_per_env);
    c.n_val = ini.get_int("dataset", "n_val", c.n_val);
    c.n_test = ini.get_int("dataset", "n_test", c.n_test);
    c.train_corrs[0] = ini.get_double("dataset", "train_corr0", c.train_corrs[0]);
    c.train_corrs[1] = ini.get_double("dataset", "train_corr1", c.train_corrs[1]);
    c.test_corr = ini.get_double("dataset", "test_corr", c.test_corr);
    c.label_noise = ini.get_double("dataset", "label_noise", c.label_noise);
    c.core_dim = ini.get_int("dataset", "core_dim", c.core_dim);
    c.spurious_dim = ini.get_int("dataset", "spurious_dim", c.spurious_dim);
    c.core_margin = ini.get_double("dataset", "core_margin", c.core_margin);
    c.entangle = ini.get_bool("dataset", "entangle", c.entangle);
    c.seed = seed;
  } else if (kind == "group") {
    ds.kind = DatasetKind::Group;
    auto& c = ds.group;
    c.n_train = ini.get_int("dataset", "n_train", c.n_train);
    c.n_val = ini.get_int("dataset", "n_val", c.n_val);
    c.n_test = ini.get_int("dataset", "n_test", c.n_test);
    c.majority_fraction = ini.get_double("dataset", "majority_fraction", c.majority_fraction);
    c.feature_noise = ini.get_double("dataset", "feature_noise", c.feature_noise);
    c.seed = seed;
  } else if (kind == "toy2d") {
    ds.kind = DatasetKind::Toy2d;
    ds.toy_n = ini.get_int("dataset", "n", ds.toy_n);
    ds.toy_corr = ini.get_double("dataset", "corr", ds.toy_corr);
  } else {
    throw ConfigError("[dataset] kind: unknown dataset '" + kind + "'");
  }
  return ds;
}

}  // namespace

double RunConfig::resolved_budget(int n_train) const {
  double K = budget > 0.0 ? budget : budget_fraction * n_train;
  return std::min(K, static_cast<double>(n_train));
}

RunConfig parse_run_config(const IniFile& ini) {
  RunConfig cfg;
  cfg.seed = ini.get_u64("run", "seed");  // mandatory
  cfg.dataset = parse_dataset(ini, cfg.seed);
  cfg.model = parse_model(ini);
  switch (cfg.dataset.kind) {
    case DatasetKind::TwoEnv:
      cfg.model.input_dim = cfg.dataset.two_env.core_dim + cfg.dataset.two_env.spurious_dim;
      break;
    case DatasetKind::Group:
      cfg.model.input_dim = 4;
      break;
    case DatasetKind::Toy2d:
      cfg.model.input_dim = 2;
      break;
  }

  std::string loss = lower(ini.get_string("model", "loss", "logistic_bce"));
  if (loss == "square") {
    cfg.family = LossFamily::Square;
  } else if (loss == "logistic_bce") {
    cfg.family = LossFamily::LogisticBCE;
  } else {
    throw ConfigError("[model] loss: unknown loss family '" + loss + "'");
  }

  cfg.inner.steps = ini.get_int("inner", "steps", 100);
  cfg.inner.learning_rate = ini.get_double("inner", "learning_rate", 0.1);
  cfg.inner.weight_decay = ini.get_double("inner", "weight_decay", 0.0);
  std::string opt = lower(ini.get_string("inner", "optimizer", "gd"));
  if (opt == "gd") {
    cfg.inner.optimizer = InnerOptimizer::GD;
  } else if (opt == "sgd") {
    cfg.inner.optimizer = InnerOptimizer::SGD;
  } else {
    throw ConfigError("[inner] optimizer: unknown optimizer '" + opt + "'");
  }
  cfg.inner.batch_size = ini.get_int("inner", "batch_size", 0);

  cfg.outer.iterations = ini.get_int("outer", "iterations", 100);
  cfg.outer.lr_w = ini.get_double("outer", "lr_w", 0.25);
  cfg.outer.lr_s = ini.get_double("outer", "lr_s", 5e-2);
  cfg.outer.risk = parse_risk(ini);
  cfg.outer.temperature = ini.get_double("outer", "temperature", 1.0);
  cfg.outer.sparsity_enabled = ini.get_bool("outer", "sparsity", false);
  cfg.outer.seed = cfg.seed;
  cfg.budget_fraction = ini.get_double("outer", "budget_fraction", 1.0);
  cfg.budget = ini.get_double("outer", "budget", 0.0);

  for (const auto& b : ini.get_list("run", "baselines")) {
    std::string name = lower(b);
    if (name == "erm") {
      cfg.baselines.push_back(BaselineKind::ERM);
    } else if (name == "group_oracle_upweight") {
      cfg.baselines.push_back(BaselineKind::GroupOracleUpweight);
    } else if (name == "irmv1_direct") {
      cfg.baselines.push_back(BaselineKind::IRMv1Direct);
    } else if (name == "group_dro_direct") {
      cfg.baselines.push_back(BaselineKind::GroupDRODirect);
    } else {
      throw ConfigError("[run] baselines: unknown baseline '" + name + "'");
    }
  }
  cfg.output_dir = ini.get_string("run", "output_dir", "out");

  if (ini.has("sweep", "n_vals")) {
    cfg.sweep_n_vals.clear();
    for (const auto& v : ini.get_list("sweep", "n_vals")) cfg.sweep_n_vals.push_back(std::stoi(v));
  }
  cfg.sweep_repeats = ini.get_int("sweep", "repeats", 20);

  // cross-field validation with field-level messages
  try {
    cfg.model.validate();
    cfg.inner.validate();
    cfg.outer.validate();
    if (cfg.dataset.kind == DatasetKind::TwoEnv) cfg.dataset.two_env.validate();
    if (cfg.dataset.kind == DatasetKind::Group) cfg.dataset.group.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config validation: ") + e.what());
  }
  if (cfg.budget < 0.0) throw ConfigError("[outer] budget: must be nonnegative");
  if (cfg.budget_fraction <= 0.0 || cfg.budget_fraction > 1.0)
    throw ConfigError("[outer] budget_fraction: must lie in (0, 1]");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(IniFile::parse_file(path));
}

}  // namespace reweight
