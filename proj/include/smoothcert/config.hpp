#pragma once

// Flat key-value run configuration with dotted namespaces (train.sigma,
// certify.n, ...). The raw text is preserved so artifacts can embed the
// configuration verbatim.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "losses.hpp"
#include "smoothing.hpp"

namespace smoothcert {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  static KeyValueConfig parse_text(std::string text) {
    KeyValueConfig cfg;
    cfg.raw_text_ = std::move(text);
    std::istringstream in(cfg.raw_text_);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      }
      if (cfg.values_.count(key)) {
        throw ConfigError("config: duplicate key '" + key + "'");
      }
      cfg.values_[key] = value;
      cfg.order_.push_back(key);
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_int(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: key '" + key + "' must be true/false");
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const std::string& tok : split(it->second, ',')) out.push_back(parse_double(key, tok));
    return out;
  }

  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (const std::string& tok : split(it->second, ','))
      out.push_back(static_cast<int>(parse_int(key, tok)));
    return out;
  }

  const std::string& raw_text() const { return raw_text_; }
  const std::vector<std::string>& keys() const { return order_; }

  /// Returns the raw text with one key's value replaced (or appended when the
  /// key is absent); used by parameter sweeps to derive per-value configs.
  std::string text_with_override(const std::string& key, const std::string& value) const {
    std::istringstream in(raw_text_);
    std::ostringstream out;
    std::string line;
    bool replaced = false;
    while (std::getline(in, line)) {
      std::string stripped = line;
      const std::size_t hash = stripped.find('#');
      if (hash != std::string::npos) stripped.erase(hash);
      const std::size_t eq = stripped.find('=');
      if (!replaced && eq != std::string::npos && trim(stripped.substr(0, eq)) == key) {
        out << key << " = " << value << "\n";
        replaced = true;
      } else {
        out << line << "\n";
      }
    }
    if (!replaced) out << key << " = " << value << "\n";
    return out.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, sep)) {
      const std::string t = trim(tok);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return d;
    } catch (const std::logic_error&) {
      throw ConfigError("config: key '" + key + "' is not a number: " + v);
    }
  }

  static std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const std::int64_t i = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return i;
    } catch (const std::logic_error&) {
      throw ConfigError("config: key '" + key + "' is not an integer: " + v);
    }
  }

  std::string raw_text_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

enum class DatasetKind { two_moons, gaussian_blobs, mnist };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::two_moons;
  std::int64_t n_train = 2000;
  std::int64_t n_test = 1000;
  double noise_std = 0.1;                         // two_moons jitter
  std::vector<std::vector<double>> blob_centers;  // gaussian_blobs
  double blob_std = 1.0;
  std::string train_images, train_labels, test_images, test_labels;  // mnist
  std::int64_t train_subset = 0, test_subset = 0;                    // 0 = full file
};

/// Everything one run needs; the serialized config is carried verbatim and
/// embedded into every output artifact.
struct RunConfig {
  DatasetSpec dataset;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::relu;
  TrainConfig train;
  CertifyConfig certify;
  bool certify_sigma_explicit = false;
  std::vector<double> report_radii;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 0;
  std::string config_text;

  static RunConfig from_config(const KeyValueConfig& kv);
  static RunConfig from_file(const std::string& path) {
    return from_config(KeyValueConfig::parse_file(path));
  }
};

namespace detail {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "seed",
      "out",
      "dataset.kind",
      "dataset.n_train",
      "dataset.n_test",
      "dataset.noise_std",
      "dataset.blob_centers",
      "dataset.blob_std",
      "dataset.train_images",
      "dataset.train_labels",
      "dataset.test_images",
      "dataset.test_labels",
      "dataset.train_subset",
      "dataset.test_subset",
      "model.hidden",
      "model.activation",
      "train.loss",
      "train.sigma",
      "train.lambda",
      "train.eta",
      "train.m",
      "train.epochs",
      "train.batch_size",
      "train.lr",
      "train.momentum",
      "train.nesterov",
      "train.weight_decay",
      "train.lr_decay_epochs",
      "train.lr_decay_factor",
      "train.macer_gamma",
      "train.macer_beta",
      "train.attack_steps",
      "train.attack_epsilon",
      "train.attack_step_size",
      "train.attack_warmup_epochs",
      "certify.sigma",
      "certify.n",
      "certify.n0",
      "certify.alpha",
      "certify.batch",
      "report.radii",
  };
  return keys;
}

inline std::vector<std::vector<double>> parse_centers(const std::string& s) {
  std::vector<std::vector<double>> centers;
  std::istringstream in(s);
  std::string group;
  while (std::getline(in, group, ';')) {
    std::vector<double> c;
    std::istringstream gin(group);
    std::string tok;
    while (std::getline(gin, tok, ',')) {
      try {
        c.push_back(std::stod(tok));
      } catch (const std::logic_error&) {
        throw ConfigError("config: bad blob center component: " + tok);
      }
    }
    if (!c.empty()) centers.push_back(std::move(c));
  }
  if (centers.empty()) throw ConfigError("config: dataset.blob_centers is empty");
  return centers;
}

}  // namespace detail

inline RunConfig RunConfig::from_config(const KeyValueConfig& kv) {
  for (const std::string& key : kv.keys()) {
    if (!detail::known_config_keys().count(key)) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  RunConfig rc;
  rc.config_text = kv.raw_text();
  rc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  rc.out_dir = kv.get_string("out", "runs/out");

  const std::string kind = kv.get_string("dataset.kind", "two_moons");
  if (kind == "two_moons") {
    rc.dataset.kind = DatasetKind::two_moons;
  } else if (kind == "gaussian_blobs") {
    rc.dataset.kind = DatasetKind::gaussian_blobs;
  } else if (kind == "mnist") {
    rc.dataset.kind = DatasetKind::mnist;
  } else {
    throw ConfigError("config: unknown dataset.kind '" + kind + "'");
  }
  rc.dataset.n_train = kv.get_int("dataset.n_train", 2000);
  rc.dataset.n_test = kv.get_int("dataset.n_test", 1000);
  rc.dataset.noise_std = kv.get_double("dataset.noise_std", 0.1);
  if (kv.has("dataset.blob_centers")) {
    rc.dataset.blob_centers = detail::parse_centers(kv.require_string("dataset.blob_centers"));
  }
  rc.dataset.blob_std = kv.get_double("dataset.blob_std", 1.0);
  rc.dataset.train_images = kv.get_string("dataset.train_images", "");
  rc.dataset.train_labels = kv.get_string("dataset.train_labels", "");
  rc.dataset.test_images = kv.get_string("dataset.test_images", "");
  rc.dataset.test_labels = kv.get_string("dataset.test_labels", "");
  rc.dataset.train_subset = kv.get_int("dataset.train_subset", 0);
  rc.dataset.test_subset = kv.get_int("dataset.test_subset", 0);

  rc.hidden = kv.get_int_list("model.hidden", {64, 64});
  const std::string act = kv.get_string("model.activation", "relu");
  if (act == "relu") {
    rc.activation = Activation::relu;
  } else if (act == "tanh") {
    rc.activation = Activation::tanh;
  } else {
    throw ConfigError("config: unknown model.activation '" + act + "'");
  }

  try {
    rc.train.loss_kind = loss_kind_from_name(kv.get_string("train.loss", "gaussian"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  rc.train.sigma = kv.get_double("train.sigma", 0.25);
  rc.train.lambda = kv.get_double("train.lambda", 0.0);
  rc.train.eta = kv.get_double("train.eta", 0.5);
  rc.train.m = static_cast<int>(kv.get_int("train.m", 2));
  rc.train.macer.gamma = kv.get_double("train.macer_gamma", 8.0);
  rc.train.macer.beta = kv.get_double("train.macer_beta", 16.0);
  rc.train.attack.steps = static_cast<int>(kv.get_int("train.attack_steps", 10));
  rc.train.attack.epsilon = kv.get_double("train.attack_epsilon", 1.0);
  rc.train.attack.step_size = kv.get_double(
      "train.attack_step_size",
      rc.train.attack.steps > 0 ? 2.0 * rc.train.attack.epsilon / rc.train.attack.steps : 1.0);
  rc.train.attack.warmup_epochs = static_cast<int>(kv.get_int("train.attack_warmup_epochs", 10));
  rc.train.optim.learning_rate = kv.get_double("train.lr", 0.01);
  rc.train.optim.momentum = kv.get_double("train.momentum", 0.9);
  rc.train.optim.nesterov = kv.get_bool("train.nesterov", true);
  rc.train.optim.weight_decay = kv.get_double("train.weight_decay", 1e-4);
  rc.train.optim.lr_decay_epochs = kv.get_int_list("train.lr_decay_epochs", {30, 60});
  rc.train.optim.lr_decay_factor = kv.get_double("train.lr_decay_factor", 0.1);
  rc.train.optim.epochs = static_cast<int>(kv.get_int("train.epochs", 90));
  rc.train.optim.batch_size = static_cast<int>(kv.get_int("train.batch_size", 256));
  rc.train.optim.seed = rc.seed;

  rc.certify_sigma_explicit = kv.has("certify.sigma");
  rc.certify.sigma = kv.get_double("certify.sigma", rc.train.sigma);
  rc.certify.n = kv.get_int("certify.n", 100000);
  rc.certify.n0 = kv.get_int("certify.n0", 100);
  rc.certify.alpha = kv.get_double("certify.alpha", 0.001);
  rc.certify.batch_size = static_cast<int>(kv.get_int("certify.batch", 1000));
  rc.certify.seed = rc.seed;

  rc.report_radii = kv.get_double_list(
      "report.radii", {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25});

  try {
    rc.train.validate();
    rc.certify.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

/// Builds the train or test split described by the configuration.
inline Dataset make_dataset(const RunConfig& rc, Split split) {
  const DatasetSpec& spec = rc.dataset;
  switch (spec.kind) {
    case DatasetKind::two_moons:
      return gen_two_moons(split == Split::train ? spec.n_train : spec.n_test, spec.noise_std,
                           rc.seed, split);
    case DatasetKind::gaussian_blobs: {
      if (spec.blob_centers.empty()) {
        throw ConfigError("config: gaussian_blobs requires dataset.blob_centers");
      }
      return gen_gaussian_blobs(split == Split::train ? spec.n_train : spec.n_test,
                                spec.blob_centers, spec.blob_std, rc.seed, split);
    }
    case DatasetKind::mnist: {
      const std::string& images = split == Split::train ? spec.train_images : spec.test_images;
      const std::string& labels = split == Split::train ? spec.train_labels : spec.test_labels;
      if (images.empty() || labels.empty()) {
        throw ConfigError("config: mnist requires dataset.*_images and dataset.*_labels");
      }
      Dataset ds = load_mnist_idx(images, labels);
      ds.split = split;
      const std::int64_t subset = split == Split::train ? spec.train_subset : spec.test_subset;
      if (subset > 0 && subset < ds.size()) ds = dataset_head(ds, subset);
      return ds;
    }
  }
  throw std::logic_error("make_dataset: unreachable");
}

}  // namespace smoothcert
