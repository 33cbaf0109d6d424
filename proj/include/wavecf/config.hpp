/**
 * Copyright (c) 2026 The wavecf Authors.
 *     All rights reserved.
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing,
 *  software distributed under the License is distributed on an "AS
 *  IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either
 *  express or implied.  See the License for the specific language
 *  governing permissions and limitations under the License.
 */

#ifndef WAVECF_CONFIG_HPP_
#define WAVECF_CONFIG_HPP_

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "eval.hpp"
#include "ingest.hpp"
#include "model.hpp"
#include "train.hpp"

namespace wavecf {

/**
 * Flat run configuration. Sources apply in order: defaults, key=value file,
 * WAVECF_<KEY> environment variables, then explicit overrides. Every value
 * is parsed and range-checked before any computation starts.
 */
struct RunConfig {
  // data
  std::string input;
  Delimiter delimiter = Delimiter::detect;
  std::size_t min_user = 1;
  std::size_t min_item = 1;
  double train_fraction = 0.8;
  std::optional<std::size_t> per_user_cap;
  std::uint64_t seed = 2026;
  std::string workdir = "wavecf-run";
  // spectral
  Index num_eigen = 0;  // 0: default rule
  double eigen_tol = 1e-9;
  Index eigen_block = 4;
  double drop_threshold = 1e-7;
  ExponentBase exponent_mode = ExponentBase::power;
  InverseMode inverse_mode = InverseMode::reciprocal;
  bool materialize_wavelets = false;
  // model
  Index layers = 3;
  Index dim = 64;
  double scale_t = 1.0;
  // train
  double eta = 1e-4;
  std::size_t batch_size = 1024;
  double learning_rate = 0.001;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  // eval
  std::vector<std::size_t> k_values{20};
  std::vector<std::size_t> cohort_bounds{25, 50, 100};
  // grid search
  std::vector<double> grid_learning_rate;
  std::vector<double> grid_scale;
  // runtime
  unsigned threads = 1;
  bool force = false;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "input", "delimiter", "min_user", "min_item", "train_fraction", "per_user_cap", "seed",
        "workdir", "num_eigen", "eigen_tol", "eigen_block", "drop_threshold", "exponent_mode",
        "inverse_mode", "materialize_wavelets", "layers", "dim", "scale_t", "eta", "batch_size",
        "learning_rate", "max_epochs", "patience", "validation_fraction", "k_values",
        "cohort_bounds", "grid_learning_rate", "grid_scale", "threads", "force"};
    return k;
  }

  void set(const std::string& key, const std::string& raw);
  std::string get(const std::string& key) const;
  void validate() const;

  ModelConfig model() const {
    ModelConfig m;
    m.layers = layers;
    m.dim = dim;
    m.scale_t = scale_t;
    m.seed = seed;
    m.filter.exponent = exponent_mode;
    m.filter.inverse = inverse_mode;
    m.materialize_wavelets = materialize_wavelets;
    m.drop_threshold = drop_threshold;
    return m;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.eta = eta;
    t.max_epochs = max_epochs;
    t.patience = patience;
    t.validation_fraction = validation_fraction;
    t.monitor_k = 20;
    t.seed = seed;
    t.threads = threads;
    return t;
  }

  SplitSpec split_spec() const { return {train_fraction, seed, per_user_cap}; }
  CohortSpec cohorts() const { return {cohort_bounds}; }

  /// Keys that only locate files or schedule work; results never depend on them.
  static bool runtime_key(std::string_view k) {
    return k == "input" || k == "workdir" || k == "threads" || k == "force";
  }

  /// key=value lines in the documented order.
  void echo(std::ostream& out, std::string_view prefix = "", bool with_runtime = false) const {
    for (const auto& k : keys())
      if (with_runtime || !runtime_key(k)) out << prefix << k << '=' << get(k) << '\n';
  }
};

namespace detail {

inline std::string trim_copy(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v) {
    if (ch == ',' || ch == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim_copy(raw);
  auto uint = [&] { return parse_integer<std::size_t>(key, v); };
  auto real = [&] { return parse_real(key, v); };
  auto uints = [&] {
    std::vector<std::size_t> out;
    for (const auto& s : split_list(v)) out.push_back(parse_integer<std::size_t>(key, s));
    return out;
  };
  auto reals = [&] {
    std::vector<double> out;
    for (const auto& s : split_list(v)) out.push_back(parse_real(key, s));
    return out;
  };
  if (key == "input") input = v;
  else if (key == "delimiter") {
    if (v == "auto" || v == "detect") delimiter = Delimiter::detect;
    else if (v == "tab") delimiter = Delimiter::tab;
    else if (v == "comma") delimiter = Delimiter::comma;
    else if (v == "double_colon" || v == "::") delimiter = Delimiter::double_colon;
    else throw ConfigError("delimiter: expected auto|tab|comma|double_colon, got '" + v + "'");
  }
  else if (key == "min_user") min_user = uint();
  else if (key == "min_item") min_item = uint();
  else if (key == "train_fraction") train_fraction = real();
  else if (key == "per_user_cap") {
    if (v.empty() || v == "none") per_user_cap.reset();
    else per_user_cap = uint();
  }
  else if (key == "seed") seed = parse_integer<std::uint64_t>(key, v);
  else if (key == "workdir") workdir = v;
  else if (key == "num_eigen") num_eigen = static_cast<Index>(uint());
  else if (key == "eigen_tol") eigen_tol = real();
  else if (key == "eigen_block") eigen_block = static_cast<Index>(uint());
  else if (key == "drop_threshold") drop_threshold = real();
  else if (key == "exponent_mode") {
    if (v == "power") exponent_mode = ExponentBase::power;
    else if (v == "boxcox") exponent_mode = ExponentBase::boxcox;
    else throw ConfigError("exponent_mode: expected power|boxcox, got '" + v + "'");
  }
  else if (key == "inverse_mode") {
    if (v == "reciprocal") inverse_mode = InverseMode::reciprocal;
    else if (v == "negated_scale") inverse_mode = InverseMode::negated_scale;
    else throw ConfigError("inverse_mode: expected reciprocal|negated_scale, got '" + v + "'");
  }
  else if (key == "materialize_wavelets") materialize_wavelets = parse_bool(key, v);
  else if (key == "layers") layers = static_cast<Index>(uint());
  else if (key == "dim") dim = static_cast<Index>(uint());
  else if (key == "scale_t") scale_t = real();
  else if (key == "eta") eta = real();
  else if (key == "batch_size") batch_size = uint();
  else if (key == "learning_rate") learning_rate = real();
  else if (key == "max_epochs") max_epochs = uint();
  else if (key == "patience") patience = uint();
  else if (key == "validation_fraction") validation_fraction = real();
  else if (key == "k_values") k_values = uints();
  else if (key == "cohort_bounds") cohort_bounds = uints();
  else if (key == "grid_learning_rate") grid_learning_rate = reals();
  else if (key == "grid_scale") grid_scale = reals();
  else if (key == "threads") threads = static_cast<unsigned>(uint());
  else if (key == "force") force = parse_bool(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::get(const std::string& key) const {
  using namespace detail;
  auto num = [](auto x) { return std::to_string(x); };
  auto real = [](double x) { return format_double(x); };
  if (key == "input") return input;
  if (key == "delimiter") {
    switch (delimiter) {
      case Delimiter::tab: return "tab";
      case Delimiter::comma: return "comma";
      case Delimiter::double_colon: return "double_colon";
      default: return "auto";
    }
  }
  if (key == "min_user") return num(min_user);
  if (key == "min_item") return num(min_item);
  if (key == "train_fraction") return real(train_fraction);
  if (key == "per_user_cap") return per_user_cap ? num(*per_user_cap) : "none";
  if (key == "seed") return num(seed);
  if (key == "workdir") return workdir;
  if (key == "num_eigen") return num(num_eigen);
  if (key == "eigen_tol") return real(eigen_tol);
  if (key == "eigen_block") return num(eigen_block);
  if (key == "drop_threshold") return real(drop_threshold);
  if (key == "exponent_mode") return exponent_mode == ExponentBase::power ? "power" : "boxcox";
  if (key == "inverse_mode")
    return inverse_mode == InverseMode::reciprocal ? "reciprocal" : "negated_scale";
  if (key == "materialize_wavelets") return materialize_wavelets ? "true" : "false";
  if (key == "layers") return num(layers);
  if (key == "dim") return num(dim);
  if (key == "scale_t") return real(scale_t);
  if (key == "eta") return real(eta);
  if (key == "batch_size") return num(batch_size);
  if (key == "learning_rate") return real(learning_rate);
  if (key == "max_epochs") return num(max_epochs);
  if (key == "patience") return num(patience);
  if (key == "validation_fraction") return real(validation_fraction);
  if (key == "k_values") return join(k_values, num);
  if (key == "cohort_bounds") return join(cohort_bounds, num);
  if (key == "grid_learning_rate") return join(grid_learning_rate, real);
  if (key == "grid_scale") return join(grid_scale, real);
  if (key == "threads") return num(threads);
  if (key == "force") return force ? "true" : "false";
  throw ConfigError("unknown config key '" + key + "'");
}

inline void RunConfig::validate() const {
  if (min_user < 1 || min_item < 1) throw ConfigError("min_user and min_item must be >= 1");
  if (!(train_fraction > 0 && train_fraction < 1))
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  if (per_user_cap && *per_user_cap == 0) throw ConfigError("per_user_cap must be positive");
  if (workdir.empty()) throw ConfigError("workdir must not be empty");
  if (!(eigen_tol > 0)) throw ConfigError("eigen_tol must be positive");
  if (eigen_block < 1) throw ConfigError("eigen_block must be >= 1");
  if (!(drop_threshold >= 0)) throw ConfigError("drop_threshold must be >= 0");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (!(scale_t >= 0)) throw ConfigError("scale_t must be >= 0");
  if (k_values.empty()) throw ConfigError("k_values must list at least one cutoff");
  for (auto k : k_values)
    if (k < 1) throw ConfigError("k_values entries must be >= 1");
  if (!std::is_sorted(cohort_bounds.begin(), cohort_bounds.end()) ||
      std::adjacent_find(cohort_bounds.begin(), cohort_bounds.end()) != cohort_bounds.end())
    throw ConfigError("cohort_bounds must be strictly increasing");
  for (double lr : grid_learning_rate)
    if (!(lr > 0))
      throw ConfigError("grid_learning_rate: " + format_double(lr) +
                        " cannot train; learning rates must be positive");
  for (double t : grid_scale)
    if (!(t >= 0)) throw ConfigError("grid_scale entries must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  train().validate();
}

/// Applies "key=value" lines; blank lines and '#' comments are skipped.
inline void apply_config_stream(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = detail::trim_copy(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    try {
      cfg.set(detail::trim_copy(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  apply_config_stream(cfg, in, path);
}

/// WAVECF_<KEY> (upper-case) environment overrides.
inline void apply_environment(RunConfig& cfg,
                              const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  for (const auto& key : RunConfig::keys()) {
    std::string name = "WAVECF_";
    for (char ch : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const char* v = getenv_fn(name.c_str())) {
      try {
        cfg.set(key, v);
      } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
      }
    }
  }
}

/// "key=value" command-line overrides.
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(detail::trim_copy(s.substr(0, eq)), s.substr(eq + 1));
  }
}

}  // namespace wavecf

#endif  // WAVECF_CONFIG_HPP_
