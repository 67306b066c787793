#pragma once

// Experiment configuration. A config is a JSON document merged in three
// layers: built-in defaults for the experiment, then a config file, then
// command-line overrides. Keys not present in the defaults are rejected, so
// a typo fails loudly instead of being ignored.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/rng.hpp"
#include "nkrr/synthetic.hpp"

namespace nkrr::harness {

using json = nlohmann::json;

enum class Experiment { fig1, rates, rank_ratio, verify_theorem, verify_lemma, fit, cv };

inline const char* command_name(Experiment e) {
  switch (e) {
    case Experiment::fig1: return "fig1";
    case Experiment::rates: return "rates";
    case Experiment::rank_ratio: return "rank-ratio";
    case Experiment::verify_theorem: return "verify-theorem";
    case Experiment::verify_lemma: return "verify-lemma";
    case Experiment::fit: return "fit";
    case Experiment::cv: return "cv";
  }
  return "?";
}

// Names accepted in the "experiment" key of a config file for each command.
inline bool experiment_matches(Experiment e, const std::string& name) {
  switch (e) {
    case Experiment::fig1: return name == "fig1-decay" || name == "fig1";
    case Experiment::rates: return name == "rates-table" || name == "fig2-lambda-scaling" || name == "rates";
    case Experiment::rank_ratio: return name == "rank-ratio";
    case Experiment::verify_theorem: return name == "verify-theorem";
    case Experiment::verify_lemma: return name == "verify-lemma";
    case Experiment::fit:
    case Experiment::cv: return name == "real-data" || name == command_name(e);
  }
  return false;
}

namespace detail {

inline json decay(const char* kind, double rate, const char* normalization = "unit") {
  return json{{"kind", kind}, {"rate", rate}, {"normalization", normalization}};
}

inline json common_defaults() {
  return json{{"experiment", ""},
              {"seed", 1},
              {"output", ""},
              {"design", "grid"},
              {"mu", decay("polynomial", 1.0)},
              {"nu", decay("polynomial", 8.0)},
              {"sigma2", 1.0},
              {"n", 400},
              {"trials", 10}};
}

}  // namespace detail

/// Built-in defaults for one command.
inline json default_config(Experiment e) {
  json j = detail::common_defaults();
  switch (e) {
    case Experiment::fig1:
      j["experiment"] = "fig1-decay";
      j["lambda"] = nullptr;  // null: use the optimal lambda of the full problem
      j["p_grid"] = json::array();  // empty: 1..64 then geometric up to n
      j["excess_threshold"] = 1e-2;
      j["trace_threshold"] = 0.1;
      break;
    case Experiment::rates:
      j["experiment"] = "rates-table";
      j["sigma2"] = 0.01;
      j["n_list"] = {64, 128, 256, 512, 1024, 2048, 4096};
      j["drop_smallest"] = 2;
      j["families"] = json::array({
          json{{"mu", detail::decay("polynomial", 4.0)}, {"nu", detail::decay("polynomial", 8.0)}},
          json{{"mu", detail::decay("polynomial", 1.0)}, {"nu", detail::decay("polynomial", 2.0)}},
          json{{"mu", detail::decay("polynomial", 8.0, "bernoulli")}, {"nu", detail::decay("polynomial", 8.0)}},
      });
      j.erase("mu");
      j.erase("nu");
      j.erase("n");
      j.erase("trials");
      j.erase("design");
      break;
    case Experiment::rank_ratio:
      j["experiment"] = "rank-ratio";
      j["lambda_grid"] = json::array();  // empty: window around the optimal lambda
      j["lambda_window"] = 3.1622776601683795;
      j["lambda_points"] = 10;
      j["tol"] = 0.01;
      break;
    case Experiment::verify_theorem:
      j["experiment"] = "verify-theorem";
      j["delta"] = 0.25;
      j["lambda"] = nullptr;
      j["trials"] = 50;
      j["p_grid"] = json::array();  // empty: geometric from 4 d_max up to n
      j["p_points"] = 6;
      break;
    case Experiment::verify_lemma:
      j["experiment"] = "verify-lemma";
      j["n"] = 200;
      j["r"] = 20;
      j["p_list"] = {20, 40, 80};
      j["families"] = {"gaussian", "kernel", "leverage"};
      j["t_points"] = 10;
      j["t_max"] = 2.0;
      j["trials"] = 10000;
      j.erase("mu");
      j.erase("nu");
      j.erase("sigma2");
      j.erase("design");
      break;
    case Experiment::fit:
    case Experiment::cv:
      j = json{{"experiment", command_name(e)},
               {"seed", 1},
               {"output", ""},
               {"data", ""},
               {"target", ""},
               {"features", json::array()},  // empty: every column except the target
               {"max_rows", 8192},
               {"bandwidth", 0.0},  // 0: median heuristic
               {"trace_tol", 1e-3},  // relative to tr K, for the pivoted path
               {"rank", 0},          // > 0 overrides trace_tol
               {"method", "pivoted"}};
      if (e == Experiment::fit) {
        j["lambda"] = 1e-3;
        j["mode"] = "lowrank";
        j["loss"] = "square";
      } else {
        j["folds"] = 5;
        j["lambda_grid"] = json::array();  // empty: 20 log points over [1e-8, 1]
      }
      break;
  }
  return j;
}

namespace detail {

inline void check_keys(const json& defaults, const json& layer, const std::string& prefix) {
  if (!layer.is_object()) throw ConfigError("config: expected an object at '" + (prefix.empty() ? "/" : prefix) + "'");
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
    const json& d = defaults.at(it.key());
    if (d.is_object() && it.value().is_object()) check_keys(d, it.value(), path);
  }
}

}  // namespace detail

/// Parses a config file. Only JSON is accepted.
inline json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
}

/// Sets `dotted.key` to a value parsed as JSON, or taken verbatim as a string
/// when it is not valid JSON.
inline void set_override(json& overrides, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ArgumentError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &overrides;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ArgumentError("override has an empty key component: " + assignment);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// defaults <- file <- overrides. Objects merge key by key; arrays and
/// scalars are replaced.
inline json merge_config(Experiment e, const json& file, const json& overrides) {
  json cfg = default_config(e);
  for (const json* layer : {&file, &overrides}) {
    if (layer->is_null()) continue;
    detail::check_keys(cfg, *layer, "");
    cfg.merge_patch(*layer);
  }
  const std::string name = cfg.at("experiment").get<std::string>();
  if (!experiment_matches(e, name))
    throw ConfigError(std::string("config: experiment '") + name + "' cannot run under command '" + command_name(e) + "'");
  return cfg;
}

/// Hash of the canonical serialization (keys sorted), printed in CSV metadata.
inline std::string config_hash(const json& cfg) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a64(cfg.dump());
  return os.str();
}

// ---------------------------------------------------------------------------
// Typed accessors with validation
// ---------------------------------------------------------------------------

template <typename T>
T get(const json& cfg, const char* key) {
  if (!cfg.contains(key)) throw ConfigError(std::string("config: missing key '") + key + "'");
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

inline Index get_count(const json& cfg, const char* key, Index min_value) {
  const json& v = cfg.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string("config: '") + key + "' must be an integer");
  const auto x = v.get<long long>();
  if (x < min_value)
    throw ConfigError(std::string("config: '") + key + "' must be >= " + std::to_string(min_value));
  return static_cast<Index>(x);
}

inline double get_positive(const json& cfg, const char* key) {
  const double v = get<double>(cfg, key);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("config: '") + key + "' must be > 0");
  return v;
}

inline std::uint64_t get_seed(const json& cfg) {
  const json& v = cfg.at("seed");
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    throw ConfigError("config: 'seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::vector<Index> get_counts(const json& cfg, const char* key, Index min_value) {
  const json& v = cfg.at(key);
  if (!v.is_array()) throw ConfigError(std::string("config: '") + key + "' must be a list");
  std::vector<Index> out;
  for (const auto& x : v) {
    if (!x.is_number_integer() || x.get<long long>() < min_value)
      throw ConfigError(std::string("config: '") + key + "' entries must be integers >= " + std::to_string(min_value));
    out.push_back(static_cast<Index>(x.get<long long>()));
  }
  return out;
}

inline std::vector<double> get_reals(const json& cfg, const char* key) {
  const json& v = cfg.at(key);
  if (!v.is_array()) throw ConfigError(std::string("config: '") + key + "' must be a list");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(std::string("config: '") + key + "' entries must be numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

/// {"kind": "polynomial"|"exponential", "rate": r, "normalization": "unit"|"bernoulli"}.
/// "bernoulli" scales a polynomial law by (2 pi)^{-2 rate}, i.e. the kernel
/// is exactly B_{2 beta}(frac(x - y)) / (2 beta)! up to sign.
inline DecayLaw parse_decay(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string("config: '") + what + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "kind" && it.key() != "rate" && it.key() != "normalization")
      throw ConfigError(std::string("config: unknown key '") + what + "." + it.key() + "'");
  const std::string kind = j.value("kind", std::string("polynomial"));
  const std::string norm = j.value("normalization", std::string("unit"));
  if (!j.contains("rate") || !j.at("rate").is_number()) throw ConfigError(std::string("config: '") + what + ".rate' must be a number");
  const double rate = j.at("rate").get<double>();
  DecayLaw law;
  if (kind == "polynomial") {
    law = polynomial_decay(rate);
  } else if (kind == "exponential") {
    law = exponential_decay(rate);
  } else {
    throw ConfigError(std::string("config: '") + what + ".kind' must be polynomial or exponential");
  }
  if (norm == "bernoulli") {
    if (kind != "polynomial" || std::round(rate) != rate)
      throw ConfigError(std::string("config: '") + what + "': bernoulli normalization needs an integer polynomial rate");
    law.amplitude = bernoulli_normalization(static_cast<int>(rate));
  } else if (norm != "unit") {
    throw ConfigError(std::string("config: '") + what + ".normalization' must be unit or bernoulli");
  }
  law.validate(what);
  return law;
}

inline SpectrumSpec parse_spectrum(const json& j) {
  SpectrumSpec s{parse_decay(j.at("mu"), "mu"), parse_decay(j.at("nu"), "nu")};
  s.validate();
  return s;
}

inline double get_sigma2(const json& cfg) {
  const double s = get<double>(cfg, "sigma2");
  if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("config: 'sigma2' must be >= 0");
  return s;
}

/// Synthetic problem described by design, spectrum, n and sigma2.
inline FixedDesignProblem build_problem(const json& cfg) {
  const Index n = get_count(cfg, "n", 2);
  const SpectrumSpec spec = parse_spectrum(cfg);
  const double sigma2 = get_sigma2(cfg);
  const std::string design = get<std::string>(cfg, "design");
  if (design == "grid") return grid_problem(n, spec, sigma2);
  if (design == "random") return random_design_problem(n, spec, sigma2, derive_seed(get_seed(cfg), "design"));
  throw ConfigError("config: 'design' must be grid or random");
}

}  // namespace nkrr::harness
