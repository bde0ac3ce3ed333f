#pragma once

// Run configuration: a JSON document with fixed sections, merged onto the
// built-in defaults. Unknown keys and mistyped values are rejected with the
// offending key path and, when it can be located, the source line.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "purcell/dynamics.hpp"
#include "purcell/params.hpp"
#include "purcell/quantum_oracle.hpp"

namespace purcell {

using ordered_json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepSettings {
  std::string run_id = "sweep";
  std::vector<double> flux_list{0.01, 0.25, 16.0, 64.0};
  double detuning_min = -3.0;
  double detuning_max = 3.0;
  int detuning_points = 21;
  std::vector<Model> models{Model::full, Model::local};
  /// critical flux used to normalize the comparison table; computed from the
  /// resonant saturation curve when absent
  std::optional<double> phi_0;
  bool write_traces = false;

  [[nodiscard]] std::vector<double> detuning_grid() const {
    std::vector<double> grid(static_cast<std::size_t>(detuning_points));
    if (detuning_points == 1) {
      grid[0] = detuning_min;
      return grid;
    }
    const int last = detuning_points - 1;
    for (int i = 0; i < detuning_points; ++i) {
      const double x = (detuning_min * (last - i) + detuning_max * i) / last;
      grid[static_cast<std::size_t>(i)] = std::abs(x) < 1e-12 ? 0.0 : x;
    }
    return grid;
  }
};

struct SurvivalSettings {
  double time = 150.0;
  int n_bins = 20;
};

struct PointSettings {
  double flux = 0.01;
  double detuning = 0.0;
  Model model = Model::full;
};

struct SaturationSettings {
  std::vector<double> flux_list{0.01, 0.1, 1.0, 4.0, 16.0, 64.0};
};

struct RunConfig {
  ModelParams model;
  SimulationOptions simulation;
  double fit_window_start = 30.0;
  SweepSettings sweep;
  SurvivalSettings survival;
  PointSettings point;
  SaturationSettings saturation;
  OracleOptions oracle;

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("invalid configuration: " + what);
    };
    try {
      model.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    require(simulation.integrator.rtol > 0.0 && simulation.integrator.atol > 0.0, "simulation tolerances > 0");
    require(simulation.samples_per_unit > 0.0, "simulation.samples_per_unit > 0");
    require(fit_window_start >= 0.0 && fit_window_start < model.t_decay, "0 <= simulation.fit_window_start < t_decay");
    require(!sweep.flux_list.empty(), "sweep.flux_list non-empty");
    for (std::size_t i = 0; i < sweep.flux_list.size(); ++i) {
      require(sweep.flux_list[i] > 0.0, "sweep.flux_list entries > 0");
      if (i > 0) require(sweep.flux_list[i] > sweep.flux_list[i - 1], "sweep.flux_list strictly increasing");
    }
    require(sweep.detuning_points >= 1, "sweep.detuning_points >= 1");
    require(sweep.detuning_points == 1 || sweep.detuning_max > sweep.detuning_min,
            "sweep.detuning_max > sweep.detuning_min");
    require(!sweep.models.empty(), "sweep.models non-empty");
    require(!sweep.phi_0 || *sweep.phi_0 > 0.0, "sweep.phi_0 > 0");
    require(!sweep.run_id.empty(), "sweep.run_id non-empty");
    require(survival.time >= 0.0 && survival.time <= model.t_decay, "0 <= survival.time <= t_decay");
    require(survival.n_bins >= 1, "survival.n_bins >= 1");
    require(point.flux >= 0.0, "point.flux >= 0");
    for (std::size_t i = 1; i < saturation.flux_list.size(); ++i)
      require(saturation.flux_list[i] > saturation.flux_list[i - 1], "saturation.flux_list strictly increasing");
    require(oracle.fock_cutoff >= 1, "oracle.fock_cutoff >= 1");
    require(oracle.samples_per_unit > 0.0, "oracle.samples_per_unit > 0");
  }
};

// ---- JSON conversion -------------------------------------------------------

inline ordered_json to_json(const ModelParams& p) {
  ordered_json j;
  j["kappa"] = p.kappa;
  j["kappa_c"] = p.kappa_c;
  j["gamma"] = p.gamma;
  j["delta_c"] = p.delta_c;
  j["beta_in"] = p.beta_in;
  j["delta_inh"] = p.delta_inh;
  j["g_mean"] = p.g_mean;
  j["g_std"] = p.g_std;
  j["n_ions"] = p.n_ions;
  j["n_traj"] = p.n_traj;
  j["t_pulse"] = p.t_pulse;
  j["t_decay"] = p.t_decay;
  j["master_seed"] = p.master_seed;
  // JSON has no infinity; null disables the cut
  if (std::isfinite(p.detuning_cutoff))
    j["detuning_cutoff"] = p.detuning_cutoff;
  else
    j["detuning_cutoff"] = nullptr;
  return j;
}

inline ordered_json models_to_json(const std::vector<Model>& models) {
  auto arr = ordered_json::array();
  for (auto m : models) arr.push_back(to_string(m));
  return arr;
}

inline ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["model"] = to_json(c.model);
  j["simulation"] = {{"rtol", c.simulation.integrator.rtol},
                     {"atol", c.simulation.integrator.atol},
                     {"samples_per_unit", c.simulation.samples_per_unit},
                     {"fit_window_start", c.fit_window_start}};
  ordered_json sw;
  sw["run_id"] = c.sweep.run_id;
  sw["flux_list"] = c.sweep.flux_list;
  sw["detuning_min"] = c.sweep.detuning_min;
  sw["detuning_max"] = c.sweep.detuning_max;
  sw["detuning_points"] = c.sweep.detuning_points;
  sw["models"] = models_to_json(c.sweep.models);
  if (c.sweep.phi_0)
    sw["phi_0"] = *c.sweep.phi_0;
  else
    sw["phi_0"] = nullptr;
  sw["write_traces"] = c.sweep.write_traces;
  j["sweep"] = std::move(sw);
  j["survival"] = {{"time", c.survival.time}, {"n_bins", c.survival.n_bins}};
  j["point"] = {{"flux", c.point.flux}, {"detuning", c.point.detuning}, {"model", to_string(c.point.model)}};
  j["saturation"] = {{"flux_list", c.saturation.flux_list}};
  j["oracle"] = {{"fock_cutoff", c.oracle.fock_cutoff},
                 {"samples_per_unit", c.oracle.samples_per_unit},
                 {"include_decay", c.oracle.include_decay},
                 {"truncation_threshold", c.oracle.truncation_threshold},
                 {"rtol", c.oracle.integrator.rtol},
                 {"atol", c.oracle.integrator.atol}};
  return j;
}

namespace detail {

/// 1-based line of the first occurrence of "key" in `text`, or 0.
inline int locate_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

inline std::string where(const std::string& source, const std::string& text, const std::string& path) {
  const auto leaf = path.substr(path.rfind('.') + 1);
  const int line = locate_key(text, leaf);
  return source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": key '" + path + "'";
}

inline bool compatible(const ordered_json& def, const ordered_json& val) {
  if (def.is_number()) return val.is_number() || val.is_null();
  if (def.is_null()) return val.is_number() || val.is_null();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  if (def.is_object()) return val.is_object();
  return false;
}

/// Overlays `user` onto `base`, rejecting keys absent from `base`.
inline void merge_checked(ordered_json& base, const ordered_json& user, const std::string& prefix,
                          const std::string& source, const std::string& text) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(where(source, text, path) + " is not a recognized configuration key");
    auto& slot = base[key];
    if (slot.is_object()) {
      if (!value.is_object()) throw ConfigError(where(source, text, path) + " must be an object");
      merge_checked(slot, value, path, source, text);
      continue;
    }
    if (!compatible(slot, value))
      throw ConfigError(where(source, text, path) + " has the wrong type (expected " +
                        std::string(slot.is_null() ? "number or null" : slot.type_name()) + ", got " +
                        value.type_name() + ")");
    slot = value;
  }
}

template <typename T>
T get_as(const ordered_json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("configuration key '") + section + "." + key + "': " + e.what());
  }
}

inline std::vector<Model> models_from_json(const ordered_json& arr) {
  std::vector<Model> out;
  for (const auto& m : arr) {
    if (!m.is_string()) throw ConfigError("configuration key 'sweep.models': entries must be strings");
    try {
      out.push_back(model_from_string(m.get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("configuration key 'sweep.models': ") + e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Builds a RunConfig from a fully populated JSON document (defaults merged).
inline RunConfig config_from_json(const ordered_json& j) {
  using detail::get_as;
  RunConfig c;
  auto& m = c.model;
  m.kappa = get_as<double>(j, "model", "kappa");
  m.kappa_c = get_as<double>(j, "model", "kappa_c");
  m.gamma = get_as<double>(j, "model", "gamma");
  m.delta_c = get_as<double>(j, "model", "delta_c");
  m.beta_in = get_as<double>(j, "model", "beta_in");
  m.delta_inh = get_as<double>(j, "model", "delta_inh");
  m.g_mean = get_as<double>(j, "model", "g_mean");
  m.g_std = get_as<double>(j, "model", "g_std");
  m.n_ions = get_as<int>(j, "model", "n_ions");
  m.n_traj = get_as<int>(j, "model", "n_traj");
  m.t_pulse = get_as<double>(j, "model", "t_pulse");
  m.t_decay = get_as<double>(j, "model", "t_decay");
  m.master_seed = get_as<std::uint64_t>(j, "model", "master_seed");
  const auto& cut = j.at("model").at("detuning_cutoff");
  m.detuning_cutoff = cut.is_null() ? std::numeric_limits<double>::infinity() : get_as<double>(j, "model", "detuning_cutoff");

  c.simulation.integrator.rtol = get_as<double>(j, "simulation", "rtol");
  c.simulation.integrator.atol = get_as<double>(j, "simulation", "atol");
  c.simulation.samples_per_unit = get_as<double>(j, "simulation", "samples_per_unit");
  c.fit_window_start = get_as<double>(j, "simulation", "fit_window_start");

  c.sweep.run_id = get_as<std::string>(j, "sweep", "run_id");
  c.sweep.flux_list = get_as<std::vector<double>>(j, "sweep", "flux_list");
  c.sweep.detuning_min = get_as<double>(j, "sweep", "detuning_min");
  c.sweep.detuning_max = get_as<double>(j, "sweep", "detuning_max");
  c.sweep.detuning_points = get_as<int>(j, "sweep", "detuning_points");
  c.sweep.models = detail::models_from_json(j.at("sweep").at("models"));
  const auto& phi0 = j.at("sweep").at("phi_0");
  if (!phi0.is_null()) c.sweep.phi_0 = get_as<double>(j, "sweep", "phi_0");
  c.sweep.write_traces = get_as<bool>(j, "sweep", "write_traces");

  c.survival.time = get_as<double>(j, "survival", "time");
  c.survival.n_bins = get_as<int>(j, "survival", "n_bins");

  c.point.flux = get_as<double>(j, "point", "flux");
  c.point.detuning = get_as<double>(j, "point", "detuning");
  try {
    c.point.model = model_from_string(get_as<std::string>(j, "point", "model"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("configuration key 'point.model': ") + e.what());
  }
  c.saturation.flux_list = get_as<std::vector<double>>(j, "saturation", "flux_list");

  c.oracle.fock_cutoff = get_as<int>(j, "oracle", "fock_cutoff");
  c.oracle.samples_per_unit = get_as<double>(j, "oracle", "samples_per_unit");
  c.oracle.include_decay = get_as<bool>(j, "oracle", "include_decay");
  c.oracle.truncation_threshold = get_as<double>(j, "oracle", "truncation_threshold");
  c.oracle.integrator.rtol = get_as<double>(j, "oracle", "rtol");
  c.oracle.integrator.atol = get_as<double>(j, "oracle", "atol");
  c.validate();
  return c;
}

/// Parses configuration text and merges it onto the defaults.
inline ordered_json merge_config_text(const std::string& text, const std::string& source) {
  ordered_json user;
  try {
    user = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ": malformed JSON: " + e.what());
  }
  if (!user.is_object()) throw ConfigError(source + ": top level must be a JSON object");
  ordered_json merged = to_json(RunConfig{});
  detail::merge_checked(merged, user, "", source, text);
  return merged;
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON and
/// taken as a bare string when that fails.
inline void apply_override(ordered_json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must have the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  ordered_json value;
  try {
    value = ordered_json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  ordered_json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key))
      throw ConfigError("override: key '" + path + "' is not a recognized configuration key");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override: key '" + path + "' names a section, not a value");
  if (!detail::compatible(*node, value))
    throw ConfigError("override: key '" + path + "' has the wrong type (expected " + std::string(node->type_name()) +
                      ", got " + value.type_name() + ")");
  *node = std::move(value);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open configuration file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads `path` (empty = defaults only), applies overrides, validates.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  ordered_json doc = path.empty() ? to_json(RunConfig{}) : merge_config_text(read_text_file(path), path);
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

}  // namespace purcell
