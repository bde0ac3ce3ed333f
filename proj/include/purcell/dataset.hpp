#pragma once

// Experimental photon-count histograms and detuning tables, their unit
// conversion to kappa units, and JSON export of fit results.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "purcell/csv.hpp"
#include "purcell/least_squares.hpp"

namespace purcell {

enum class AbscissaUnit { ns, ghz, kappa };

inline const char* to_string(AbscissaUnit u) {
  switch (u) {
    case AbscissaUnit::ns: return "ns";
    case AbscissaUnit::ghz: return "GHz";
    case AbscissaUnit::kappa: return "kappa";
  }
  return "?";
}

/// Maps laboratory units onto the internal unit system. `kappa_ghz` is the
/// cavity FWHM linewidth kappa / 2pi in GHz.
struct UnitSystem {
  double kappa_ghz = 1.0;

  /// Time in ns to units of 1/kappa.
  [[nodiscard]] double time_to_internal(double t_ns) const { return t_ns * 2.0 * std::numbers::pi * kappa_ghz; }
  [[nodiscard]] double time_from_internal(double t) const { return t / (2.0 * std::numbers::pi * kappa_ghz); }
  /// Frequency detuning in GHz to units of kappa.
  [[nodiscard]] double detuning_to_internal(double d_ghz) const { return d_ghz / kappa_ghz; }
  [[nodiscard]] double detuning_from_internal(double d) const { return d * kappa_ghz; }
};

struct ExperimentalDataset {
  std::vector<double> abscissa;
  std::vector<double> counts;
  AbscissaUnit unit = AbscissaUnit::ns;
  /// bare reference decay rate, in the reciprocal of the abscissa unit
  std::optional<double> gamma_0;

  void validate() const {
    if (abscissa.size() != counts.size()) throw std::invalid_argument("dataset: abscissa and counts differ in length");
    for (std::size_t i = 1; i < abscissa.size(); ++i)
      if (!(abscissa[i] > abscissa[i - 1]))
        throw std::invalid_argument("dataset: abscissa not strictly increasing at row " + std::to_string(i + 1));
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (!(counts[i] >= 0.0)) throw std::invalid_argument("dataset: negative count at row " + std::to_string(i + 1));
    if (gamma_0 && !(*gamma_0 > 0.0)) throw std::invalid_argument("dataset: gamma_0 must be positive");
  }

  /// Copy expressed in kappa units. Rates scale inversely to times.
  [[nodiscard]] ExperimentalDataset to_internal(const UnitSystem& units) const {
    ExperimentalDataset out = *this;
    out.unit = AbscissaUnit::kappa;
    if (unit == AbscissaUnit::ns) {
      for (auto& t : out.abscissa) t = units.time_to_internal(t);
      if (gamma_0) out.gamma_0 = *gamma_0 / units.time_to_internal(1.0);
    } else if (unit == AbscissaUnit::ghz) {
      for (auto& d : out.abscissa) d = units.detuning_to_internal(d);
    }
    return out;
  }

  [[nodiscard]] ExperimentalDataset from_internal(const UnitSystem& units, AbscissaUnit target) const {
    if (unit != AbscissaUnit::kappa) throw std::logic_error("dataset: from_internal on a non-internal dataset");
    ExperimentalDataset out = *this;
    out.unit = target;
    if (target == AbscissaUnit::ns) {
      for (auto& t : out.abscissa) t = units.time_from_internal(t);
      if (gamma_0) out.gamma_0 = *gamma_0 * units.time_to_internal(1.0);
    } else if (target == AbscissaUnit::ghz) {
      for (auto& d : out.abscissa) d = units.detuning_from_internal(d);
    }
    return out;
  }
};

/// Reads a `time_ns,counts` histogram or a `detuning_GHz,rate` table.
inline ExperimentalDataset dataset_from_table(const CsvTable& table, const std::string& source) {
  ExperimentalDataset ds;
  auto has = [&](const char* c) {
    for (const auto& h : table.columns)
      if (h == c) return true;
    return false;
  };
  if (has("time_ns") && has("counts")) {
    ds.unit = AbscissaUnit::ns;
    ds.abscissa = table.column("time_ns");
    ds.counts = table.column("counts");
  } else if (has("detuning_GHz") && has("rate")) {
    ds.unit = AbscissaUnit::ghz;
    ds.abscissa = table.column("detuning_GHz");
    ds.counts = table.column("rate");
  } else {
    throw std::invalid_argument(source + ": expected columns time_ns,counts or detuning_GHz,rate");
  }
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  return ds;
}

inline ExperimentalDataset read_dataset(const std::string& path) { return dataset_from_table(read_csv(path), path); }

/// Poisson weights 1/max(counts, 1) for histogram fits.
inline std::vector<double> poisson_weights(const std::vector<double>& counts) {
  std::vector<double> w(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) w[i] = 1.0 / std::max(counts[i], 1.0);
  return w;
}

inline nlohmann::ordered_json to_json(const FitResult& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  auto params = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.names.size(); ++k) {
    nlohmann::ordered_json p;
    p["name"] = r.names[k];
    p["value"] = r.parameters[k];
    if (r.parameter_errors.empty())
      p["error"] = nullptr;
    else
      p["error"] = r.parameter_errors[k];
    p["at_bound"] = k < r.at_bound.size() && r.at_bound[k];
    params.push_back(std::move(p));
  }
  j["parameters"] = std::move(params);
  j["error_method"] = "diagonal covariance";
  auto derived = nlohmann::ordered_json::object();
  for (const auto& [name, value] : r.derived) derived[name] = value;
  j["derived"] = std::move(derived);
  j["residual_norm"] = r.residual_norm;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["message"] = r.message;
  if (r.window)
    j["window"] = {r.window->first, r.window->second};
  else
    j["window"] = nullptr;
  return j;
}

}  // namespace purcell
