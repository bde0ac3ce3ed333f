// purcell: command-line front end for the simulation and fitting library.
//
// Exit codes: 0 success, 1 usage/config/IO error, 2 completed with flagged
// results (failed fits, oracle deviation above tolerance).

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/types.h>
#include <unistd.h>

#include "CLI11.hpp"

#include "purcell/config.hpp"
#include "purcell/dataset.hpp"
#include "purcell/disorder.hpp"
#include "purcell/fit_models.hpp"
#include "purcell/parallel.hpp"
#include "purcell/quantum_oracle.hpp"
#include "purcell/steady_state.hpp"
#include "purcell/sweep.hpp"

namespace fs = std::filesystem;
using namespace purcell;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitFlagged = 2;

struct CommonOptions {
  std::string config;
  std::string out = "purcell-out";
  std::vector<std::string> overrides;
  unsigned threads = 0;
  bool dry_run = false;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
};

/// Exclusive claim on an output directory. A lock left behind by a process
/// that no longer exists is taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".purcell.lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      if (try_create()) return;
      if (!stale()) break;
      fs::remove(path_);
    }
    throw std::runtime_error("output directory " + dir.string() + " is in use by another purcell process (" +
                             path_.string() + ")");
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  bool try_create() {
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) return false;
    std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
    std::fclose(f);
    return true;
  }
  [[nodiscard]] bool stale() const {
    std::ifstream in(path_);
    long pid = 0;
    if (!(in >> pid) || pid <= 0) return true;
    return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
  }
  fs::path path_;
};

RunConfig load(const CommonOptions& o) {
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("model.master_seed=" + std::to_string(*o.seed));
  return load_config(o.config, overrides);
}

unsigned threads_for(const CommonOptions& o) { return o.threads > 0 ? o.threads : default_thread_count(); }

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

// ---- subcommands -----------------------------------------------------------

int cmd_sample(const CommonOptions& o) {
  const auto cfg = load(o);
  if (o.dry_run) {
    std::cout << "sample: " << cfg.model.n_traj << " realizations x " << cfg.model.n_ions << " ions -> "
              << (fs::path(o.out) / "realizations.csv").string() << '\n';
    return kExitOk;
  }
  DirectoryLock lock(o.out);
  const auto ensemble = sample_ensemble(cfg.model);
  std::ostringstream ss;
  write_realizations_csv(ss, ensemble);
  write_text(fs::path(o.out) / "realizations.csv", ss.str());
  std::cout << "wrote " << ensemble.size() << " realizations to " << (fs::path(o.out) / "realizations.csv").string()
            << '\n';
  return kExitOk;
}

int cmd_simulate(const CommonOptions& o) {
  const auto cfg = load(o);
  if (o.dry_run) {
    std::cout << "simulate: flux " << cfg.point.flux << ", detuning " << cfg.point.detuning << ", model "
              << to_string(cfg.point.model) << ", " << cfg.model.n_traj << " realizations\n";
    return kExitOk;
  }
  DirectoryLock lock(o.out);
  const auto ensemble = sample_ensemble(cfg.model);
  const Model models[] = {cfg.point.model};
  PointOptions popts{cfg.simulation, cfg.fit_window_start, cfg.survival.time, threads_for(o)};
  const auto point = run_point(cfg.model, cfg.point.flux, cfg.point.detuning, models, ensemble, popts);
  const auto& res = point.models.front();
  const fs::path dir(o.out);
  write_text(dir / "trace.csv", trace_csv(res.trace));
  auto j = to_json(res.fit);
  j["flux"] = cfg.point.flux;
  j["detuning"] = cfg.point.detuning;
  j["simulation_model"] = to_string(cfg.point.model);
  j["gamma"] = std::isfinite(res.gamma) ? ordered_json(res.gamma) : ordered_json(nullptr);
  j["fit_ok"] = res.fit_ok;
  j["seed_digest"] = point.seed_digest;
  j["master_seed"] = cfg.model.master_seed;
  write_text(dir / "fit.json", j.dump(2) + "\n");
  std::cout << "simulate: gamma = " << format_double(res.gamma) << (res.fit_ok ? "" : " (fit flagged: " + res.fit.message + ")")
            << '\n';
  return res.fit_ok ? kExitOk : kExitFlagged;
}

void print_plan(const SweepPlan& plan) {
  const std::size_t points = plan.flux_list.size() * plan.detuning_grid.size();
  std::cout << "sweep plan '" << plan.run_id << "': " << plan.flux_list.size() << " fluxes x "
            << plan.detuning_grid.size() << " detunings = " << points << " points, " << plan.models.size()
            << " model(s), " << plan.base.n_traj << " realizations of " << plan.base.n_ions << " ions, "
            << points * static_cast<std::size_t>(plan.base.n_traj) << " pulse tasks, "
            << points * static_cast<std::size_t>(plan.base.n_traj) * plan.models.size() << " decay tasks\n";
}

int run_sweep_command(const CommonOptions& o, const std::string& replay, bool print_comparison) {
  const RunConfig cfg = replay.empty() ? load(o) : config_from_manifest(replay);
  const auto plan = make_plan(cfg);
  plan.validate();
  print_plan(plan);
  if (o.dry_run) return kExitOk;

  const fs::path dir(o.out);
  DirectoryLock lock(dir);
  auto on_row = [&](const SweepResult& partial, std::size_t fi) {
    persist_run(partial, dir);
    const double flux = plan.flux_list[fi];
    std::cout << "flux " << format_double(flux) << ":";
    for (const auto& row : partial.flux_rows) {
      if (row.flux != flux) continue;
      std::cout << "  " << to_string(row.model) << " max_gamma=" << format_double(row.max_gamma);
      if (row.double_lorentzian.derived.contains("splitting"))
        std::cout << " splitting=" << format_double(row.double_lorentzian.derived.at("splitting"));
    }
    std::cout << "  (" << static_cast<int>(partial.wall_time_seconds) << " s)" << std::endl;
  };
  const auto result = run_detuning_sweep(plan, threads_for(o), on_row);
  persist_run(result, dir);
  if (print_comparison) {
    std::cout << "flux_over_phi0,model,normalized_max_gamma,splitting,offset_b\n";
    for (const auto& c : result.comparison)
      std::cout << format_double(c.flux_over_phi0) << ',' << to_string(c.model) << ','
                << format_double(c.normalized_max_gamma) << ',' << format_double(c.splitting) << ','
                << format_double(c.offset_b) << '\n';
  }
  const auto flagged = std::count_if(result.records.begin(), result.records.end(), [](const auto& r) { return !r.fit_ok; });
  std::cout << "wrote " << (dir / "manifest.json").string() << " (" << result.records.size() << " points, " << flagged
            << " flagged)\n";
  return flagged == 0 ? kExitOk : kExitFlagged;
}

int cmd_saturation(const CommonOptions& o) {
  const auto cfg = load(o);
  std::cout << "saturation: " << cfg.saturation.flux_list.size() << " fluxes at zero detuning, " << cfg.model.n_traj
            << " realizations\n";
  if (o.dry_run) return kExitOk;
  DirectoryLock lock(o.out);
  PointOptions popts{cfg.simulation, cfg.fit_window_start, cfg.survival.time, threads_for(o)};
  const auto sat = run_saturation_curve(cfg.model, cfg.saturation.flux_list, popts);
  const fs::path dir(o.out);
  write_text(dir / "saturation.csv", saturation_csv(sat));
  write_text(dir / "saturation_fit.json", to_json(sat.fit).dump(2) + "\n");
  if (sat.phi_0) std::cout << "phi_0 = " << format_double(*sat.phi_0) << '\n';
  return sat.fit.ok() ? kExitOk : kExitFlagged;
}

struct FitCommand {
  std::string input;
  std::string model;
  std::optional<double> gamma0;
  std::optional<double> kappa_ghz;
  bool poisson = false;
  std::vector<double> window;
};

const std::vector<std::string> kFitModels{"exponential", "stretched", "lorentzian", "double_lorentzian", "ple"};

int cmd_fit(const CommonOptions& o, const FitCommand& f) {
  if (std::find(kFitModels.begin(), kFitModels.end(), f.model) == kFitModels.end()) {
    std::string valid;
    for (const auto& m : kFitModels) valid += (valid.empty() ? "" : ", ") + m;
    throw std::invalid_argument("unknown fit model '" + f.model + "' (valid models: " + valid + ")");
  }
  FitResult r;
  FitOptions opts;
  std::string unit = "as input";
  if (f.model == "ple") {
    const auto table = read_csv(f.input);
    const auto phi = table.column("flux");
    const auto intensity = table.column("intensity");
    r = fit_ple_saturation(phi, intensity, opts);
  } else {
    auto ds = read_dataset(f.input);
    if (f.gamma0) ds.gamma_0 = *f.gamma0;
    ds.validate();
    if (f.kappa_ghz) {
      ds = ds.to_internal(UnitSystem{*f.kappa_ghz});
      unit = "kappa";
    } else {
      unit = to_string(ds.unit);
    }
    if (f.poisson) opts.solver.weights = poisson_weights(ds.counts);
    const bool is_time = ds.unit == AbscissaUnit::ns || (f.kappa_ghz && (f.model == "exponential" || f.model == "stretched"));
    if ((f.model == "exponential" || f.model == "stretched") && !is_time && ds.unit == AbscissaUnit::ghz)
      throw std::invalid_argument(f.model + " fit needs a time_ns,counts histogram");
    if (f.model == "exponential") {
      const double lo = f.window.size() == 2 ? f.window[0] : ds.abscissa.front();
      const double hi = f.window.size() == 2 ? f.window[1] : ds.abscissa.back();
      r = fit_exponential(ds.abscissa, ds.counts, lo, hi, opts);
      if (ds.gamma_0) r.derived["purcell_ratio"] = r.parameters[1] / *ds.gamma_0;
    } else if (f.model == "stretched") {
      r = fit_stretched_composite(ds.abscissa, ds.counts, ds.gamma_0, opts);
    } else if (f.model == "lorentzian") {
      r = fit_lorentzian_single(ds.abscissa, ds.counts, opts);
    } else {
      r = fit_double_lorentzian(ds.abscissa, ds.counts, opts);
    }
  }
  auto j = to_json(r);
  j["input"] = fs::path(f.input).filename().string();
  j["abscissa_unit"] = unit;
  j["weighting"] = f.poisson ? "poisson" : "unweighted";
  const std::string text = j.dump(2) + "\n";
  if (o.out.empty() || o.out == "-") {
    std::cout << text;
  } else {
    DirectoryLock lock(o.out);
    write_text(fs::path(o.out) / "fit.json", text);
    std::cout << "fit " << r.model << ": " << (r.ok() ? "converged" : "flagged (" + r.message + ")") << '\n';
  }
  return r.ok() ? kExitOk : kExitFlagged;
}

int cmd_oracle(const CommonOptions& o, bool convergence) {
  const auto cfg = load(o);
  if (cfg.model.n_ions > 2)
    throw std::invalid_argument("oracle: the exact solution is limited to at most 2 ions (model.n_ions = " +
                                std::to_string(cfg.model.n_ions) + ")");
  ModelParams params = cfg.model;
  params.set_flux(cfg.point.flux);
  params.delta_c = cfg.point.detuning;
  std::cout << "oracle: " << params.n_ions << " ion(s), flux " << format_double(params.flux()) << ", Fock cutoff "
            << cfg.oracle.fock_cutoff << '\n';
  if (o.dry_run) return kExitOk;
  DirectoryLock lock(o.out);
  const auto realization = sample_disorder(params, 0);
  const auto cmp = compare_oracle_mean_field(params, realization, cfg.oracle, cfg.simulation.integrator);

  std::ostringstream ss;
  CsvWriter w(ss);
  std::vector<std::string> cols{"time", "oracle_abs_a", "mean_field_abs_a"};
  for (std::size_t j = 0; j < realization.size(); ++j) {
    cols.push_back("oracle_s_z_" + std::to_string(j));
    cols.push_back("mean_field_s_z_" + std::to_string(j));
  }
  for (const char* c : {"rel_dev_abs_a", "rel_dev_s_z", "max_relative_deviation", "trace", "min_eigenvalue"}) cols.push_back(c);
  for (std::size_t i = 0; i < cols.size(); ++i) ss << (i ? "," : "") << cols[i];
  ss << '\n';
  double running = 0.0;
  for (const auto& row : cmp.rows) {
    running = std::max({running, row.rel_dev_a, row.rel_dev_s_z});
    ss << format_double(row.time) << ',' << format_double(row.oracle_abs_a) << ',' << format_double(row.mean_field_abs_a);
    for (std::size_t j = 0; j < row.oracle_s_z.size(); ++j)
      ss << ',' << format_double(row.oracle_s_z[j]) << ',' << format_double(row.mean_field_s_z[j]);
    ss << ',' << format_double(row.rel_dev_a) << ',' << format_double(row.rel_dev_s_z) << ',' << format_double(running)
       << ',' << format_double(row.trace) << ',' << format_double(row.min_eigenvalue) << '\n';
  }
  const fs::path dir(o.out);
  write_text(dir / "oracle.csv", ss.str());

  ordered_json summary;
  summary["max_rel_dev_abs_a"] = cmp.max_rel_dev_a;
  summary["max_rel_dev_s_z"] = cmp.max_rel_dev_s_z;
  summary["max_trace_deviation"] = cmp.max_trace_deviation;
  summary["min_eigenvalue"] = cmp.min_eigenvalue;
  if (convergence) {
    OracleOptions wider = cfg.oracle;
    wider.fock_cutoff += 2;
    const auto a = quantum_oracle(params, realization, cfg.oracle);
    const auto b = quantum_oracle(params, realization, wider);
    double dev = 0.0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      dev = std::max(dev, std::abs(a.samples[i].a - b.samples[i].a));
      for (std::size_t j = 0; j < a.samples[i].s_z.size(); ++j)
        dev = std::max(dev, std::abs(a.samples[i].s_z[j] - b.samples[i].s_z[j]));
    }
    summary["cutoff_self_deviation"] = dev;
    std::cout << "cutoff " << cfg.oracle.fock_cutoff << " vs " << wider.fock_cutoff << ": max deviation "
              << format_double(dev) << '\n';
  }
  write_text(dir / "oracle_summary.json", summary.dump(2) + "\n");
  std::cout << "max relative deviation: |a| " << format_double(cmp.max_rel_dev_a) << ", s_z "
            << format_double(cmp.max_rel_dev_s_z) << '\n';
  return cmp.max_rel_dev() < 0.05 ? kExitOk : kExitFlagged;
}

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("-c,--config", o.config, "JSON configuration file (defaults when omitted)");
  sub->add_option("-o,--out", o.out, "output directory");
  sub->add_option("--set", o.overrides, "override a configuration key, e.g. --set model.n_ions=5")->take_all();
  sub->add_option("-t,--threads", o.threads, std::string("worker threads (default: $") + kThreadsEnv + " or all cores)");
  sub->add_flag("--dry-run", o.dry_run, "print the plan and exit without writing");
  sub->add_option("--seed", o.seed, "master seed (same as --set model.master_seed=N)");
  sub->add_flag("-v,--verbose", o.verbosity, "more output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driven spin-ensemble cavity simulation and fluorescence analysis"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonOptions common;
  std::string replay;
  bool convergence = false;
  FitCommand fit;

  auto* sample = app.add_subcommand("sample", "sample disorder realizations to CSV");
  auto* simulate = app.add_subcommand("simulate", "pulse + decay at one (flux, detuning) point");
  auto* sweep = app.add_subcommand("sweep", "flux x detuning sweep with persisted run artifacts");
  auto* saturation = app.add_subcommand("saturation", "resonant saturation curve and PLE fit");
  auto* compare = app.add_subcommand("compare", "full vs local model comparison table");
  auto* fitcmd = app.add_subcommand("fit", "fit a model function to a CSV table");
  auto* oracle = app.add_subcommand("oracle", "exact master equation vs mean field (at most 2 ions)");
  for (auto* s : {sample, simulate, sweep, saturation, compare, fitcmd, oracle}) add_common(s, common);
  sweep->add_option("--replay", replay, "re-run the sweep recorded in a manifest.json");
  compare->add_option("--replay", replay, "re-run the sweep recorded in a manifest.json");
  oracle->add_flag("--convergence", convergence, "also compare against cutoff + 2");
  fitcmd->add_option("-i,--input", fit.input, "input CSV (time_ns,counts | detuning_GHz,rate | flux,intensity)")
      ->required();
  fitcmd->add_option("-m,--model", fit.model, "exponential | stretched | lorentzian | double_lorentzian | ple")
      ->required();
  fitcmd->add_option("--gamma0", fit.gamma0, "bare reference decay rate for the Purcell ratio");
  fitcmd->add_option("--kappa-ghz", fit.kappa_ghz, "cavity linewidth in GHz; converts the input to kappa units");
  fitcmd->add_flag("--poisson", fit.poisson, "Poisson weights (variance = counts)");
  fitcmd->add_option("--window", fit.window, "fit window lo hi (exponential)")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*sample) return cmd_sample(common);
    if (*simulate) return cmd_simulate(common);
    if (*sweep) return run_sweep_command(common, replay, false);
    if (*compare) return run_sweep_command(common, replay, true);
    if (*saturation) return cmd_saturation(common);
    if (*fitcmd) return cmd_fit(common, fit);
    if (*oracle) return cmd_oracle(common, convergence);
  } catch (const std::exception& e) {
    std::cerr << "purcell: error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
