// collapse-lab: config-driven front end for the collapse experiments.
// Every subcommand reads an optional JSON config (strict: unknown fields are
// rejected), applies --set and flag overrides, validates, runs, and writes
// plot-ready CSV/JSON plus a manifest echoing the fully resolved config.
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical divergence.

#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "collapse/attractivity.hpp"
#include "collapse/csv.hpp"
#include "collapse/detector.hpp"
#include "collapse/errors.hpp"
#include "collapse/networks.hpp"
#include "collapse/quadrature.hpp"
#include "collapse/quartic.hpp"
#include "collapse/rng.hpp"
#include "collapse/sde.hpp"
#include "collapse/snapshot_io.hpp"
#include "collapse/stats.hpp"
#include "collapse/teacher_student.hpp"

namespace {

using collapse::ConfigError;
using collapse::IoError;
using json = nlohmann::ordered_json;

constexpr int kManifestFormatVersion = 1;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  int workers = -1;
};

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " +
                      e.what());
  }
}

bool same_category(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

// Strict top-level merge: every key must already exist in the defaults and
// keep its JSON category (null defaults accept anything).
void apply_overrides(json& cfg, const json& file, const std::string& source) {
  if (!file.is_object())
    throw ConfigError(source + ": config must be a JSON object");
  for (const auto& [key, value] : file.items()) {
    if (!cfg.contains(key))
      throw ConfigError(source + ": unknown field '" + key + "'");
    if (!cfg[key].is_null() && !same_category(cfg[key], value))
      throw ConfigError(source + ": field '" + key +
                        "' has the wrong JSON type");
    cfg[key] = value;
  }
}

void apply_set(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings are fine without quotes
  }
  json patch;
  patch[key] = value;
  apply_overrides(cfg, patch, "--set");
}

// Precedence: --out flag, then the config field, then COLLAPSE_LAB_OUT,
// then the working directory.
std::filesystem::path resolve_out(json& cfg, const CommonFlags& flags) {
  std::string out;
  if (!flags.out.empty()) {
    out = flags.out;
  } else if (cfg.contains("out") && cfg["out"].is_string() &&
             !cfg["out"].get<std::string>().empty()) {
    out = cfg["out"].get<std::string>();
  } else if (const char* env = std::getenv("COLLAPSE_LAB_OUT");
             env != nullptr && *env != '\0') {
    out = env;
  } else {
    out = ".";
  }
  cfg["out"] = out;
  return out;
}

void finish_common(json& cfg, const CommonFlags& flags) {
  if (!flags.config_path.empty())
    apply_overrides(cfg, load_config_file(flags.config_path),
                    flags.config_path);
  for (const auto& kv : flags.sets) apply_set(cfg, kv);
  if (flags.seed) cfg["seed"] = *flags.seed;
  if (flags.workers >= 0) cfg["workers"] = flags.workers;
  const int workers = cfg["workers"].get<int>();
  if (workers < 0) throw ConfigError("workers must be nonnegative");
  if (workers > 0) omp_set_num_threads(workers);
}

// Typed getters so type mistakes surface as config errors with field names.
double get_num(const json& cfg, const char* key) {
  if (!cfg.at(key).is_number())
    throw ConfigError(std::string("field '") + key + "' must be a number");
  return cfg[key].get<double>();
}

std::int64_t get_int(const json& cfg, const char* key) {
  if (!cfg.at(key).is_number_integer())
    throw ConfigError(std::string("field '") + key + "' must be an integer");
  return cfg[key].get<std::int64_t>();
}

std::uint64_t get_seed(const json& cfg, const char* key = "seed") {
  if (!cfg.at(key).is_number_integer() || cfg[key].get<std::int64_t>() < 0)
    throw ConfigError(std::string("field '") + key +
                      "' must be a nonnegative integer");
  return cfg[key].get<std::uint64_t>();
}

bool get_bool(const json& cfg, const char* key) {
  if (!cfg.at(key).is_boolean())
    throw ConfigError(std::string("field '") + key + "' must be a boolean");
  return cfg[key].get<bool>();
}

std::string get_str(const json& cfg, const char* key) {
  if (!cfg.at(key).is_string())
    throw ConfigError(std::string("field '") + key + "' must be a string");
  return cfg[key].get<std::string>();
}

std::vector<double> get_num_list(const json& cfg, const char* key) {
  if (!cfg.at(key).is_array())
    throw ConfigError(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  for (const auto& v : cfg[key]) {
    if (!v.is_number())
      throw ConfigError(std::string("field '") + key +
                        "' must hold numbers only");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<std::int64_t> get_int_list(const json& cfg, const char* key) {
  if (!cfg.at(key).is_array())
    throw ConfigError(std::string("field '") + key + "' must be an array");
  std::vector<std::int64_t> out;
  for (const auto& v : cfg[key]) {
    if (!v.is_number_integer())
      throw ConfigError(std::string("field '") + key +
                        "' must hold integers only");
    out.push_back(v.get<std::int64_t>());
  }
  return out;
}

void ensure_out_dir(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec)
    throw IoError("cannot create output directory " + out.string() + ": " +
                  ec.message());
}

// The worker count never changes results and the output directory is where
// the manifest itself lives, so both are kept out of the echoed config; the
// manifest stays byte-identical across worker counts and output locations.
void write_manifest(const std::filesystem::path& out_dir,
                    const std::string& command, json cfg,
                    const std::vector<std::string>& outputs) {
  cfg.erase("workers");
  cfg.erase("out");
  json manifest;
  manifest["format_version"] = kManifestFormatVersion;
  manifest["command"] = command;
  manifest["config"] = std::move(cfg);
  manifest["outputs"] = outputs;
  const auto path = out_dir / "manifest.json";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << manifest.dump(2) << '\n';
  if (!f) throw IoError("failed while writing " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2) << '\n';
  if (!f) throw IoError("failed while writing " + path.string());
}

// ---------------------------------------------------------------------------
// quartic-sweep
// ---------------------------------------------------------------------------

json quartic_sweep_defaults() {
  return json{{"mu", 1.5},
              {"zeta_min", 0.0},
              {"zeta_max", 3.0},
              {"n_zeta", 50},
              {"n_traj", 2000},
              {"dt", 0.0025},
              {"eps", 1e-15},
              {"checkpoints", json::array({0, 2500, 5000, 10000, 20000, 40000})},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

void run_quartic_sweep(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  const double mu = get_num(cfg, "mu");
  const double zeta_min = get_num(cfg, "zeta_min");
  const double zeta_max = get_num(cfg, "zeta_max");
  const std::int64_t n_zeta = get_int(cfg, "n_zeta");
  if (n_zeta < 1) throw ConfigError("n_zeta must be positive");
  if (zeta_max < zeta_min)
    throw ConfigError("zeta_max must not be below zeta_min");
  std::vector<double> zetas(static_cast<std::size_t>(n_zeta));
  for (std::int64_t i = 0; i < n_zeta; ++i)
    zetas[static_cast<std::size_t>(i)] =
        n_zeta == 1 ? zeta_min
                    : zeta_min + (zeta_max - zeta_min) *
                                     static_cast<double>(i) /
                                     static_cast<double>(n_zeta - 1);

  collapse::IntegratorConfig icfg;
  icfg.dt = get_num(cfg, "dt");
  icfg.seed = get_seed(cfg);
  icfg.validate();
  const std::int64_t n_traj = get_int(cfg, "n_traj");
  const double eps = get_num(cfg, "eps");
  const auto checkpoints = get_int_list(cfg, "checkpoints");

  const collapse::SweepResult sweep = collapse::zeta_sweep(
      mu, zetas, icfg, n_traj, eps, checkpoints);

  ensure_out_dir(out_dir);
  std::vector<std::string> header{"zeta"};
  for (std::int64_t c : checkpoints)
    header.push_back("p_collapse_" + std::to_string(c));
  header.push_back("divergent");
  collapse::CsvWriter csv(out_dir / "sweep.csv", header);
  for (std::size_t z = 0; z < zetas.size(); ++z) {
    std::vector<collapse::CsvCell> row{zetas[z]};
    for (std::size_t c = 0; c < checkpoints.size(); ++c)
      row.emplace_back(sweep.probability[c][z]);
    row.emplace_back(sweep.divergent_per_zeta[z]);
    csv.row(row);
  }
  csv.close();
  write_manifest(out_dir, "quartic-sweep", cfg, {"sweep.csv"});
}

// ---------------------------------------------------------------------------
// quartic-density
// ---------------------------------------------------------------------------

json quartic_density_defaults() {
  return json{{"mu", 1.5},    {"zeta", 1.0}, {"n_traj", 5000},
              {"t_final", 25.0}, {"dt", 0.0025}, {"n_bins", 40},
              {"lo", 0.0},    {"hi", 3.0},   {"seed", 0},
              {"out", ""},    {"workers", 0}};
}

void run_quartic_density(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  const collapse::QuarticParams params{get_num(cfg, "mu"),
                                       get_num(cfg, "zeta")};
  const double t_final = get_num(cfg, "t_final");
  if (t_final <= 0.0) throw ConfigError("t_final must be positive");
  collapse::IntegratorConfig icfg;
  icfg.dt = get_num(cfg, "dt");
  icfg.n_steps = static_cast<std::int64_t>(std::llround(t_final / icfg.dt));
  icfg.seed = get_seed(cfg);
  icfg.validate();
  const std::int64_t n_traj = get_int(cfg, "n_traj");
  if (n_traj < 1) throw ConfigError("n_traj must be positive");
  const auto n_bins = static_cast<int>(get_int(cfg, "n_bins"));
  const double lo = get_num(cfg, "lo");
  const double hi = get_num(cfg, "hi");
  if (!(hi > lo)) throw ConfigError("hi must exceed lo");

  const auto system = collapse::quartic_system(params);
  const auto init = collapse::InitSampler::gaussian(0.0, 2.0);
  const collapse::EnsembleResult ens =
      collapse::simulate_ensemble(system, init, icfg, n_traj);

  std::vector<double> samples;
  std::int64_t n_divergent = 0;
  for (std::int64_t i = 0; i < ens.n_traj; ++i) {
    if (ens.divergence_steps[static_cast<std::size_t>(i)] >= 0) {
      ++n_divergent;
      continue;
    }
    samples.push_back(std::abs(ens.final_values[static_cast<std::size_t>(i)]));
  }
  if (samples.empty()) throw collapse::DivergenceError(
      "every trajectory diverged; reduce dt or the noise level");

  const auto density = collapse::analytic_stationary_density(params);
  const collapse::Histogram hist =
      collapse::histogram(samples, n_bins, lo, hi);

  ensure_out_dir(out_dir);
  std::vector<std::string> header{"bin_lo", "bin_hi", "empirical_mass"};
  if (!density.collapsed) header.push_back("analytic_mass");
  collapse::CsvWriter csv(out_dir / "density.csv", header);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    const double a = lo + width * b;
    const double c = lo + width * (b + 1);
    std::vector<collapse::CsvCell> row{a, c,
                                       hist.mass[static_cast<std::size_t>(b)]};
    if (!density.collapsed)
      row.emplace_back(collapse::integrate(
                           [&](double th) { return density(th); }, a, c, 1e-10)
                           .value);
    csv.row(row);
  }
  csv.close();

  json summary;
  summary["format_version"] = 1;
  summary["n_samples"] = samples.size();
  summary["n_divergent"] = n_divergent;
  summary["mass_outside"] = hist.mass_outside;
  summary["collapsed_regime"] = density.collapsed;
  if (!density.collapsed) {
    summary["tv_distance"] = collapse::histogram_tv_distance(
        samples, n_bins, lo, hi, [&](double th) { return density(th); });
    summary["interior_mode"] =
        density.has_interior_mode() ? json(density.mode()) : json();
  }
  write_json_file(out_dir / "summary.json", summary);
  write_manifest(out_dir, "quartic-density", cfg,
                 {"density.csv", "summary.json"});
}

// ---------------------------------------------------------------------------
// teacher-student
// ---------------------------------------------------------------------------

json teacher_student_defaults() {
  return json{{"n", 64},
              {"m", 64},
              {"k", 8},
              {"sbar", json::array()},
              {"p", 1024},
              {"sigma_eps", 0.0},
              {"hidden_dim", -1},
              {"init_scale", 1e-4},
              {"zeta", 0.0},
              {"schedule",
               json::array({json{{"lr", 0.025}, {"steps", 5000},
                                 {"warmup_steps", 0}}})},
              {"record_stride", 100},
              {"replicates", 8},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

std::vector<collapse::SchedulePhase> parse_schedule(const json& cfg) {
  if (!cfg.at("schedule").is_array() || cfg["schedule"].empty())
    throw ConfigError("schedule must be a nonempty array of phases");
  std::vector<collapse::SchedulePhase> schedule;
  for (const auto& item : cfg["schedule"]) {
    if (!item.is_object())
      throw ConfigError("each schedule phase must be an object");
    for (const auto& [key, value] : item.items()) {
      (void)value;
      if (key != "lr" && key != "steps" && key != "warmup_steps")
        throw ConfigError("schedule phase: unknown field '" + key + "'");
    }
    collapse::SchedulePhase phase;
    phase.lr = item.contains("lr") ? get_num(item, "lr") : 0.0;
    phase.steps = item.contains("steps") ? get_int(item, "steps") : 0;
    phase.warmup_steps =
        item.contains("warmup_steps") ? get_int(item, "warmup_steps") : 0;
    schedule.push_back(phase);
  }
  return schedule;
}

void run_teacher_student(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  collapse::LrDropConfig lc;
  lc.n = get_int(cfg, "n");
  lc.m = get_int(cfg, "m");
  lc.k = get_int(cfg, "k");
  const auto sbar = get_num_list(cfg, "sbar");
  lc.sbar = Eigen::Map<const Eigen::VectorXd>(
      sbar.data(), static_cast<Eigen::Index>(sbar.size()));
  lc.p = get_int(cfg, "p");
  lc.sigma_eps = get_num(cfg, "sigma_eps");
  lc.hidden_dim = get_int(cfg, "hidden_dim");
  lc.init_scale = get_num(cfg, "init_scale");
  lc.zeta = get_num(cfg, "zeta");
  lc.schedule = parse_schedule(cfg);
  lc.record_stride = get_int(cfg, "record_stride");
  lc.replicates = static_cast<int>(get_int(cfg, "replicates"));
  lc.seed = get_seed(cfg);
  lc.validate();

  const collapse::LrDropResult result = collapse::lr_drop_experiment(lc);
  for (double v : result.mean_e_train)
    if (!std::isfinite(v))
      throw collapse::DivergenceError(
          "training error became non-finite; lower the learning rate");
  for (double v : result.mean_e_test)
    if (!std::isfinite(v))
      throw collapse::DivergenceError(
          "test error became non-finite; lower the learning rate");

  // Echo computed defaults so the manifest is fully resolved.
  {
    const Eigen::VectorXd resolved = lc.resolved_sbar();
    json arr = json::array();
    for (Eigen::Index i = 0; i < resolved.size(); ++i)
      arr.push_back(resolved(i));
    cfg["sbar"] = std::move(arr);
    cfg["hidden_dim"] =
        lc.hidden_dim < 0 ? std::min(lc.m, lc.n) : lc.hidden_dim;
  }

  ensure_out_dir(out_dir);
  {
    collapse::CsvWriter csv(out_dir / "curves.csv",
                            {"step", "mean_e_train", "mean_e_test"});
    for (std::size_t r = 0; r < result.record_steps.size(); ++r)
      csv.row({result.record_steps[r], result.mean_e_train[r],
               result.mean_e_test[r]});
    csv.close();
  }
  {
    const Eigen::Index r_modes = result.stilde_samples.cols();
    std::vector<std::string> header{"step"};
    for (Eigen::Index m = 0; m < r_modes; ++m)
      header.push_back("mode_" + std::to_string(m + 1));
    collapse::CsvWriter csv(out_dir / "modes.csv", header);
    std::vector<double> column(static_cast<std::size_t>(lc.replicates));
    for (std::size_t r = 0; r < result.record_steps.size(); ++r) {
      std::vector<collapse::CsvCell> row{result.record_steps[r]};
      for (Eigen::Index m = 0; m < r_modes; ++m) {
        for (int rep = 0; rep < lc.replicates; ++rep)
          column[static_cast<std::size_t>(rep)] =
              result.mode_curves[static_cast<std::size_t>(rep)](
                  static_cast<Eigen::Index>(r), m);
        row.emplace_back(collapse::median(column));
      }
      csv.row(row);
    }
    csv.close();
  }
  {
    json verdicts = json::array();
    for (std::size_t m = 0; m < result.phase1_verdicts.size(); ++m) {
      const auto& v = result.phase1_verdicts[m];
      json entry;
      entry["mode"] = m + 1;
      entry["stilde_median"] = v.params.stilde;
      entry["collapse_threshold"] = v.threshold;
      entry["collapsed"] = v.collapsed;
      entry["stationary_argmax"] = v.stationary_argmax;
      verdicts.push_back(std::move(entry));
    }
    json doc;
    doc["format_version"] = 1;
    doc["phase1_verdicts"] = std::move(verdicts);
    write_json_file(out_dir / "verdicts.json", doc);
  }
  write_manifest(out_dir, "teacher-student", cfg,
                 {"curves.csv", "modes.csv", "verdicts.json"});
}

// ---------------------------------------------------------------------------
// single-neuron
// ---------------------------------------------------------------------------

json single_neuron_defaults() {
  return json{{"xs", json::array()},
              {"ys", json::array()},
              {"activation", "tanh"},
              {"eta", 1.0},
              {"zeta", 0.0},
              {"init_radius", 0.1},
              {"dt", 0.001},
              {"steps", 100000},
              {"n_runs", 100},
              {"record_stride", 0},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

std::vector<std::int64_t> recorded_steps(std::int64_t steps,
                                         std::int64_t stride) {
  std::vector<std::int64_t> out{0};
  for (std::int64_t s = 1; s <= steps; ++s)
    if (s % stride == 0 || s == steps) out.push_back(s);
  return out;
}

void run_single_neuron(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  collapse::SingleNeuronConfig sc;
  sc.xs = get_num_list(cfg, "xs");
  sc.ys = get_num_list(cfg, "ys");
  sc.activation = collapse::activation_from_name(get_str(cfg, "activation"));
  sc.eta = get_num(cfg, "eta");
  sc.zeta = get_num(cfg, "zeta");
  sc.init_radius = get_num(cfg, "init_radius");
  sc.dt = get_num(cfg, "dt");
  sc.steps = get_int(cfg, "steps");
  sc.n_runs = static_cast<int>(get_int(cfg, "n_runs"));
  sc.record_stride = get_int(cfg, "record_stride");
  sc.seed = get_seed(cfg);
  sc.validate();

  const collapse::SingleNeuronResult result =
      collapse::single_neuron_experiment(sc);

  ensure_out_dir(out_dir);
  std::vector<std::string> outputs;
  {
    collapse::CsvWriter csv(out_dir / "final_norms.csv",
                            {"run", "final_norm", "divergent"});
    for (std::size_t r = 0; r < result.final_norms.size(); ++r)
      csv.row({static_cast<std::int64_t>(r), result.final_norms[r],
               static_cast<std::int64_t>(result.divergent[r])});
    csv.close();
    outputs.push_back("final_norms.csv");
  }
  if (sc.record_stride > 0) {
    const auto steps = recorded_steps(sc.steps, sc.record_stride);
    collapse::CsvWriter csv(out_dir / "curves.csv", {"run", "step", "norm"});
    for (std::size_t r = 0; r < result.norm_curves.size(); ++r) {
      const auto& curve = result.norm_curves[r];
      for (std::size_t i = 0; i < curve.size(); ++i)
        csv.row({static_cast<std::int64_t>(r),
                 steps[std::min(i, steps.size() - 1)], curve[i]});
    }
    csv.close();
    outputs.push_back("curves.csv");
  }
  {
    std::int64_t n_divergent = 0;
    for (auto d : result.divergent) n_divergent += d;
    json summary;
    summary["format_version"] = 1;
    summary["collapse_frequency"] = result.collapse_frequency;
    summary["signal"] = result.signal;
    summary["noise_term"] = result.noise_term;
    summary["noise_dominates"] = result.noise_term > result.signal;
    summary["n_divergent"] = n_divergent;
    write_json_file(out_dir / "summary.json", summary);
    outputs.push_back("summary.json");
  }
  write_manifest(out_dir, "single-neuron", cfg, outputs);
}

// ---------------------------------------------------------------------------
// two-neuron
// ---------------------------------------------------------------------------

json two_neuron_defaults() {
  return json{{"n_examples", 16},
              {"activation", "tanh"},
              {"lr", 0.4},
              {"noise_std", 6.0},
              {"init_scale", 1.0},
              {"steps", 30000},
              {"n_runs", 32},
              {"record_stride", 0},
              {"lrs", json::array()},
              {"noise_stds", json::array()},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

void run_two_neuron(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  collapse::TwoNeuronConfig tc;
  tc.n_examples = static_cast<int>(get_int(cfg, "n_examples"));
  tc.activation = collapse::activation_from_name(get_str(cfg, "activation"));
  tc.lr = get_num(cfg, "lr");
  tc.noise_std = get_num(cfg, "noise_std");
  tc.init_scale = get_num(cfg, "init_scale");
  tc.steps = get_int(cfg, "steps");
  tc.n_runs = static_cast<int>(get_int(cfg, "n_runs"));
  tc.record_stride = get_int(cfg, "record_stride");
  tc.seed = get_seed(cfg);

  const auto lrs = get_num_list(cfg, "lrs");
  const auto noise_stds = get_num_list(cfg, "noise_stds");
  if (lrs.empty() != noise_stds.empty())
    throw ConfigError("grid mode needs both lrs and noise_stds");

  ensure_out_dir(out_dir);
  std::vector<std::string> outputs;
  if (!lrs.empty()) {
    tc.validate();
    const collapse::TwoNeuronGridResult grid =
        collapse::two_neuron_grid(tc, lrs, noise_stds);
    collapse::CsvWriter csv(
        out_dir / "grid.csv",
        {"lr", "noise_std", "median_distance", "divergent_fraction"});
    for (std::size_t i = 0; i < lrs.size(); ++i)
      for (std::size_t j = 0; j < noise_stds.size(); ++j)
        csv.row({lrs[i], noise_stds[j],
                 grid.median_distance(static_cast<Eigen::Index>(i),
                                      static_cast<Eigen::Index>(j)),
                 grid.divergent_fraction(static_cast<Eigen::Index>(i),
                                         static_cast<Eigen::Index>(j))});
    csv.close();
    outputs.push_back("grid.csv");
  } else {
    tc.validate();
    const collapse::TwoNeuronResult result =
        collapse::two_neuron_experiment(tc);
    {
      collapse::CsvWriter csv(out_dir / "finals.csv",
                              {"run", "final_distance", "divergent"});
      for (std::size_t r = 0; r < result.final_distance.size(); ++r)
        csv.row({static_cast<std::int64_t>(r), result.final_distance[r],
                 static_cast<std::int64_t>(result.divergent[r])});
      csv.close();
      outputs.push_back("finals.csv");
    }
    if (tc.record_stride > 0) {
      const auto steps = recorded_steps(tc.steps, tc.record_stride);
      collapse::CsvWriter csv(out_dir / "curves.csv",
                              {"run", "step", "distance"});
      for (std::size_t r = 0; r < result.distance_curves.size(); ++r) {
        const auto& curve = result.distance_curves[r];
        for (std::size_t i = 0; i < curve.size(); ++i)
          csv.row({static_cast<std::int64_t>(r),
                   steps[std::min(i, steps.size() - 1)], curve[i]});
      }
      csv.close();
      outputs.push_back("curves.csv");
    }
    std::int64_t n_divergent = 0;
    for (auto d : result.divergent) n_divergent += d;
    json summary;
    summary["format_version"] = 1;
    summary["median_final_distance"] = result.median_final_distance;
    summary["n_divergent"] = n_divergent;
    write_json_file(out_dir / "summary.json", summary);
    outputs.push_back("summary.json");
  }
  write_manifest(out_dir, "two-neuron", cfg, outputs);
}

// ---------------------------------------------------------------------------
// mlp-train
// ---------------------------------------------------------------------------

json mlp_train_defaults() {
  return json{{"layer_dims", json::array({8, 16, 16, 4})},
              {"activation", "tanh"},
              {"residual_links", json::array()},
              {"allow_unsupported_activation", false},
              {"init_scale", 1.0},
              {"n_examples", 256},
              {"teacher_noise_std", 0.0},
              {"lr", 0.01},
              {"batch", 32},
              {"label_noise_std", 0.0},
              {"steps", 1000},
              {"loss_stride", 10},
              {"snapshot_stride", 0},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

collapse::MlpSpec parse_mlp_spec(const json& cfg) {
  collapse::MlpSpec spec;
  for (std::int64_t d : get_int_list(cfg, "layer_dims"))
    spec.layer_dims.push_back(static_cast<Eigen::Index>(d));
  spec.activation = collapse::activation_from_name(get_str(cfg, "activation"));
  spec.allow_unsupported_activation =
      get_bool(cfg, "allow_unsupported_activation");
  if (!cfg.at("residual_links").is_array())
    throw ConfigError("residual_links must be an array of [from, to] pairs");
  for (const auto& pair : cfg["residual_links"]) {
    if (!pair.is_array() || pair.size() != 2 ||
        !pair[0].is_number_integer() || !pair[1].is_number_integer())
      throw ConfigError("residual_links must be an array of [from, to] pairs");
    const std::int64_t from = pair[0].get<std::int64_t>();
    const std::int64_t to = pair[1].get<std::int64_t>();
    if (from < 0 || to < 0)
      throw ConfigError("residual link indices must be nonnegative");
    spec.residual_links.push_back({static_cast<std::size_t>(from),
                                   static_cast<std::size_t>(to)});
  }
  spec.validate();
  return spec;
}

void run_mlp_train(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  const collapse::MlpSpec spec = parse_mlp_spec(cfg);
  const double init_scale = get_num(cfg, "init_scale");
  const std::int64_t n_examples = get_int(cfg, "n_examples");
  if (n_examples < 1) throw ConfigError("n_examples must be positive");
  const double teacher_noise_std = get_num(cfg, "teacher_noise_std");
  if (teacher_noise_std < 0.0)
    throw ConfigError("teacher_noise_std must be nonnegative");

  collapse::TrainConfig tcfg;
  tcfg.lr = get_num(cfg, "lr");
  tcfg.batch = get_int(cfg, "batch");
  tcfg.label_noise_std = get_num(cfg, "label_noise_std");
  tcfg.steps = get_int(cfg, "steps");
  tcfg.loss_stride = get_int(cfg, "loss_stride");
  tcfg.snapshot_stride = get_int(cfg, "snapshot_stride");
  const std::uint64_t seed = get_seed(cfg);
  tcfg.seed = collapse::derive_stream_seed(seed, 2);
  tcfg.validate();

  // Synthetic task: Gaussian inputs through a random linear teacher with
  // optional output noise. Draw order is pinned: inputs, teacher, noise.
  collapse::Dataset data;
  {
    auto rng = collapse::Xoshiro256pp(collapse::derive_stream_seed(seed, 0));
    const Eigen::Index in = spec.input_dim();
    const Eigen::Index out = spec.output_dim();
    data.x.resize(in, n_examples);
    for (Eigen::Index j = 0; j < n_examples; ++j)
      for (Eigen::Index i = 0; i < in; ++i) data.x(i, j) = rng.normal();
    Eigen::MatrixXd teacher(out, in);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index j = 0; j < in; ++j)
      for (Eigen::Index i = 0; i < out; ++i) teacher(i, j) = sd * rng.normal();
    data.y = teacher * data.x;
    if (teacher_noise_std > 0.0)
      for (Eigen::Index j = 0; j < n_examples; ++j)
        for (Eigen::Index i = 0; i < out; ++i)
          data.y(i, j) += teacher_noise_std * rng.normal();
  }

  auto init_rng = collapse::Xoshiro256pp(collapse::derive_stream_seed(seed, 1));
  const collapse::MlpParams init =
      collapse::MlpParams::random_init(spec, init_scale, init_rng);

  const collapse::TrainResult result =
      collapse::sgd_train(spec, init, data, tcfg);
  if (result.divergent)
    throw collapse::DivergenceError(
        "training diverged at step " + std::to_string(result.divergence_step) +
        "; lower the learning rate");

  ensure_out_dir(out_dir);
  std::vector<std::string> outputs;
  {
    collapse::CsvWriter csv(out_dir / "loss.csv", {"step", "loss"});
    for (std::size_t i = 0; i < result.loss.size(); ++i)
      csv.row({result.loss_steps[i], result.loss[i]});
    csv.close();
    outputs.push_back("loss.csv");
  }
  collapse::export_snapshot(spec, result.final_params,
                            out_dir / "snapshot.json");
  outputs.push_back("snapshot.json");
  for (const auto& [step, params] : result.snapshots) {
    const std::string name = "snapshot_" + std::to_string(step) + ".json";
    collapse::export_snapshot(spec, params, out_dir / name);
    outputs.push_back(name);
  }
  {
    json summary;
    summary["format_version"] = 1;
    summary["final_loss"] = result.loss.back();
    summary["steps"] = tcfg.steps;
    write_json_file(out_dir / "summary.json", summary);
    outputs.push_back("summary.json");
  }
  write_manifest(out_dir, "mlp-train", cfg, outputs);
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

json detect_defaults() {
  return json{{"snapshot", ""},
              {"layers", json::array()},
              {"vanishing_frac", 0.1},
              {"cluster_threshold", 0.1},
              {"linkage", "complete"},
              {"include_bias", true},
              {"write_matrices", false},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

void run_detect(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  const std::string snapshot_path = get_str(cfg, "snapshot");
  if (snapshot_path.empty())
    throw ConfigError("detect needs a snapshot path");
  const collapse::WeightSnapshot snapshot =
      collapse::read_snapshot(snapshot_path);

  collapse::AnalyzeOptions opts;
  opts.vanishing_frac = get_num(cfg, "vanishing_frac");
  opts.cluster_threshold = get_num(cfg, "cluster_threshold");
  opts.linkage = collapse::linkage_from_name(get_str(cfg, "linkage"));
  opts.include_bias = get_bool(cfg, "include_bias");
  const bool write_matrices = get_bool(cfg, "write_matrices");

  std::vector<std::string> layers;
  if (cfg.at("layers").is_array() && !cfg["layers"].empty()) {
    for (const auto& l : cfg["layers"]) {
      if (!l.is_string())
        throw ConfigError("layers must be an array of layer names");
      layers.push_back(l.get<std::string>());
    }
  } else {
    // Default to every layer that still has outgoing weights.
    for (std::size_t i = 0; i + 1 < snapshot.layers.size(); ++i)
      layers.push_back(snapshot.layers[i].name);
  }

  ensure_out_dir(out_dir);
  std::vector<std::string> outputs;
  json report;
  report["format_version"] = 1;
  report["snapshot"] = snapshot_path;
  report["layers"] = json::array();
  for (const std::string& name : layers) {
    const collapse::LayerAnalysis analysis =
        collapse::analyze_layer(snapshot, name, opts);

    collapse::PairwiseOptions pw;
    pw.include_bias = opts.include_bias;
    pw.which = collapse::DistanceBasis::incoming;
    const collapse::DistanceMatrix incoming =
        collapse::pairwise_matrix(snapshot, name, pw);
    const Eigen::Index cut =
        std::max<Eigen::Index>(1, analysis.clusters.n_independent);
    const collapse::HeatmapOrder order = collapse::heatmap_order(
        incoming, std::min(cut, incoming.n()), opts.linkage);

    json entry;
    entry["name"] = name;
    entry["n_total"] = analysis.clusters.n_total;
    entry["n_vanishing"] = analysis.clusters.n_vanishing;
    entry["vanishing"] = analysis.vanishing;
    entry["kept"] = analysis.kept;
    entry["labels"] = analysis.clusters.labels;
    entry["n_independent"] = analysis.clusters.n_independent;
    entry["fraction_independent"] = analysis.clusters.fraction_independent;
    entry["heatmap_order"] = order.order;
    try {
      const std::size_t li = snapshot.index_of(name);
      entry["effective_rank"] =
          collapse::effective_rank(snapshot.layers[li].incoming).rho;
    } catch (const ConfigError&) {
      entry["effective_rank"] = nullptr;  // zero weight matrix
    }
    report["layers"].push_back(std::move(entry));

    if (write_matrices) {
      pw.which = collapse::DistanceBasis::outgoing;
      const collapse::DistanceMatrix outgoing =
          collapse::pairwise_matrix(snapshot, name, pw);
      const auto write_matrix = [&](const collapse::DistanceMatrix& m,
                                    const std::string& tag) {
        const collapse::DistanceMatrix ordered =
            collapse::apply_order(m, order.order);
        std::vector<std::string> header;
        for (Eigen::Index i : order.order)
          header.push_back("n" + std::to_string(i));
        const std::string fname = "distances_" + name + "_" + tag + ".csv";
        collapse::CsvWriter csv(out_dir / fname, header);
        for (Eigen::Index i = 0; i < ordered.n(); ++i) {
          std::vector<collapse::CsvCell> row;
          for (Eigen::Index j = 0; j < ordered.n(); ++j)
            row.emplace_back(ordered.entries(i, j));
          csv.row(row);
        }
        csv.close();
        outputs.push_back(fname);
      };
      write_matrix(incoming, "incoming");
      write_matrix(outgoing, "outgoing");
    }
  }
  write_json_file(out_dir / "report.json", report);
  outputs.insert(outputs.begin(), "report.json");
  write_manifest(out_dir, "detect", cfg, outputs);
}

// ---------------------------------------------------------------------------
// attractivity-check
// ---------------------------------------------------------------------------

json attractivity_defaults() {
  return json{{"loss_curv", nullptr},
              {"diff_curv", nullptr},
              {"tol", 1e-9},
              {"xs", json::array()},
              {"ys", json::array()},
              {"activation", "tanh"},
              {"eta", 1.0},
              {"zeta", 0.0},
              {"seed", 0},
              {"out", ""},
              {"workers", 0}};
}

void run_attractivity_check(json cfg, const CommonFlags& flags) {
  finish_common(cfg, flags);
  const auto out_dir = resolve_out(cfg, flags);

  const bool has_curvature =
      !cfg["loss_curv"].is_null() || !cfg["diff_curv"].is_null();
  const auto xs = get_num_list(cfg, "xs");
  const auto ys = get_num_list(cfg, "ys");
  const bool has_neuron = !xs.empty();
  if (!has_curvature && !has_neuron)
    throw ConfigError(
        "provide loss_curv/diff_curv, a dataset (xs, ys), or both");

  json report;
  report["format_version"] = 1;
  if (has_curvature) {
    if (cfg["loss_curv"].is_null() || cfg["diff_curv"].is_null())
      throw ConfigError("loss_curv and diff_curv must be given together");
    const collapse::CurvatureReport curv = collapse::rate_of_attractivity(
        get_num(cfg, "loss_curv"), get_num(cfg, "diff_curv"),
        get_num(cfg, "tol"));
    json entry;
    entry["loss_curv"] = curv.loss_curv;
    entry["diff_curv"] = curv.diff_curv;
    entry["alpha"] = curv.alpha;
    entry["verdict"] = collapse::to_string(curv.verdict);
    report["curvature"] = std::move(entry);
  }
  if (has_neuron) {
    collapse::SingleNeuronData data;
    data.xs = xs;
    data.ys = ys;
    data.sigma_prime0 = std::abs(collapse::activate_grad(
        collapse::activation_from_name(get_str(cfg, "activation")), 0.0));
    data.eta = get_num(cfg, "eta");
    data.zeta = get_num(cfg, "zeta");
    const collapse::SingleNeuronThreshold th =
        collapse::single_neuron_threshold(data);
    json entry;
    entry["signal"] = th.signal;
    entry["noise_term"] = th.noise_term;
    entry["attractive"] = th.attractive;
    report["single_neuron"] = std::move(entry);
  }
  ensure_out_dir(out_dir);
  write_json_file(out_dir / "report.json", report);
  write_manifest(out_dir, "attractivity-check", cfg, {"report.json"});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic-collapse experiment runner"};
  app.require_subcommand(1);

  CommonFlags flags;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", flags.config_path,
                    "JSON config file (strict fields)");
    sub->add_option("--set", flags.sets,
                    "key=value override, applied after the config file");
    sub->add_option("-o,--out", flags.out, "output directory");
    sub->add_option("--seed", flags.seed, "master seed override");
    sub->add_option("--workers", flags.workers,
                    "worker thread count (never changes results)");
  };

  using Runner = std::function<void(json, const CommonFlags&)>;
  std::map<std::string, std::pair<json, Runner>> commands;
  commands["quartic-sweep"] = {quartic_sweep_defaults(), run_quartic_sweep};
  commands["quartic-density"] = {quartic_density_defaults(),
                                 run_quartic_density};
  commands["teacher-student"] = {teacher_student_defaults(),
                                 run_teacher_student};
  commands["single-neuron"] = {single_neuron_defaults(), run_single_neuron};
  commands["two-neuron"] = {two_neuron_defaults(), run_two_neuron};
  commands["mlp-train"] = {mlp_train_defaults(), run_mlp_train};
  commands["detect"] = {detect_defaults(), run_detect};
  commands["attractivity-check"] = {attractivity_defaults(),
                                    run_attractivity_check};

  add_common(app.add_subcommand("quartic-sweep",
                                "collapse probability over a noise grid"));
  add_common(app.add_subcommand(
      "quartic-density", "terminal |theta| histogram vs the analytic law"));
  add_common(app.add_subcommand(
      "teacher-student", "matrix student with a learning-rate schedule"));
  add_common(app.add_subcommand("single-neuron",
                                "one-neuron collapse frequency experiment"));
  add_common(app.add_subcommand("two-neuron",
                                "two-neuron merging experiment or grid"));
  add_common(
      app.add_subcommand("mlp-train", "train a small MLP with label noise"));
  add_common(app.add_subcommand("detect",
                                "independent-neuron analysis of a snapshot"));
  add_common(app.add_subcommand("attractivity-check",
                                "curvature and threshold verdicts"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ConfigError::exit_code;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const auto& [defaults, runner] = commands.at(name);
    runner(defaults, flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ConfigError::exit_code;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return IoError::exit_code;
  } catch (const collapse::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return collapse::DivergenceError::exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
