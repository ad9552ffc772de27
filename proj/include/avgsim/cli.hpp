#pragma once

// Command-line front end: the experiment config document, the subcommands
// and their artifacts (results.json, tables/*.csv, paths/*.bin, manifest.json).
//
// Config format: a TOML subset. `[section]` headers, `key = value` lines,
// `#` comments; values are numbers, booleans, double-quoted strings or
// single-line arrays of those. Top-level keys precede the first section.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avgsim/average.hpp"
#include "avgsim/coeffs.hpp"
#include "avgsim/harness.hpp"
#include "avgsim/integrate.hpp"

namespace avgsim::cli {

struct PlanSection {
  std::string theorem = "T1";
  std::vector<double> eps_list{0.1, 0.02, 0.004};
  std::size_t mc_paths = 200;
  double horizon = 1.0;
  double moment_p = 1.0;
  double epsilon = 0.01;  // single-eps commands (simulate, khasminskii)
  std::vector<double> delta_list{0.2, 0.05, 0.0125};
  double bohr_T = 200.0;
  double bohr_quad_step = 0.02;
  std::vector<double> bohr_anchors{0.0, 50.0};
  double x_amplitude = 1.0;
  double y_amplitude = 0.0;
  double t_anchor = 0.0;  // measure
  std::size_t check_samples = 10000;
  double check_scale = 1.0;
  std::vector<double> ap_taus{6.283185307179586};
  std::vector<double> ap_anchors{0.0, 1.0};
  std::size_t ap_M = 4000;
  double epsilon_ap = 0.02;  // coefficient translation scan
  double ap_threshold = 0.002;  // measure diagnostic
  double ap_scan_tau_max = 600.0;
  double ap_scan_tau_step = 0.01;
  double ap_scan_probe_max = 200.0;
  double ap_scan_probe_step = 0.1;
  double ap_scan_window = 60.0;

  friend bool operator==(const PlanSection&, const PlanSection&) = default;
};

struct OutputSection {
  std::string directory = "avgsim-out";
  bool write_paths = false;
  bool csv = true;
  friend bool operator==(const OutputSection&, const OutputSection&) = default;
};

struct RunConfig {
  std::uint64_t seed_base = 1;
  ExampleSystem system;
  SpacesConfig spaces;
  IntegratorConfig integrator;
  ProviderOptions provider;
  PlanSection plan;
  OutputSection output;

  ExperimentPlan to_plan() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ParseError on syntax, InvalidArgument on unknown keys or bad values,
/// ConfigurationRejected on model inequalities; messages carry the field path.
RunConfig parse_config(std::string_view text);
RunConfig parse_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
/// Re-checks every cross-field constraint, including building the system.
void validate_config(const RunConfig& cfg);

std::size_t levenshtein(std::string_view a, std::string_view b);
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

inline constexpr int kExitPass = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInconclusive = 2;

const std::vector<std::string>& command_names();

struct Flags {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
  bool verify = false;
};

/// Runs one subcommand and returns its exit status. Never throws.
int run(const Flags& flags, std::ostream& out, std::ostream& err);

/// Recomputes the hash of every file listed in dir/manifest.json.
bool verify_manifest(const std::string& dir, std::ostream& err);

std::string tool_version();

}  // namespace avgsim::cli
