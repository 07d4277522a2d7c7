#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mffl/config.hpp"

namespace mffl {

inline constexpr const char* kToolVersion = "0.1.0";

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct RunManifest {
  std::string scenario;
  std::string config_hash;
  std::string tool_version = kToolVersion;
  double wall_clock_seconds = 0.0;
  std::vector<std::string> files;  // relative to the output directory
  std::vector<CheckResult> checks;
  bool require_convergence = false;

  bool all_passed() const;
  // Exit contract: nonzero only when convergence was demanded and missed.
  int exit_status() const;
};

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
};

// Executes the scenario named in [run].scenario, writes its artifacts and
// manifest.json under the output directory, and returns the manifest.
RunManifest run_scenario(const std::filesystem::path& config_path,
                         const RunOverrides& overrides = {});
RunManifest run_scenario_config(ParsedConfig config, const RunOverrides& overrides = {});

// Aggregates manifest.json files into one summary (JSON + table).
struct ReportSummary {
  int scenarios = 0;
  int checks_passed = 0;
  int checks_failed = 0;
  std::string table;  // human-readable
};

ReportSummary emit_report(const std::vector<std::filesystem::path>& manifest_files,
                          const std::filesystem::path& summary_path);
std::vector<std::filesystem::path> find_manifests(const std::filesystem::path& dir);

}  // namespace mffl
