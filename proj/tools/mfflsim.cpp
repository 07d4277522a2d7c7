#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "mffl/scenarios.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mean-field federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  auto* run = app.add_subcommand("run", "run one scenario from a config file");
  run->add_option("config", config_path, "path to the scenario config")->required();
  auto* seed_opt = run->add_option("--seed", seed, "override the master seed");
  auto* out_opt = run->add_option("--out", out_dir, "override the output directory");
  auto* threads_opt = run->add_option("--threads", threads, "worker thread count");

  std::string report_dir;
  std::string summary_path = "report.json";
  auto* report = app.add_subcommand("report", "aggregate manifests under a directory");
  report->add_option("dir", report_dir, "directory to scan for manifest.json files")
      ->required();
  report->add_option("--summary", summary_path, "where to write the JSON summary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      mffl::RunOverrides overrides;
      if (*seed_opt) overrides.seed = seed;
      if (*out_opt) overrides.out_dir = out_dir;
      if (*threads_opt) overrides.threads = threads;
      const mffl::RunManifest manifest = mffl::run_scenario(config_path, overrides);
      for (const auto& check : manifest.checks)
        std::cout << (check.pass ? "[PASS] " : "[FAIL] ") << manifest.scenario << ": "
                  << check.name << (check.detail.empty() ? "" : " (" + check.detail + ")")
                  << '\n';
      return manifest.exit_status();
    }
    const auto manifests = mffl::find_manifests(report_dir);
    if (manifests.empty()) {
      std::cerr << "no manifest.json files under " << report_dir << '\n';
      return 1;
    }
    const mffl::ReportSummary summary = mffl::emit_report(manifests, summary_path);
    std::cout << summary.table;
    return summary.checks_failed == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
