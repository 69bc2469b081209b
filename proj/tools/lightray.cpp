#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lightray/experiments.hpp"
#include "lightray/parallel.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitTolerance = 2;
constexpr int kExitUsage = 64;

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

lightray::Json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot read config file " + path);
  try {
    return lightray::Json::parse(in);
  } catch (const lightray::Json::parse_error& e) {
    throw LoadError(path + ": JSON parse error: " + e.what());
  }
}

int report_diagnostics(const std::vector<std::string>& diags) {
  for (const auto& d : diags) std::cerr << "error: " << d << '\n';
  return diags.empty() ? kExitOk : kExitUsage;
}

int cmd_validate(const std::string& path) {
  const auto cfg = load_config(path);
  const auto parsed = lightray::process_config(cfg, false);
  if (parsed.diagnostics.empty()) std::cout << path << ": ok (" << parsed.kind << ")\n";
  return report_diagnostics(parsed.diagnostics);
}

int cmd_run(const std::string& path, const std::string& out_dir, std::optional<std::uint64_t> seed, bool quiet) {
  const auto cfg = load_config(path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto parsed = lightray::process_config(cfg, true, seed, lightray::default_worker_count());
  if (!parsed.diagnostics.empty()) return report_diagnostics(parsed.diagnostics);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& res = *parsed.result;
  const auto hash = lightray::config_hash(cfg, seed);
  const auto paths = lightray::write_outputs(res, out_dir, hash, wall, parsed.seed, cfg);
  if (!quiet) {
    for (const auto& c : res.checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " = " << lightray::format_double(c.value) << ' '
                << c.relation << ' ' << lightray::format_double(c.threshold) << '\n';
    }
    std::cout << "wrote " << paths.csv.string() << '\n' << "wrote " << paths.json.string() << '\n';
  }
  return res.passed() ? kExitOk : kExitTolerance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Broken light ray transforms and wave interaction experiments"};
  app.set_version_flag("--version", std::string(LIGHTRAY_VERSION));
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run an experiment config and write <kind>_<hash>.csv/json");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seed", seed, "Override the config seed");
  run->add_flag("--quiet", quiet, "Suppress the per-check report");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a config against the schema and invariants");
  validate->add_option("config", validate_path, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(config, out_dir, seed, quiet);
    return cmd_validate(validate_path);
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const lightray::InvalidGrid& e) {
    std::cerr << "error: invalid grid: " << e.what() << '\n';
    return kExitError;
  } catch (const lightray::Divergence& e) {
    std::cerr << "error: divergence: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}
