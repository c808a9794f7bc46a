// Command-line front end: run, compare, check.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steinlab/check.hpp"
#include "steinlab/errors.hpp"
#include "steinlab/fixtures.hpp"
#include "steinlab/harness.hpp"
#include "steinlab/report.hpp"
#include "steinlab/serialization.hpp"

namespace fs = std::filesystem;
using namespace steinlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitInvariant = 3;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string config_error_message(const fs::path& file, const ConfigError& e) {
  std::string msg = file.string() + ": ";
  if (!e.field().empty()) msg += "field " + e.field() + ": ";
  return msg + e.message();
}

/// --seed beats STEIN_SEED, which beats the config's own seed.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv("STEIN_SEED"); env && *env) {
    std::uint64_t value = 0;
    std::istringstream in(env);
    if (!(in >> value) || !in.eof()) {
      throw ConfigError("STEIN_SEED", "must be a non-negative integer");
    }
    return value;
  }
  return config_seed;
}

int cmd_run(const fs::path& config_path, std::optional<std::uint64_t> seed_flag,
            const fs::path& out_dir) {
  ExperimentConfig cfg = [&] {
    try {
      return load_config(config_path);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << config_error_message(config_path, e) << '\n';
      throw;
    }
  }();
  cfg.seed = resolve_seed(seed_flag, cfg.seed);

  const Trajectory traj = run_distillation(cfg);
  const bool diverged = traj.status == RunStatus::diverged;
  const int exit_code = diverged ? kExitDiverged : kExitOk;

  fs::create_directories(out_dir);
  std::ostringstream csv;
  write_trajectory_csv(csv, traj);
  write_file(out_dir / "trajectory.csv", csv.str());

  Json checkpoint;
  checkpoint["status"] = diverged ? "diverged" : "ok";
  checkpoint["steps_completed"] = traj.steps_completed;
  checkpoint["theta"] = vector_to_json(traj.final_theta);
  checkpoint["mu"] = vector_to_json(traj.final_mu);
  write_file(out_dir / "checkpoint.json", checkpoint.dump(2) + "\n");

  Json manifest;
  manifest["config_path"] = config_path.string();
  manifest["seed"] = cfg.seed;
  manifest["output_dir"] = out_dir.string();
  manifest["artifacts"] = {"trajectory.csv", "checkpoint.json", "manifest.json"};
  manifest["exit_status"] = exit_code;
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  const TrajectoryRecord& last = traj.records.back();
  std::cout << cfg.name << " seed " << cfg.seed << ": " << traj.steps_completed << " steps, kl "
            << format_number(last.kl);
  if (diverged) std::cout << " (diverged: |theta| exceeded the guard)";
  std::cout << "\nwrote " << out_dir.string() << '\n';
  return exit_code;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw CLI::ValidationError("--seeds", "bad seed '" + item + "'");
    seeds.push_back(v);
  }
  return seeds;
}

int cmd_compare(const fs::path& dir, const std::string& seeds_text, std::size_t jobs,
                const fs::path& out_dir) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) {
    std::cerr << "compare needs at least two *.json configs in " << dir.string() << '\n';
    return kExitConfig;
  }

  std::vector<ExperimentConfig> configs;
  for (const auto& f : files) {
    try {
      configs.push_back(load_config(f));
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << config_error_message(f, e) << '\n';
      return kExitConfig;
    }
    if (configs.back().name.empty()) configs.back().name = f.stem().string();
  }
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (!same_fixture(configs.front(), configs[i])) {
      std::cerr << "fixture mismatch: " << files[i].string() << " does not share target, renderer "
                << "and schedule with " << files.front().string() << '\n';
      return kExitConfig;
    }
  }

  std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
  if (seeds.empty()) seeds = {1, 2, 3, 4, 5};

  CompareOptions options;
  options.jobs = jobs;
  const ComparisonTable table = compare_estimators(configs, seeds, options);

  fs::create_directories(out_dir / "curves");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const fs::path run_dir = out_dir / "runs" / row.name / ("seed_" + std::to_string(row.seed));
    fs::create_directories(run_dir);
    std::ostringstream csv;
    write_trajectory_csv(csv, table.trajectories[i]);
    write_file(run_dir / "trajectory.csv", csv.str());
  }
  for (const auto& s : table.summaries) {
    std::ostringstream csv;
    write_curve_csv(csv, s.curve);
    write_file(out_dir / "curves" / (s.name + ".csv"), csv.str());
  }
  std::ostringstream runs, summary;
  write_runs_csv(runs, table);
  write_summary_csv(summary, table);
  write_file(out_dir / "runs.csv", runs.str());
  write_file(out_dir / "summary.csv", summary.str());
  write_file(out_dir / "kl.svg", render_comparison_chart(table, CurveMetric::kl));
  write_file(out_dir / "var_total.svg", render_comparison_chart(table, CurveMetric::var_total));

  std::cout << "kl threshold " << format_number(table.kl_threshold) << '\n';
  for (const auto& s : table.summaries) {
    std::cout << s.name << ": reached " << s.reached << "/" << s.final_kl.count
              << ", final kl " << format_number(s.final_kl.mean) << ", mean var_total "
              << format_number(s.mean_total_variance.mean) << '\n';
  }
  std::cout << "wrote " << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_check(const std::string& level, const std::string& fault) {
  CheckOptions options;
  options.level = level == "full" ? CheckLevel::full : CheckLevel::fast;
  options.inject_stein_sign_fault = fault == "stein-sign";
  const CheckReport report = run_checks(options, [](const InvariantResult& r) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.module << '/' << r.name << "  (" << r.detail
              << ")\n"
              << std::flush;
  });
  long failed = 0;
  for (const auto& r : report.results) failed += r.passed ? 0 : 1;
  std::cout << report.results.size() - static_cast<std::size_t>(failed) << '/'
            << report.results.size() << " invariants passed in " << report.seconds << " s\n";
  if (report.seconds > 600.0) {
    std::cerr << "warning: check took longer than the 10 minute budget\n";
  }
  return report.all_passed() ? kExitOk : kExitInvariant;
}

int cmd_export_fixtures(const fs::path& dir) {
  fs::create_directories(dir);
  struct Entry {
    const char* folder;
    ExperimentConfig (*make)(EstimatorKind);
  };
  for (const Entry& e : {Entry{"gaussian", &gaussian_fixture},
                         Entry{"wide_gaussian", &wide_gaussian_fixture},
                         Entry{"mixture", &mixture_fixture}}) {
    fs::create_directories(dir / e.folder);
    for (auto kind : {EstimatorKind::sds, EstimatorKind::ssd}) {
      write_file(dir / e.folder / (std::string(to_string(kind)) + ".json"),
                 to_json(e.make(kind)).dump(2) + "\n");
    }
  }
  std::cout << "wrote " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score distillation estimator laboratory"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one distillation experiment");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_out = "out";
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Override the seed (beats STEIN_SEED and the config)");
  run->add_option("--out", run_out, "Output directory")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "Compare the configs in a directory across seeds");
  std::string compare_dir;
  std::string seeds_text;
  std::size_t jobs = 1;
  std::string compare_out = "compare_out";
  compare->add_option("dir", compare_dir, "Directory of *.json configs sharing one fixture")->required();
  compare->add_option("--seeds", seeds_text, "Comma-separated seeds (default 1,2,3,4,5)");
  compare->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber)->capture_default_str();
  compare->add_option("--out", compare_out, "Output directory")->capture_default_str();

  auto* check = app.add_subcommand("check", "Run the invariant suites");
  std::string level = "fast";
  std::string fault;
  check->add_option("--level", level, "fast (10^3 draws) or full (10^5 draws)")
      ->check(CLI::IsMember({"fast", "full"}))
      ->capture_default_str();
  check->add_option("--inject-fault", fault, "Test hook")->check(CLI::IsMember({"stein-sign"}))->group("");

  auto* export_fixtures = app.add_subcommand("export-fixtures", "Write the shipped fixture configs");
  export_fixtures->group("");
  std::string export_dir = "configs";
  export_fixtures->add_option("dir", export_dir, "Target directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seed, run_out);
    if (*compare) return cmd_compare(compare_dir, seeds_text, jobs, compare_out);
    if (*check) return cmd_check(level, fault);
    if (*export_fixtures) return cmd_export_fixtures(export_dir);
  } catch (const ConfigError& e) {
    if (*run && e.field() == "STEIN_SEED") std::cerr << "config error: STEIN_SEED " << e.what() << '\n';
    return kExitConfig;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
