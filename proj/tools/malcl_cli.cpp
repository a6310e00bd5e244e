// Command-line front end: generate a synthetic stream, run a strategy with
// k-fold cross validation, and render reports from finished runs.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "malcl/harness.hpp"
#include "malcl/io.hpp"
#include "malcl/synthgen.hpp"

namespace fs = std::filesystem;
using namespace malcl;

namespace {

// MALCL_VERBOSITY: 0 errors only, 1 progress (default).
int verbosity() {
  const char* v = std::getenv("MALCL_VERBOSITY");
  if (!v || !*v) return 1;
  return std::atoi(v);
}

void info(const std::string& s) {
  if (verbosity() >= 1) std::cerr << s << '\n';
}

int cmd_generate(int sites, std::uint64_t seed, int scale, const fs::path& out, bool force) {
  if (sites < 1 || sites > 5) throw CLI::ValidationError("--sites", "must lie in [1, 5]");
  if (fs::exists(out) && fs::is_directory(out) && fs::directory_iterator(out) != fs::directory_iterator()) {
    if (!force) throw CLI::ValidationError("--out", out.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  auto profiles = default_profiles(scale, seed);
  profiles.resize(static_cast<std::size_t>(sites));
  GenerationReport report;
  TaskStream stream;
  for (const auto& p : profiles) {
    info("generating site " + p.site_id);
    stream.tasks.push_back(generate_site(p, &report));
  }
  stream.validate();
  io::write_stream(out, stream);
  io::write_text(out / "generation_report.csv", report.to_csv());
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning benchmark for malaria thin-smear detection"};
  app.require_subcommand(1);

  int sites = 5, scale = 4;
  std::uint64_t seed = 0;
  std::string out, data;
  bool force = false;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic multi-site dataset");
  gen->add_option("--sites", sites, "Number of sites (1-5)")->capture_default_str();
  gen->add_option("--seed", seed, "Master seed")->capture_default_str();
  gen->add_option("--scale", scale, "Divide the reference site sizes by this factor")->capture_default_str();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  harness::ExperimentConfig cfg;
  std::optional<double> lambda;
  std::optional<std::size_t> stop_after;
  bool resume = false, run_force = false;
  std::string run_out;
  auto* run = app.add_subcommand("run", "Run one strategy with patient-grouped k-fold cross validation");
  run->add_option("--data", cfg.data, "Dataset directory")->required();
  run->add_option("--out", run_out, "Run output directory")->required();
  run->add_option("--strategy", cfg.strategy, "baseline|joint|ewc|lwf|replay-naive|replay-conf")->required();
  run->add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
  run->add_option("--folds", cfg.folds, "Number of folds")->capture_default_str();
  run->add_option("--epochs", cfg.epochs, "Maximum epochs per task")->capture_default_str();
  run->add_option("--patience", cfg.patience, "Early stopping patience")->capture_default_str();
  run->add_option("--lambda", lambda, "Regularization weight (EWC default 10, LWF default 1)");
  run->add_option("--buffer-cap", cfg.buffer_cap, "Replay images per site at most")->capture_default_str();
  run->add_option("--buffer-pos-frac", cfg.buffer_pos_frac, "Target positive fraction")->capture_default_str();
  run->add_option("--buffer-site-frac", cfg.buffer_site_frac, "Max fraction of a site's train set")
      ->capture_default_str();
  run->add_option("--iou-tau", cfg.iou_tau, "IoU threshold for merging and matching")->capture_default_str();
  run->add_option("--conf-threshold", cfg.conf_threshold, "Detection confidence threshold")->capture_default_str();
  run->add_option("--random-baseline-runs", cfg.random_baseline_runs, "Random pipelines per task for FWT")
      ->capture_default_str();
  run->add_flag("--resume", resume, "Reuse completed tasks in the output directory");
  run->add_flag("--force", run_force, "Discard an existing run in the output directory");
  run->add_option("--stop-after-task", stop_after, "Stop once this task (1-based) has been trained");

  std::vector<std::string> runs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Summarize finished runs");
  rep->add_option("runs", runs, "Run directories")->required();
  rep->add_option("--out", report_out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(sites, seed, scale, out, force);
    if (run->parsed()) {
      const auto strategy = parse_strategy(cfg.strategy);
      if (!strategy) {
        try {
          cfg.parsed_strategy();
        } catch (const Error& e) {
          std::cerr << "error: " << e.what() << '\n';
        }
        return 1;
      }
      if (lambda && !uses_lambda(*strategy))
        std::cerr << "warning: --lambda is ignored for strategy " << cfg.strategy << '\n';
      else
        cfg.lambda = lambda;
      try {
        cfg.validate();
      } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
      }
      harness::RunOptions opt;
      opt.resume = resume;
      opt.force = run_force;
      opt.stop_after_task = stop_after;
      opt.progress = [](const std::string& s) { info(s); };
      const auto outcome = harness::run_experiment(cfg, run_out, opt);
      std::cerr << outcome.message << '\n';
      if (outcome.complete && verbosity() >= 1) std::cout << io::read_text(fs::path(run_out) / "summary.csv");
      return 0;
    }
    if (rep->parsed()) {
      std::vector<fs::path> paths(runs.begin(), runs.end());
      harness::write_report(paths, report_out);
      std::cout << io::read_text(fs::path(report_out) / "table.txt");
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
