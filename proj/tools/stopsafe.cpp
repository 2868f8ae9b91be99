// stopsafe: command-line driver for the stop-sign safety pipeline.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "stopsafe/config.hpp"
#include "stopsafe/error.hpp"
#include "stopsafe/exec.hpp"
#include "stopsafe/pipeline.hpp"
#include "stopsafe/simgen.hpp"
#include "stopsafe/verify.hpp"

namespace fs = std::filesystem;
using namespace stopsafe;

namespace {

struct Globals {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

int cmd_simulate(const Globals& g) {
  auto ctx = pipeline::make_context(g.config, std::nullopt, g.seed);
  std::string dir = g.out.value_or("simulated");
  auto cohort = sim::simulate_cohort(ctx.cfg.simulation);
  sim::write_cohort(cohort, dir);
  // A config next to the files so `run --config DIR/config.json` works.
  RunConfig c = ctx.cfg;
  c.inputs = InputPaths{};
  c.output_dir = "out";
  c.seed = c.simulation.seed;
  save_run_config(c, (fs::path(dir) / "config.json").string());
  std::cout << "simulate: " << cohort.roster.size() << " participants, " << cohort.trips.size() << " trips, "
            << cohort.truth.events.size() << " events (seed " << c.simulation.seed << ") -> " << dir << '\n';
  return 0;
}

int cmd_verify(const std::string& perturb) {
  auto checks = verify::run_checks(perturb);
  int failed = 0;
  for (const auto& c : checks) {
    std::cout << verify::format_check(c) << '\n';
    failed += !c.passed;
  }
  std::cout << (checks.size() - failed) << '/' << checks.size() << " checks passed\n";
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stop-sign safety analysis: site clustering, stop extraction, covariates and mixed models"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");
  app.add_option("--seed", g.seed, "Seed (overrides the config)");
  app.add_option("--threads", g.threads, "Thread cap; default all cores")->check(CLI::NonNegativeNumber);

  struct StageCmd {
    const char* name;
    pipeline::Stage stage;
    const char* help;
  };
  const StageCmd stages[] = {
      {"ingest", pipeline::Stage::Ingest, "Parse and validate the six input files"},
      {"geolocate", pipeline::Stage::Geolocate, "Cluster stop-sign sites -> sites.geojson"},
      {"extract-stops", pipeline::Stage::ExtractStops, "Classify approaches -> events.csv, funnel.json"},
      {"metrics", pipeline::Stage::Metrics, "Participant covariates -> covariates.csv"},
      {"protocol", pipeline::Stage::Protocol, "Fit the hypothesis models -> */report.json"},
      {"report", pipeline::Stage::Report, "Render */report.md and summary.md"},
  };
  std::vector<std::pair<CLI::App*, pipeline::Stage>> stage_apps;
  for (const auto& s : stages) stage_apps.emplace_back(app.add_subcommand(s.name, s.help), s.stage);
  auto* run = app.add_subcommand("run", "All stages in order");
  auto* simulate = app.add_subcommand("simulate", "Write a simulated cohort and its config");
  auto* verify_cmd = app.add_subcommand("verify", "Oracle cross-checks");
  std::string perturb;
  bool list = false;
  verify_cmd->add_option("--perturb", perturb, "Make the named check fail (test mode)");
  verify_cmd->add_flag("--list", list, "List check names");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    set_thread_count(g.threads);
    if (*simulate) return cmd_simulate(g);
    if (*verify_cmd) {
      if (list) {
        for (const auto& n : verify::check_names()) std::cout << n << '\n';
        return 0;
      }
      return cmd_verify(perturb);
    }
    auto ctx = pipeline::make_context(g.config, g.out, g.seed);
    if (*run) {
      std::cout << pipeline::run_all(ctx);
      return 0;
    }
    for (auto& [sub, stage] : stage_apps)
      if (*sub) {
        std::cout << pipeline::run_stage(stage, ctx) << '\n';
        return 0;
      }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
