#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "bustime/pipeline.hpp"

namespace {

using namespace bustime;

int fail(ExitCode code, const std::string& kind, const std::string& message) {
  const json line{{"error", kind}, {"code", static_cast<int>(code)}, {"message", message}};
  std::cerr << line.dump() << std::endl;
  return static_cast<int>(code);
}

spdlog::level::level_enum level_from_env() {
  const char* v = std::getenv("BUSTIME_LOG");
  if (!v || !*v) return spdlog::level::info;
  const auto lvl = spdlog::level::from_str(v);
  return lvl == spdlog::level::off && std::string(v) != "off" ? spdlog::level::info : lvl;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("bustime");
  logger->set_level(level_from_env());
  logger->set_pattern("[%l] %v");
  const Logger log = [&](LogLevel l, const std::string& msg) {
    switch (l) {
      case LogLevel::debug: logger->debug(msg); break;
      case LogLevel::info: logger->info(msg); break;
      case LogLevel::warn: logger->warn(msg); break;
      case LogLevel::error: logger->error(msg); break;
      case LogLevel::off: break;
    }
  };

  RunConfig cfg;
  std::string data_dir, out_dir = ".";
  CLI::App app{"Bus travel-time prediction from GPS traces"};
  app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--data-dir", data_dir, "directory with shapes.csv, stops.csv and gps.csv (default: --out-dir)");
  app.add_option("--out-dir", out_dir, "output directory for data, models, predictions and reports");
  app.add_option("--route", cfg.routes, "route id (repeatable; default: every route)")->delimiter(',');
  app.add_option("--window-days", cfg.window_days, "training window in days");
  app.add_option("--test-start", cfg.test_start, "first test day, YYYY-MM-DD (default: first data day + 30)");
  app.add_option("--test-days", cfg.test_days, "number of test days drawn by seed");
  app.add_option("--methods", cfg.methods, "comma-separated methods: BAM,EAM,AMM,Kernel")->delimiter(',');
  app.add_option("--seed", cfg.seed, "seed for synthetic data and test-day selection");
  app.add_option("--max-offset", cfg.max_offset, "maximum distance of a fix from the route, meters");
  app.add_option("--n-min", cfg.n_min, "minimum trajectories for an additive stop model");
  app.add_option("--r-min", cfg.r_min, "minimum rows for an additive stop model");
  app.add_option("--grid-points", cfg.grid_points, "log-spaced lambda grid points per smoothing parameter");
  app.add_option("--bandwidth", cfg.kernel_bandwidth, "kernel bandwidth b");
  app.add_option("--scenario", cfg.scenario, "synthetic scenario: long or short");
  app.add_option("--days", cfg.synth_days, "synthetic days to generate");
  app.add_option("--sigma-b", cfg.sigma_b, "synthetic departure-offset sd, minutes");
  app.add_option("--sigma-eps", cfg.sigma_eps, "synthetic timestamp-noise sd, minutes");
  app.add_option("--gap-mean", cfg.gap_mean_min, "synthetic mean GPS gap, minutes");
  app.require_subcommand(1);
  auto* synth = app.add_subcommand("synth", "generate a synthetic route with GPS traces and ground truth");
  auto* train = app.add_subcommand("train", "fit per-stop model banks");
  auto* predict = app.add_subcommand("predict", "predict travel times for test rides");
  auto* evaluate = app.add_subcommand("evaluate", "score predictions and write report tables");
  auto* inspect = app.add_subcommand("inspect", "print a model file summary");
  std::string model_file;
  inspect->add_option("model", model_file, "model JSON file")->required();
  for (auto* s : {synth, train, predict, evaluate, inspect}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ExitCode::invalid_config, "invalid_config", e.what());
  }

  try {
    cfg.data_dir = data_dir;
    cfg.out_dir = out_dir;
    if (!inspect->parsed()) validate(cfg);
    if (synth->parsed()) {
      cmd_synth(cfg, log);
    } else if (train->parsed()) {
      cmd_train(cfg, log);
    } else if (predict->parsed()) {
      const auto s = cmd_predict(cfg, log);
      log(LogLevel::info, "predict: " + std::to_string(s.rows) + " rows written to " + cfg.predictions().string());
    } else if (evaluate->parsed()) {
      const auto rep = cmd_evaluate(cfg, log);
      for (const auto& m : rep.methods)
        log(LogLevel::info, "evaluate: " + m.route_id + " " + m.method + " MARE " + fmt_double(m.mare) + " (n=" +
                                std::to_string(m.n) + ")");
    } else if (inspect->parsed()) {
      std::cout << cmd_inspect(model_file);
    }
  } catch (const PipelineError& e) {
    return fail(e.code, e.kind, e.what());
  } catch (const MissingFile& e) {
    return fail(ExitCode::missing_file, "missing_file", e.what());
  } catch (const std::exception& e) {
    return fail(ExitCode::failure, "error", e.what());
  }
  return 0;
}
