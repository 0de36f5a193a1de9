#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "bustime/io.hpp"
#include "bustime/pipeline.hpp"

using namespace bustime;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code{-1};
  std::string err;
};

Run run(const std::string& args) {
  static int counter = 0;
  const fs::path err = fs::temp_directory_path() / ("bustime_cli_err_" + std::to_string(++counter));
  const std::string cmd = std::string(BUSTIME_CLI) + " " + args + " 2>" + err.string() + " >/dev/null";
  const int st = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  fs::remove(err);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("bustime_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const std::string kQuick = " --scenario short --grid-points 3 --seed 4";

/// Short-route data with models trained by the CLI, shared by several tests.
const fs::path& trained() {
  static const fs::path dir = [] {
    const auto d = fresh("trained");
    EXPECT_EQ(run("synth --out-dir " + d.string() + kQuick + " --days 33").code, 0);
    EXPECT_EQ(run("train --out-dir " + d.string() + kQuick).code, 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, TrainWritesOneModelFilePerMethod) {
  const auto& d = trained();
  for (const char* m : {"BAM", "EAM", "AMM", "Kernel"}) EXPECT_TRUE(fs::exists(d / "models" / (std::string("603_") + m + ".json"))) << m;
  const auto bank = load_bank(d / "models" / "603_AMM.json");
  EXPECT_EQ(bank.stops.size(), 14u);
  EXPECT_EQ(bank.route_id, "603");
  EXPECT_EQ(bank.window.days(), 30);
  const auto log = CsvTable::read(d / "models" / "train_log.csv");
  EXPECT_EQ(log.size(), 3u * 14u);
}

TEST(Cli, MissingShapesIsExitTwo) {
  const auto d = fresh("missing");
  const auto r = run("train --out-dir " + d.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"error\":\"missing_file\""), std::string::npos) << r.err;
}

TEST(Cli, ShortHistoryIsExitThree) {
  const auto d = fresh("short");
  ASSERT_EQ(run("synth --out-dir " + d.string() + kQuick + " --days 14").code, 0);
  const auto r = run("train --out-dir " + d.string() + " --window-days 30");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("insufficient history"), std::string::npos) << r.err;
}

TEST(Cli, InvalidConfigIsExitFour) {
  const auto d = fresh("invalid");
  EXPECT_EQ(run("train --out-dir " + d.string() + " --window-days 0").code, 4);
  EXPECT_EQ(run("train --out-dir " + d.string() + " --methods BAM,SVM").code, 4);
  EXPECT_EQ(run("train --out-dir " + d.string() + " --no-such-flag").code, 4);
  std::ofstream(d / "bad.cfg") << "window-days=-3\n";
  EXPECT_EQ(run("train --out-dir " + d.string() + " --config " + (d / "bad.cfg").string()).code, 4);
  std::ofstream(d / "unknown.cfg") << "colour=blue\n";
  EXPECT_EQ(run("train --out-dir " + d.string() + " --config " + (d / "unknown.cfg").string()).code, 4);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  const auto d = fresh("config");
  ASSERT_EQ(run("synth --out-dir " + d.string() + kQuick + " --days 14").code, 0);
  std::ofstream(d / "run.cfg") << "window-days=10\ntest-start=2013-10-06\ngrid-points=3\nmethods=BAM\n";
  const std::string cfg = " --config " + (d / "run.cfg").string();
  EXPECT_EQ(run("train --out-dir " + d.string() + cfg).code, 0);
  EXPECT_EQ(load_bank(d / "models" / "603_BAM.json").window.days(), 10);
  // The flag wins over the file.
  const auto r = run("train --out-dir " + d.string() + cfg + " --window-days 30");
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, EmptyTestSetGivesHeaderOnly) {
  const auto& d = trained();
  const auto out = fresh("empty");
  fs::copy(d / "models", out / "models");
  const auto r = run("predict --data-dir " + d.string() + " --out-dir " + out.string() + " --test-start 2014-01-01");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out / "predictions.csv"), std::string(kPredictionHeader) + "\n");
}

TEST(Cli, ModelRouteMismatchIsExitFive) {
  const auto& d = trained();
  const auto out = fresh("mismatch");
  for (const char* f : {"shapes.csv", "gps.csv"}) fs::copy(d / f, out / f);
  fs::copy(d / "models", out / "models");
  // Drop one interior stop.
  std::ifstream in(d / "stops.csv");
  std::ofstream o(out / "stops.csv");
  std::string line;
  for (int i = 0; std::getline(in, line); ++i)
    if (i != 5) o << line << '\n';
  o.close();
  const auto r = run("predict --out-dir " + out.string());
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST(Cli, PredictEvaluateAndGoldenRerun) {
  const auto& d = trained();
  const auto a = fresh("golden_a"), b = fresh("golden_b");
  for (const auto& out : {a, b}) {
    fs::copy(d / "models", out / "models");
    ASSERT_EQ(run("predict --data-dir " + d.string() + " --out-dir " + out.string() + " --seed 4").code, 0);
    ASSERT_EQ(run("evaluate --out-dir " + out.string()).code, 0);
  }
  EXPECT_EQ(slurp(a / "predictions.csv"), slurp(b / "predictions.csv"));
  for (const char* f : {"evaluation.csv", "summary.csv", "comparisons.csv", "plot_data.csv"})
    EXPECT_EQ(slurp(a / "report" / f), slurp(b / "report" / f)) << f;

  EXPECT_EQ(CsvTable::read(a / "report" / "evaluation.csv").header(),
            (std::vector<std::string>{"method", "route", "bin_km", "n", "mean_abs_err_min", "p95_min"}));
  EXPECT_EQ(CsvTable::read(a / "report" / "summary.csv").header(),
            (std::vector<std::string>{"route", "window_days", "n", "MARE_BAM", "MARE_EAM", "MARE_AMM", "MARE_Kernel"}));
  const auto recs = read_predictions(a / "predictions.csv");
  EXPECT_GT(recs.size(), 1000u);
}

TEST(Cli, MethodWithoutRowsIsExitSix) {
  const auto& d = trained();
  const auto out = fresh("six");
  fs::copy(d / "models", out / "models");
  ASSERT_EQ(run("predict --data-dir " + d.string() + " --out-dir " + out.string() + " --methods BAM").code, 0);
  EXPECT_EQ(run("evaluate --out-dir " + out.string() + " --methods BAM").code, 0);
  const auto r = run("evaluate --out-dir " + out.string() + " --methods BAM,EAM");
  EXPECT_EQ(r.code, 6);
  EXPECT_NE(r.err.find("empty_method"), std::string::npos);
}

TEST(Cli, InspectReadsModelFiles) {
  const auto& d = trained();
  EXPECT_EQ(run("inspect " + (d / "models" / "603_AMM.json").string()).code, 0);
  EXPECT_EQ(run("inspect " + (d / "models" / "603_Kernel.json").string()).code, 0);
  EXPECT_EQ(run("inspect " + (d / "models" / "nope.json").string()).code, 2);
}

TEST(Pipeline, PredictsEveryLaterObservationFromEveryStop) {
  const auto& d = trained();
  const auto out = fresh("protocol");
  fs::copy(d / "models", out / "models");
  RunConfig c;
  c.data_dir = d;
  c.out_dir = out;
  c.seed = 4;
  c.methods = {"BAM"};
  validate(c);
  cmd_predict(c);
  const auto recs = read_predictions(c.predictions());
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> got;
  for (const auto& r : recs) got[{r.ride_id, r.k}].push_back(r.prediction_distance);

  const auto routes = load_routes(c);
  const auto& rd = routes.front();
  const auto days = pick_test_days(rd, test_start_for(c, rd), c.test_days, c.seed);
  std::size_t rides = 0;
  for (const auto& ride : rd.rides) {
    if (!std::binary_search(days.begin(), days.end(), day_number(ride.points.front().timestamp))) continue;
    ++rides;
    for (std::size_t k = 0; k < rd.route.K(); ++k) {
      const auto n = normalize_at_stop(ride.points, rd.route.stops()[k]);
      std::vector<double> want;
      if (n.trajectory)
        for (std::size_t j = 1; j < n.trajectory->points.size(); ++j) want.push_back(n.trajectory->points[j].dist);
      const auto it = got.find({ride.ride_id, k});
      EXPECT_EQ(it == got.end() ? std::vector<double>{} : it->second, want) << ride.ride_id << " k=" << k;
    }
  }
  EXPECT_GT(rides, 50u);
}
