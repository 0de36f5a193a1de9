#pragma once

// End-to-end commands: synthetic fixtures, training, prediction, evaluation
// and model inspection. Each command reads and writes files under the
// configured directories and reports failures through PipelineError codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bustime/evaluation.hpp"
#include "bustime/geometry.hpp"
#include "bustime/io.hpp"
#include "bustime/kernel_baseline.hpp"
#include "bustime/model_bank.hpp"
#include "bustime/model_io.hpp"
#include "bustime/synthetic.hpp"
#include "bustime/trajectory.hpp"

namespace bustime {

namespace fs = std::filesystem;

enum class ExitCode : int {
  ok = 0,
  failure = 1,
  missing_file = 2,
  untrainable = 3,
  invalid_config = 4,
  model_mismatch = 5,
  empty_method = 6,
};

struct PipelineError : std::runtime_error {
  PipelineError(ExitCode c, std::string k, const std::string& what)
      : std::runtime_error(what), code(c), kind(std::move(k)) {}
  ExitCode code;
  std::string kind;
};

enum class LogLevel { debug, info, warn, error, off };
using Logger = std::function<void(LogLevel, const std::string&)>;

struct RunConfig {
  fs::path data_dir;  // empty: same as out_dir
  fs::path out_dir{"."};
  std::vector<std::string> routes;  // empty: every route in shapes.csv
  int window_days{30};
  std::string test_start;  // YYYY-MM-DD; empty: first data day + 30
  int test_days{14};
  std::vector<std::string> methods{"BAM", "EAM", "AMM", "Kernel"};
  double max_offset{100.0};
  std::size_t n_min{8};
  std::size_t r_min{60};
  std::size_t grid_points{7};
  double kernel_bandwidth{1.0};
  std::uint64_t seed{1};
  // synth
  std::string scenario{"long"};
  int synth_days{0};  // 0: scenario default
  double sigma_b{-1.0};
  double sigma_eps{-1.0};
  double gap_mean_min{-1.0};

  fs::path data() const { return data_dir.empty() ? out_dir : data_dir; }
  fs::path models() const { return out_dir / "models"; }
  fs::path predictions() const { return out_dir / "predictions.csv"; }
  fs::path report() const { return out_dir / "report"; }
};

inline std::string canonical_method(const std::string& m) {
  std::string u;
  for (char c : m) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "BAM" || u == "EAM" || u == "AMM") return u;
  if (u == "KERNEL") return "Kernel";
  throw PipelineError(ExitCode::invalid_config, "invalid_config", "unknown method '" + m + "'");
}

inline void validate(RunConfig& c) {
  auto bad = [](const std::string& msg) { throw PipelineError(ExitCode::invalid_config, "invalid_config", msg); };
  if (c.window_days <= 0) bad("window_days must be positive");
  if (c.test_days <= 0) bad("test_days must be positive");
  if (!(c.max_offset > 0.0)) bad("max_offset must be positive");
  if (c.n_min < 2) bad("n_min must be at least 2");
  if (c.grid_points < 1) bad("grid_points must be at least 1");
  if (!(c.kernel_bandwidth > 0.0)) bad("kernel_bandwidth must be positive");
  if (c.methods.empty()) bad("no methods given");
  std::vector<std::string> ms;
  for (const auto& m : c.methods) {
    const auto cm = canonical_method(m);
    if (std::find(ms.begin(), ms.end(), cm) == ms.end()) ms.push_back(cm);
  }
  c.methods = ms;
  if (!c.test_start.empty()) {
    try {
      parse_date(c.test_start);
    } catch (const std::exception&) {
      bad("test_start '" + c.test_start + "' is not a YYYY-MM-DD date");
    }
  }
  if (c.scenario != "long" && c.scenario != "short") bad("scenario must be 'long' or 'short'");
  if (c.synth_days < 0) bad("synth_days must be non-negative");
}

inline ModelSpec model_spec(const RunConfig& c) {
  ModelSpec s;
  s.n_min = c.n_min;
  s.r_min = c.r_min;
  s.grid_points = c.grid_points;
  return s;
}

// ---------------------------------------------------------------------------
// synth

inline Scenario scenario_for(const RunConfig& c) {
  Scenario s = c.scenario == "short" ? short_route_scenario() : Scenario{};
  s.seed = c.seed;
  if (c.synth_days > 0) s.days = static_cast<std::size_t>(c.synth_days);
  if (c.sigma_b >= 0.0) s.sigma_b = c.sigma_b;
  if (c.sigma_eps >= 0.0) s.sigma_eps = c.sigma_eps;
  if (c.gap_mean_min > 0.0) s.gap_mean_min = c.gap_mean_min;
  return s;
}

inline SyntheticData cmd_synth(const RunConfig& c, const Logger& log = {}) {
  const auto data = generate_synthetic_history(scenario_for(c));
  const auto dir = c.data();
  auto put = [&](const std::string& name, auto&& body) {
    AtomicFile f(dir / name);
    body(f.stream());
    f.commit();
  };
  put("shapes.csv", [&](std::ostream& o) { write_sequences(o, data.scenario.route_id, data.shape, true); });
  put("stops.csv", [&](std::ostream& o) { write_sequences(o, data.scenario.route_id, data.stops, true); });
  put("gps.csv", [&](std::ostream& o) { write_gps(o, data.gps); });
  put("truth.csv", [&](std::ostream& o) { write_truth(o, data.truth); });
  if (log)
    log(LogLevel::info, "synth: route " + data.scenario.route_id + ", " + std::to_string(data.truth.size()) +
                            " rides, " + std::to_string(data.gps.size()) + " fixes");
  return data;
}

// ---------------------------------------------------------------------------
// shared ingestion

struct RouteData {
  RouteGeometry route;
  std::vector<Ride> rides;
  CivilDate first_day;
  CivilDate last_day;
};

inline std::vector<RouteData> load_routes(const RunConfig& c) {
  const auto dir = c.data();
  const auto shapes = read_sequences(dir / "shapes.csv");
  const auto stops = read_sequences(dir / "stops.csv");
  const auto gps = read_gps(dir / "gps.csv");
  std::vector<std::string> ids = c.routes;
  if (ids.empty())
    for (const auto& [id, _] : shapes) ids.push_back(id);
  std::vector<RouteData> out;
  for (const auto& id : ids) {
    if (!shapes.count(id))
      throw PipelineError(ExitCode::invalid_config, "invalid_config", "route '" + id + "' not in shapes.csv");
    if (!stops.count(id))
      throw PipelineError(ExitCode::invalid_config, "invalid_config", "route '" + id + "' not in stops.csv");
    RouteData rd;
    try {
      rd.route = build_route(id, shapes.at(id), stops.at(id), Metric::equirectangular, c.max_offset);
    } catch (const GeometryError& e) {
      throw PipelineError(ExitCode::untrainable, "untrainable", "route " + id + ": " + e.what());
    }
    rd.rides = extract_rides(gps, rd.route, c.max_offset);
    if (!rd.rides.empty()) {
      rd.first_day = date_of(rd.rides.front().points.front().timestamp);
      rd.last_day = rd.first_day;
      for (const auto& r : rd.rides) {
        const auto d = date_of(r.points.front().timestamp);
        if (days_from_civil(d) > days_from_civil(rd.last_day)) rd.last_day = d;
      }
    }
    out.push_back(std::move(rd));
  }
  return out;
}

constexpr int kMinHistoryDays = 30;

inline CivilDate test_start_for(const RunConfig& c, const RouteData& rd) {
  if (!c.test_start.empty()) return parse_date(c.test_start);
  return civil_from_days(days_from_civil(rd.first_day) + std::max(kMinHistoryDays, c.window_days));
}

/// Training window [test_start - W, test_start); the data must cover it.
inline DateWindow training_window(const RunConfig& c, const RouteData& rd) {
  const std::string id = rd.route.route_id();
  if (rd.rides.empty()) throw PipelineError(ExitCode::untrainable, "untrainable", "route " + id + ": no rides");
  const auto ts = test_start_for(c, rd);
  const DateWindow w{civil_from_days(days_from_civil(ts) - c.window_days), ts};
  if (days_from_civil(w.first) < days_from_civil(rd.first_day) ||
      days_from_civil(rd.last_day) < days_from_civil(ts) - 1)
    throw PipelineError(ExitCode::untrainable, "insufficient_history",
                        "route " + id + ": insufficient history for a " + std::to_string(c.window_days) +
                            "-day window before " + format_date(ts) + " (data covers " +
                            format_date(rd.first_day) + " to " + format_date(rd.last_day) + ")");
  return w;
}

inline fs::path model_path(const RunConfig& c, const std::string& route, const std::string& method) {
  return c.models() / (route + "_" + method + ".json");
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  std::map<std::string, std::map<std::string, ModelBank>> banks;  // route -> method
  std::map<std::string, KernelModel> kernels;
};

/// Row-weighted mean adjusted R^2 over the additive stop models.
inline double mean_adj_r2(const ModelBank& b) {
  double s = 0.0, w = 0.0;
  for (const auto& m : b.stops)
    if (m.variant == StopModel::Variant::additive && std::isfinite(m.fit.adj_r2)) {
      s += m.fit.adj_r2 * static_cast<double>(m.n_rows);
      w += static_cast<double>(m.n_rows);
    }
  return w > 0 ? s / w : std::nan("");
}

inline TrainSummary cmd_train(const RunConfig& c, const Logger& log = {}) {
  TrainSummary out;
  const auto spec = model_spec(c);
  std::ostringstream tl;
  tl << "route,method,k,variant,n_trajectories,n_rows,edf,adj_r2,gcv,sigma2_b,sigma2_eps,lambdas,note\n";
  for (const auto& rd : load_routes(c)) {
    const auto& route = rd.route;
    const auto w = training_window(c, rd);
    std::vector<HistorySet> hist;
    std::size_t total_rows = 0;
    for (std::size_t k = 0; k < route.K(); ++k) {
      hist.push_back(build_history(rd.rides, route, k, w));
      total_rows += hist.back().row_count();
    }
    if (total_rows == 0)
      throw PipelineError(ExitCode::untrainable, "untrainable",
                          "route " + route.route_id() + ": no usable trajectories in " + format_date(w.first) +
                              " to " + format_date(w.last));
    if (log)
      log(LogLevel::info, "train: route " + route.route_id() + ", window " + format_date(w.first) + " to " +
                              format_date(w.last) + ", " + std::to_string(hist.front().trajectories.size()) +
                              " trajectories at the origin");

    std::optional<LambdaHints> hints;
    for (const auto& method : c.methods) {
      if (method == "Kernel") continue;
      const auto kind = model_kind_from(method);
      if (kind == ModelKind::amm && !hints && out.banks[route.route_id()].count("EAM"))
        hints = lambda_hints(out.banks[route.route_id()].at("EAM"));
      auto bank = train_bank(hist, route, spec, kind, hints ? &*hints : nullptr);
      bank.window = w;
      if (kind == ModelKind::eam) hints = lambda_hints(bank);
      bool any = false;
      for (const auto& m : bank.stops) {
        any |= m.variant != StopModel::Variant::untrainable;
        tl << route.route_id() << ',' << method << ',' << m.k << ',' << to_string(m.variant) << ','
           << m.n_trajectories << ',' << m.n_rows << ',';
        if (m.variant == StopModel::Variant::additive) {
          std::string lam;
          for (double l : m.fit.lambdas) lam += (lam.empty() ? "" : ";") + fmt_double(l);
          tl << fmt_double(m.fit.edf) << ',' << fmt_double(m.fit.adj_r2) << ',' << fmt_double(m.fit.gcv) << ','
             << fmt_double(m.sigma2_b) << ',' << fmt_double(m.sigma2_eps) << ',' << lam;
        } else {
          tl << ",,,,,";
        }
        tl << ',' << m.note << '\n';
      }
      if (!any)
        throw PipelineError(ExitCode::untrainable, "untrainable",
                            "route " + route.route_id() + ": every stop is untrainable for " + method);
      save_json(model_path(c, route.route_id(), method), to_json(bank));
      if (log)
        log(LogLevel::info, "train: " + method + " mean adjusted R2 " + fmt_double(mean_adj_r2(bank)));
      out.banks[route.route_id()][method] = std::move(bank);
    }
    if (std::find(c.methods.begin(), c.methods.end(), "Kernel") != c.methods.end()) {
      KernelModel km;
      km.route_id = route.route_id();
      km.bandwidth = c.kernel_bandwidth;
      km.window = w;
      km.stop_dists = route.stops();
      for (auto& h : hist) km.histories.push_back(h.trajectories);
      save_json(model_path(c, route.route_id(), "Kernel"), to_json(km));
      out.kernels[route.route_id()] = std::move(km);
    }
  }
  write_text_atomic(c.models() / "train_log.csv", tl.str());
  return out;
}

// ---------------------------------------------------------------------------
// predict

inline void check_route(const std::string& what, const std::string& route_id, const std::vector<double>& dists,
                        const RouteGeometry& route) {
  bool ok = route_id == route.route_id() && dists.size() == route.stops().size();
  for (std::size_t i = 0; ok && i < dists.size(); ++i)
    ok = std::abs(dists[i] - route.stops()[i]) <= 1e-6 * std::max(1.0, std::abs(route.stops()[i]));
  if (!ok)
    throw PipelineError(ExitCode::model_mismatch, "model_mismatch",
                        what + " does not match the stops of route " + route.route_id());
}

/// Up to `count` days from [start, last] with at least one ride, chosen by seed.
inline std::vector<std::int64_t> pick_test_days(const RouteData& rd, CivilDate start, int count,
                                                std::uint64_t seed) {
  std::set<std::int64_t> avail;
  for (const auto& r : rd.rides) {
    const auto d = day_number(r.points.front().timestamp);
    if (d >= days_from_civil(start)) avail.insert(d);
  }
  std::vector<std::int64_t> days(avail.begin(), avail.end());
  std::mt19937_64 rng(seed);
  std::shuffle(days.begin(), days.end(), rng);
  if (days.size() > static_cast<std::size_t>(count)) days.resize(static_cast<std::size_t>(count));
  std::sort(days.begin(), days.end());
  return days;
}

struct PredictSummary {
  std::size_t rides{0};
  std::size_t rows{0};
  std::map<std::string, std::size_t> skipped;  // method -> targets without a prediction
};

inline PredictSummary cmd_predict(const RunConfig& c, const Logger& log = {}) {
  PredictSummary sum;
  AtomicFile out(c.predictions());
  auto& o = out.stream();
  o << kPredictionHeader << '\n';
  for (const auto& rd : load_routes(c)) {
    const auto& route = rd.route;
    const std::string& id = route.route_id();
    std::map<std::string, ModelBank> banks;
    std::optional<KernelModel> kernel;
    for (const auto& m : c.methods) {
      const auto path = model_path(c, id, m);
      if (!fs::exists(path)) throw MissingFile("missing model file " + path.string());
      if (m == "Kernel") {
        kernel = load_kernel(path);
        check_route("kernel model " + path.filename().string(), kernel->route_id, kernel->stop_dists, route);
        if (kernel->histories.size() != route.K())
          throw PipelineError(ExitCode::model_mismatch, "model_mismatch", "kernel model has the wrong stop count");
      } else {
        auto b = load_bank(path);
        check_route("model " + path.filename().string(), b.route_id, b.stop_dists, route);
        if (b.stops.size() != route.K())
          throw PipelineError(ExitCode::model_mismatch, "model_mismatch", "model has the wrong stop count");
        banks.emplace(m, std::move(b));
      }
    }
    if (rd.rides.empty()) continue;
    const auto days = pick_test_days(rd, test_start_for(c, rd), c.test_days, c.seed);
    const std::set<std::int64_t> test_days(days.begin(), days.end());
    std::vector<const Ride*> test;
    for (const auto& r : rd.rides)
      if (test_days.count(day_number(r.points.front().timestamp))) test.push_back(&r);
    sum.rides += test.size();
    if (log) log(LogLevel::info, "predict: route " + id + ", " + std::to_string(test.size()) + " test rides");

    const DateWindow everything{civil_from_days(-1000000), civil_from_days(1000000)};
    for (std::size_t k = 0; k < route.K(); ++k) {
      const auto ctx = build_history(rd.rides, route, k, everything);
      std::optional<StopGrid> grid;
      if (kernel) grid = to_stop_grid(kernel->histories[k], stop_offsets(route.stops(), k), k);
      for (const Ride* ride : test) {
        const auto res = normalize_at_stop(ride->points, route.stops()[k], ride->bus_id, ride->ride_id);
        if (!res.trajectory || res.trajectory->points.size() < 2) continue;
        const auto& tr = *res.trajectory;
        std::vector<double> targets, observed;
        for (std::size_t j = 1; j < tr.points.size(); ++j) {
          targets.push_back(tr.points[j].dist);
          observed.push_back(tr.points[j].T);
        }
        BusState st{k, tr.departure, {tr.points.front()}, ctx.trajectories};
        for (const auto& m : c.methods) {
          std::vector<std::optional<double>> pred;
          try {
            if (m == "Kernel") {
              pred = kernel_predict_dists(kernel->histories[k], *grid, st.observed, kernel->bandwidth, targets);
            } else {
              for (double v : predict_travel_time(banks.at(m), st, targets)) pred.emplace_back(v);
            }
          } catch (const KernelError&) {
            pred.assign(targets.size(), std::nullopt);
          } catch (const ModelError&) {
            pred.assign(targets.size(), std::nullopt);
          }
          for (std::size_t j = 0; j < targets.size(); ++j) {
            if (!pred[j]) {
              ++sum.skipped[m];
              continue;
            }
            write_prediction(o, PredictionRecord{m, id, tr.bus_id, tr.ride_id, k, targets[j], observed[j], *pred[j]});
            ++sum.rows;
          }
        }
      }
    }
  }
  out.commit();
  if (log)
    for (const auto& [m, n] : sum.skipped)
      log(LogLevel::warn, "predict: " + m + " had no prediction for " + std::to_string(n) + " targets");
  return sum;
}

// ---------------------------------------------------------------------------
// evaluate

inline EvaluationReport cmd_evaluate(const RunConfig& c, const Logger& log = {}) {
  const auto recs = read_predictions(c.predictions());
  std::map<std::string, std::size_t> per_method;
  for (const auto& r : recs) ++per_method[r.method];
  for (const auto& m : c.methods)
    if (!per_method.count(m))
      throw PipelineError(ExitCode::empty_method, "empty_method", "method " + m + " has no prediction rows");
  const auto rep = evaluate_records(recs, c.methods);
  if (log && (rep.rejected || rep.dropped_unpaired))
    log(LogLevel::warn, "evaluate: " + std::to_string(rep.rejected) + " records with T <= 0 rejected, " +
                            std::to_string(rep.dropped_unpaired) + " unpaired records dropped");

  std::ostringstream ev, pd, sm, cp;
  ev << "method,route,bin_km,n,mean_abs_err_min,p95_min\n";
  pd << "method,route,bin_km,n,q1_min,median_min,q3_min,p95_min\n";
  for (const auto& s : rep.methods)
    for (const auto& b : s.bins) {
      ev << s.method << ',' << s.route_id << ',' << b.bin_km << ',' << b.n << ',' << fmt_double(b.mean_abs_err)
         << ',' << fmt_double(b.p95) << '\n';
      pd << s.method << ',' << s.route_id << ',' << b.bin_km << ',' << b.n << ',' << fmt_double(b.q1) << ','
         << fmt_double(b.median) << ',' << fmt_double(b.q3) << ',' << fmt_double(b.p95) << '\n';
    }
  sm << "route,window_days,n";
  for (const auto& m : c.methods) sm << ",MARE_" << m;
  sm << '\n';
  std::map<std::string, std::map<std::string, const MethodSummary*>> by_route;
  for (const auto& s : rep.methods) by_route[s.route_id][s.method] = &s;
  for (const auto& [route, ms] : by_route) {
    sm << route << ',' << c.window_days << ',' << ms.begin()->second->n;
    for (const auto& m : c.methods) sm << ',' << fmt_double(ms.at(m)->mare);
    sm << '\n';
  }
  cp << "route,method_a,method_b,scope,n,stat_a,stat_b,p_raw,p_adj\n";
  for (const auto& x : rep.comparisons)
    cp << x.route_id << ',' << x.method_a << ',' << x.method_b << ',' << x.scope << ',' << x.n << ','
       << fmt_double(x.stat_a) << ',' << fmt_double(x.stat_b) << ',' << fmt_double(x.p_raw) << ','
       << fmt_double(x.p_adj) << '\n';
  write_text_atomic(c.report() / "evaluation.csv", ev.str());
  write_text_atomic(c.report() / "plot_data.csv", pd.str());
  write_text_atomic(c.report() / "summary.csv", sm.str());
  write_text_atomic(c.report() / "comparisons.csv", cp.str());
  return rep;
}

// ---------------------------------------------------------------------------
// inspect

inline std::string cmd_inspect(const fs::path& path) {
  const auto j = io_detail::read_json(path);
  std::ostringstream o;
  const auto type = j.value("type", "");
  if (type == "kernel") {
    const auto km = kernel_from_json(j);
    o << "kernel model, route " << km.route_id << ", bandwidth " << fmt_double(km.bandwidth) << ", window "
      << format_date(km.window.first) << " to " << format_date(km.window.last) << '\n';
    for (std::size_t k = 0; k < km.histories.size(); ++k)
      o << "  k=" << k << " trajectories=" << km.histories[k].size() << '\n';
    return o.str();
  }
  const auto b = bank_from_json(j);
  o << to_string(b.kind) << " model bank, route " << b.route_id << ", window " << format_date(b.window.first)
    << " to " << format_date(b.window.last) << ", " << b.stops.size() << " stops\n";
  for (const auto& m : b.stops) {
    o << "  k=" << m.k << ' ' << to_string(m.variant) << " traj=" << m.n_trajectories << " rows=" << m.n_rows;
    if (m.variant == StopModel::Variant::additive) {
      o << " p=" << m.fit.beta.size() << " edf=" << fmt_double(m.fit.edf) << " adj_r2=" << fmt_double(m.fit.adj_r2);
      if (m.mixed) o << " sigma_b=" << fmt_double(std::sqrt(m.sigma2_b)) << (m.boundary ? " (boundary)" : "");
      o << " lambdas=";
      for (std::size_t i = 0; i < m.fit.lambdas.size(); ++i) o << (i ? ";" : "") << fmt_double(m.fit.lambdas[i]);
    }
    if (!m.note.empty()) o << " note=\"" << m.note << '"';
    o << '\n';
  }
  return o.str();
}

}  // namespace bustime
