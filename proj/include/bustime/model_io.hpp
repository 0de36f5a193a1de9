#pragma once

// JSON model files for the additive banks and the kernel baseline.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "bustime/io.hpp"
#include "bustime/kernel_baseline.hpp"
#include "bustime/model_bank.hpp"

namespace bustime {

using nlohmann::json;

/// History the kernel baseline compares against, per stop k.
struct KernelModel {
  static constexpr int kFormatVersion = 1;
  int format_version{kFormatVersion};
  std::string route_id;
  double bandwidth{1.0};
  DateWindow window;
  std::vector<double> stop_dists;
  std::vector<std::vector<NormalizedTrajectory>> histories;  // [k]
};

namespace io_detail {

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

inline json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}
inline Eigen::VectorXd vec(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = num(a[i]);
  return v;
}
inline json vec(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}
inline std::vector<double> dvec(const json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(num(x));
  return v;
}

inline json to_json(const DateWindow& w) { return {{"first", format_date(w.first)}, {"last", format_date(w.last)}}; }
inline DateWindow window_from(const json& j) {
  return {parse_date(j.at("first").get<std::string>()), parse_date(j.at("last").get<std::string>())};
}

inline json to_json(const KnotStrategy& k) {
  return {{"kind", k.kind == KnotStrategy::Kind::at_stops ? "at_stops" : "equally_spaced"}, {"count", k.count}};
}
inline KnotStrategy knots_from(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "at_stops") return KnotStrategy::at_stops();
  if (kind == "equally_spaced") return KnotStrategy::equally_spaced(j.at("count").get<std::size_t>());
  throw IoError("unknown knot strategy '" + kind + "'");
}

inline json to_json(const ModelSpec& s) {
  return {{"basis", to_string(s.basis)},
          {"dist_knots", to_json(s.dist_knots)},
          {"time_knots", to_json(s.time_knots)},
          {"n_min", s.n_min},
          {"r_min", s.r_min},
          {"grid_points", s.grid_points},
          {"lambda_lo", s.lambda_lo},
          {"lambda_hi", s.lambda_hi},
          {"t_last_bin_m", s.t_last_bin_m},
          {"mixed",
           {{"log_ratio_lo", s.mixed.log_ratio_lo},
            {"log_ratio_hi", s.mixed.log_ratio_hi},
            {"coarse_points", s.mixed.coarse_points},
            {"max_iterations", s.mixed.max_iterations},
            {"tolerance", s.mixed.tolerance}}}};
}
inline ModelSpec spec_from(const json& j) {
  ModelSpec s;
  s.basis = basis_kind_from(j.at("basis").get<std::string>());
  s.dist_knots = knots_from(j.at("dist_knots"));
  s.time_knots = knots_from(j.at("time_knots"));
  s.n_min = j.at("n_min").get<std::size_t>();
  s.r_min = j.at("r_min").get<std::size_t>();
  s.grid_points = j.at("grid_points").get<std::size_t>();
  s.lambda_lo = j.at("lambda_lo").get<double>();
  s.lambda_hi = j.at("lambda_hi").get<double>();
  s.t_last_bin_m = j.at("t_last_bin_m").get<double>();
  const auto& m = j.at("mixed");
  s.mixed.log_ratio_lo = m.at("log_ratio_lo").get<double>();
  s.mixed.log_ratio_hi = m.at("log_ratio_hi").get<double>();
  s.mixed.coarse_points = m.at("coarse_points").get<std::size_t>();
  s.mixed.max_iterations = m.at("max_iterations").get<std::size_t>();
  s.mixed.tolerance = m.at("tolerance").get<double>();
  return s;
}

inline json to_json(const ScaledBasis& b) {
  return {{"kind", to_string(b.kind)}, {"knots", vec(b.knots)}, {"lo", b.lo}, {"hi", b.hi}};
}
inline ScaledBasis basis_from(const json& j) {
  return ScaledBasis::make(basis_kind_from(j.at("kind").get<std::string>()), dvec(j.at("knots")),
                           j.at("lo").get<double>(), j.at("hi").get<double>());
}

inline json to_json(const AdditiveLayout& L) {
  json terms = json::array();
  for (const auto& t : L.terms)
    terms.push_back({{"name", t.name},
                     {"first_col", t.first_col},
                     {"width", t.width},
                     {"centered", t.centered},
                     {"centering", vec(t.centering)}});
  return {{"dist", to_json(L.dist)},
          {"time", to_json(L.time)},
          {"weekday_smooth", L.weekday_smooth},
          {"weekend_smooth", L.weekend_smooth},
          {"weekend_main", L.weekend_main},
          {"t_last", L.t_last},
          {"t_last_missing", L.t_last_missing},
          {"t_last_bin_m", L.imputer.bin_m},
          {"t_last_bin_means", vec(L.imputer.means)},
          {"terms", terms}};
}
inline AdditiveLayout layout_from(const json& j, ModelKind kind) {
  AdditiveLayout L;
  L.kind = kind;
  L.dist = basis_from(j.at("dist"));
  L.time = basis_from(j.at("time"));
  L.weekday_smooth = j.at("weekday_smooth").get<bool>();
  L.weekend_smooth = j.at("weekend_smooth").get<bool>();
  L.weekend_main = j.at("weekend_main").get<bool>();
  L.t_last = j.at("t_last").get<bool>();
  L.t_last_missing = j.at("t_last_missing").get<bool>();
  L.imputer.bin_m = j.at("t_last_bin_m").get<double>();
  L.imputer.means = dvec(j.at("t_last_bin_means"));
  for (const auto& t : j.at("terms"))
    L.terms.push_back(TermBlock{t.at("name").get<std::string>(), t.at("first_col").get<std::size_t>(),
                                t.at("width").get<std::size_t>(), t.at("centered").get<bool>(),
                                dvec(t.at("centering"))});
  return L;
}

inline json to_json(const PenalizedFit& f) {
  return {{"beta", vec(f.beta)},     {"lambdas", vec(f.lambdas)}, {"edf", num(f.edf)},
          {"rss", num(f.rss)},       {"tss", num(f.tss)},         {"sigma2_eps", num(f.sigma2_eps)},
          {"adj_r2", num(f.adj_r2)}, {"gcv", num(f.gcv)},         {"n", f.n},
          {"rcond", num(f.diagnostics.rcond)}, {"ridge", num(f.diagnostics.ridge)}};
}
inline PenalizedFit fit_from(const json& j) {
  PenalizedFit f;
  f.beta = vec(j.at("beta"));
  f.lambdas = dvec(j.at("lambdas"));
  f.edf = num(j.at("edf"));
  f.rss = num(j.at("rss"));
  f.tss = num(j.at("tss"));
  f.sigma2_eps = num(j.at("sigma2_eps"));
  f.adj_r2 = num(j.at("adj_r2"));
  f.gcv = num(j.at("gcv"));
  f.n = j.at("n").get<std::size_t>();
  f.diagnostics.rcond = num(j.at("rcond"));
  f.diagnostics.ridge = num(j.at("ridge"));
  f.diagnostics.ridge_applied = f.diagnostics.ridge > 0.0;
  return f;
}

inline json to_json(const NormalizedTrajectory& t) {
  json pts = json::array();
  for (const auto& p : t.points) pts.push_back({p.dist, p.T});
  return {{"bus_id", t.bus_id}, {"ride_id", t.ride_id}, {"departure", t.departure.seconds}, {"points", pts}};
}
inline NormalizedTrajectory trajectory_from(const json& j) {
  NormalizedTrajectory t;
  t.bus_id = j.at("bus_id").get<std::string>();
  t.ride_id = j.at("ride_id").get<std::string>();
  t.departure = Instant{j.at("departure").get<double>()};
  for (const auto& p : j.at("points")) t.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return t;
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace io_detail

inline json to_json(const ModelBank& b) {
  using namespace io_detail;
  json stops = json::array();
  for (const auto& s : b.stops) {
    json j{{"k", s.k},
           {"variant", to_string(s.variant)},
           {"n_trajectories", s.n_trajectories},
           {"n_rows", s.n_rows},
           {"note", s.note}};
    if (s.variant == StopModel::Variant::additive) {
      j["layout"] = io_detail::to_json(s.layout);
      j["fit"] = io_detail::to_json(s.fit);
      j["mixed"] = s.mixed;
      j["sigma2_b"] = num(s.sigma2_b);
      j["sigma2_eps"] = num(s.sigma2_eps);
      j["loglik"] = num(s.loglik);
      j["boundary"] = s.boundary;
    } else if (s.variant == StopModel::Variant::fallback) {
      j["alpha"] = vec(s.alpha);
    }
    stops.push_back(std::move(j));
  }
  return {{"type", "additive_bank"},
          {"format_version", b.format_version},
          {"route_id", b.route_id},
          {"kind", to_string(b.kind)},
          {"spec", io_detail::to_json(b.spec)},
          {"window", io_detail::to_json(b.window)},
          {"stop_dists", vec(b.stop_dists)},
          {"stops", stops}};
}

inline ModelBank bank_from_json(const json& j) {
  using namespace io_detail;
  if (j.value("type", "") != "additive_bank") throw IoError("not an additive model file");
  ModelBank b;
  b.format_version = j.at("format_version").get<int>();
  if (b.format_version != ModelBank::kFormatVersion)
    throw IoError("unsupported model format version " + std::to_string(b.format_version));
  b.route_id = j.at("route_id").get<std::string>();
  b.kind = model_kind_from(j.at("kind").get<std::string>());
  b.spec = spec_from(j.at("spec"));
  b.window = window_from(j.at("window"));
  b.stop_dists = dvec(j.at("stop_dists"));
  for (const auto& s : j.at("stops")) {
    StopModel m;
    m.k = s.at("k").get<std::size_t>();
    const auto v = s.at("variant").get<std::string>();
    m.n_trajectories = s.at("n_trajectories").get<std::size_t>();
    m.n_rows = s.at("n_rows").get<std::size_t>();
    m.note = s.at("note").get<std::string>();
    if (v == "additive") {
      m.variant = StopModel::Variant::additive;
      m.layout = layout_from(s.at("layout"), b.kind);
      m.fit = fit_from(s.at("fit"));
      m.mixed = s.at("mixed").get<bool>();
      m.sigma2_b = num(s.at("sigma2_b"));
      m.sigma2_eps = num(s.at("sigma2_eps"));
      m.loglik = num(s.at("loglik"));
      m.boundary = s.at("boundary").get<bool>();
    } else if (v == "fallback") {
      m.variant = StopModel::Variant::fallback;
      m.alpha = vec(s.at("alpha"));
    } else if (v == "untrainable") {
      m.variant = StopModel::Variant::untrainable;
    } else {
      throw IoError("unknown stop model variant '" + v + "'");
    }
    b.stops.push_back(std::move(m));
  }
  return b;
}

inline json to_json(const KernelModel& m) {
  using namespace io_detail;
  json hs = json::array();
  for (const auto& h : m.histories) {
    json a = json::array();
    for (const auto& t : h) a.push_back(io_detail::to_json(t));
    hs.push_back(std::move(a));
  }
  return {{"type", "kernel"},
          {"format_version", m.format_version},
          {"route_id", m.route_id},
          {"bandwidth", m.bandwidth},
          {"window", io_detail::to_json(m.window)},
          {"stop_dists", vec(m.stop_dists)},
          {"histories", hs}};
}

inline KernelModel kernel_from_json(const json& j) {
  using namespace io_detail;
  if (j.value("type", "") != "kernel") throw IoError("not a kernel model file");
  KernelModel m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != KernelModel::kFormatVersion)
    throw IoError("unsupported kernel format version " + std::to_string(m.format_version));
  m.route_id = j.at("route_id").get<std::string>();
  m.bandwidth = j.at("bandwidth").get<double>();
  m.window = window_from(j.at("window"));
  m.stop_dists = dvec(j.at("stop_dists"));
  for (const auto& h : j.at("histories")) {
    std::vector<NormalizedTrajectory> v;
    for (const auto& t : h) v.push_back(trajectory_from(t));
    m.histories.push_back(std::move(v));
  }
  return m;
}

inline void save_json(const std::filesystem::path& path, const json& j) { write_text_atomic(path, j.dump(1) + "\n"); }

inline ModelBank load_bank(const std::filesystem::path& path) {
  try {
    return bank_from_json(io_detail::read_json(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline KernelModel load_kernel(const std::filesystem::path& path) {
  try {
    return kernel_from_json(io_detail::read_json(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace bustime
