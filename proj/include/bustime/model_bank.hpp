#pragma once

// Per-stop additive travel-time models (BAM, EAM, AMM) with a linear
// fallback for stops whose history is too thin.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bustime/mixed_effects.hpp"
#include "bustime/penalized_fit.hpp"
#include "bustime/spline_basis.hpp"
#include "bustime/trajectory.hpp"

namespace bustime {

enum class ModelKind { bam, eam, amm };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::bam: return "BAM";
    case ModelKind::eam: return "EAM";
    case ModelKind::amm: return "AMM";
  }
  return "?";
}

inline ModelKind model_kind_from(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "BAM") return ModelKind::bam;
  if (u == "EAM") return ModelKind::eam;
  if (u == "AMM") return ModelKind::amm;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FeatureRow {
  double dist{0.0};  // meters beyond p_k
  double time{0.0};  // departure hour of day
  int weekend{0};
  std::optional<double> t_last;  // minutes
};

inline int weekend_feature(Instant departure) { return is_weekend(departure) ? 1 : 0; }

/// Cumulative time at `dist` of the latest trajectory departing strictly
/// before `departure`. `trajectories` must be ordered by departure.
inline std::optional<double> last_bus_feature(std::span<const NormalizedTrajectory> trajectories,
                                              Instant departure, double dist) {
  auto it = std::lower_bound(trajectories.begin(), trajectories.end(), departure,
                             [](const NormalizedTrajectory& t, Instant d) { return t.departure < d; });
  if (it == trajectories.begin()) return std::nullopt;
  return interpolate_time_at(*std::prev(it), dist);
}

inline std::optional<double> last_bus_feature(const HistorySet& history, Instant departure, double dist) {
  return last_bus_feature(std::span<const NormalizedTrajectory>(history.trajectories), departure, dist);
}

struct ModelSpec {
  BasisKind basis{BasisKind::cubic};
  KnotStrategy dist_knots{KnotStrategy::at_stops()};
  KnotStrategy time_knots{KnotStrategy::equally_spaced(5)};
  std::size_t n_min{8};
  std::size_t r_min{60};
  std::size_t grid_points{7};
  double lambda_lo{1e-4};
  double lambda_hi{1e4};
  double t_last_bin_m{500.0};
  unsigned threads{0};
  MixedOptions mixed;
};

/// Spline basis evaluated on x mapped to [0, 1] over the training range;
/// inputs outside the range are clamped.
struct ScaledBasis {
  BasisKind kind{BasisKind::cubic};
  std::vector<double> knots;  // natural units
  double lo{0.0};
  double hi{1.0};
  SplineBasis unit;

  static ScaledBasis make(BasisKind kind, std::vector<double> knots, double lo, double hi) {
    ScaledBasis s;
    s.kind = kind;
    s.knots = std::move(knots);
    s.lo = lo;
    s.hi = hi > lo ? hi : lo + 1.0;
    std::vector<double> u;
    for (double k : s.knots) u.push_back((k - s.lo) / (s.hi - s.lo));
    s.unit = make_basis(kind, std::move(u), 0.0, 1.0);
    return s;
  }

  std::size_t q() const { return knots.size() + 2; }

  void eval(double x, std::span<double> out) const {
    if (!std::isfinite(x)) throw std::domain_error("basis evaluated at non-finite x");
    unit.eval((std::clamp(x, lo, hi) - lo) / (hi - lo), out);
  }
};

/// Mean t_last per distance bin; empty bins borrow from the nearest filled one.
struct TLastImputer {
  double bin_m{500.0};
  std::vector<double> means;

  static TLastImputer fit(std::span<const double> dists, std::span<const double> values, double bin_m) {
    TLastImputer imp;
    imp.bin_m = bin_m;
    double mx = 0.0;
    for (double d : dists) mx = std::max(mx, d);
    const auto nb = static_cast<std::size_t>(std::floor(mx / bin_m)) + 1;
    std::vector<double> sum(nb, 0.0), cnt(nb, 0.0);
    for (std::size_t i = 0; i < dists.size(); ++i) {
      const auto b = std::min(nb - 1, static_cast<std::size_t>(std::max(0.0, dists[i]) / bin_m));
      sum[b] += values[i];
      cnt[b] += 1.0;
    }
    imp.means.assign(nb, std::nan(""));
    for (std::size_t b = 0; b < nb; ++b)
      if (cnt[b] > 0) imp.means[b] = sum[b] / cnt[b];
    return imp;
  }

  double impute(double dist) const {
    if (means.empty()) return 0.0;
    const auto nb = means.size();
    const auto b = std::min(nb - 1, static_cast<std::size_t>(std::max(0.0, dist) / bin_m));
    for (std::size_t r = 0; r < nb; ++r) {
      if (b >= r && std::isfinite(means[b - r])) return means[b - r];
      if (b + r < nb && std::isfinite(means[b + r])) return means[b + r];
    }
    return 0.0;
  }
};

/// Column layout of one additive model. Term order: intercept, weekend,
/// t_last, t_last_missing, f1 weekday, f1 weekend, f2(time), f3(dist, time).
struct AdditiveLayout {
  ModelKind kind{ModelKind::bam};
  ScaledBasis dist;
  ScaledBasis time;
  bool weekday_smooth{true};
  bool weekend_smooth{false};
  bool weekend_main{false};
  bool t_last{false};
  bool t_last_missing{false};
  TLastImputer imputer;
  std::vector<TermBlock> terms;

  std::size_t width() const {
    std::size_t w = 1 + weekend_main + t_last + t_last_missing;
    const std::size_t qd = dist.q() - 1, qt = time.q() - 1;
    w += qd * (weekday_smooth + weekend_smooth) + qt + qd * qt;
    return w;
  }

  /// Uncentered design row.
  std::vector<double> raw_row(const FeatureRow& f) const {
    std::vector<double> d(dist.q()), t(time.q()), r;
    dist.eval(f.dist, d);
    time.eval(f.time, t);
    r.reserve(width());
    r.push_back(1.0);
    if (weekend_main) r.push_back(f.weekend);
    if (t_last) r.push_back(f.t_last ? *f.t_last : imputer.impute(f.dist));
    if (t_last_missing) r.push_back(f.t_last ? 0.0 : 1.0);
    const bool split = weekday_smooth && weekend_smooth;
    if (weekday_smooth) {
      const double w = split ? 1.0 - f.weekend : 1.0;
      for (std::size_t j = 1; j < d.size(); ++j) r.push_back(w * d[j]);
    }
    if (weekend_smooth) {
      const double w = split ? f.weekend : 1.0;
      for (std::size_t j = 1; j < d.size(); ++j) r.push_back(w * d[j]);
    }
    for (std::size_t j = 1; j < t.size(); ++j) r.push_back(t[j]);
    for (std::size_t j = 1; j < d.size(); ++j)
      for (std::size_t k = 1; k < t.size(); ++k) r.push_back(d[j] * t[k]);
    return r;
  }

  std::vector<double> row(const FeatureRow& f) const {
    auto r = raw_row(f);
    for (const auto& tb : terms)
      if (tb.centered)
        for (std::size_t j = 0; j < tb.width; ++j) r[tb.first_col + j] -= tb.centering[j];
    return r;
  }
};

/// alpha = (intercept, dist, dist*weekend, time, dist*time), dist in km, time in hours.
inline std::vector<double> fallback_row(const FeatureRow& f) {
  const double d = f.dist / 1000.0;
  return {1.0, d, d * f.weekend, f.time, d * f.time};
}

struct TrainingSet {
  DesignMatrix design;
  std::vector<PenaltyBlock> penalties;
  std::size_t lambda_count{0};
  AdditiveLayout layout;
  std::vector<std::size_t> groups;  // trajectory index per row
  std::vector<FeatureRow> features;
};

/// Feature rows for every observation in the history, with t_last taken
/// from the trajectory that departed just before within the same history.
inline std::vector<FeatureRow> history_features(const HistorySet& h, std::vector<std::size_t>* groups = nullptr,
                                                Eigen::VectorXd* y = nullptr) {
  std::vector<FeatureRow> rows;
  std::vector<double> ys;
  for (std::size_t i = 0; i < h.trajectories.size(); ++i) {
    const auto& tr = h.trajectories[i];
    const double hour = hour_of_day(tr.departure);
    const int we = weekend_feature(tr.departure);
    for (const auto& p : tr.points) {
      rows.push_back(FeatureRow{p.dist, hour, we, last_bus_feature(h, tr.departure, p.dist)});
      ys.push_back(p.T);
      if (groups) groups->push_back(i);
    }
  }
  if (y) *y = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return rows;
}

/// Builds the design for an additive model at stop k. `stop_offsets` are the
/// distances of the following stops beyond p_k (knot candidates).
inline TrainingSet assemble_training(const HistorySet& history, const ModelSpec& spec, ModelKind kind,
                                     std::span<const double> stop_offsets) {
  if (history.empty()) throw ModelError("empty history at stop " + std::to_string(history.stop_index));
  TrainingSet ts;
  ts.features = history_features(history, &ts.groups, &ts.design.y);
  const auto& F = ts.features;
  const auto n = F.size();

  double dmax = 0.0, tmin = 24.0, tmax = 0.0;
  std::size_t n_we = 0;
  for (const auto& f : F) {
    dmax = std::max(dmax, f.dist);
    tmin = std::min(tmin, f.time);
    tmax = std::max(tmax, f.time);
    n_we += f.weekend;
  }
  std::vector<double> dk;
  if (spec.dist_knots.kind == KnotStrategy::Kind::at_stops) {
    dk = make_knots(stop_offsets, spec.dist_knots, 0.0, dmax);
  } else {
    dk = make_knots(std::vector<double>{0.0, dmax}, spec.dist_knots, 0.0, dmax);
  }
  auto tk = make_knots(std::vector<double>{tmin, tmax}, spec.time_knots, tmin, tmax);

  auto& L = ts.layout;
  L.kind = kind;
  L.dist = ScaledBasis::make(spec.basis, dk, 0.0, dmax);
  L.time = ScaledBasis::make(spec.basis, tk, tmin, tmax);
  if (kind != ModelKind::bam) {
    L.weekday_smooth = n_we < n;
    L.weekend_smooth = n_we > 0;
    L.weekend_main = L.weekday_smooth && L.weekend_smooth;
    L.t_last = true;
    std::vector<double> pd, pv;
    for (const auto& f : F)
      if (f.t_last) {
        pd.push_back(f.dist);
        pv.push_back(*f.t_last);
      }
    L.t_last_missing = !pd.empty() && pd.size() < n;
    if (pd.empty()) L.t_last = false;
    L.imputer = TLastImputer::fit(pd, pv, spec.t_last_bin_m);
  }

  // Term blocks and penalties.
  const std::size_t qd = L.dist.q(), qt = L.time.q();
  std::size_t col = 0;
  auto add_term = [&](const std::string& name, std::size_t w, bool centered) {
    L.terms.push_back(TermBlock{name, col, w, centered, {}});
    col += w;
  };
  add_term("intercept", 1, false);
  if (L.weekend_main) add_term("weekend", 1, false);
  if (L.t_last) add_term("t_last", 1, false);
  if (L.t_last_missing) add_term("t_last_missing", 1, false);
  if (L.weekday_smooth) add_term(L.weekend_smooth ? "f1_weekday" : "f1", qd - 1, true);
  if (L.weekend_smooth) add_term(L.weekday_smooth ? "f1_weekend" : "f1", qd - 1, true);
  add_term("f2", qt - 1, true);
  add_term("f3", (qd - 1) * (qt - 1), true);

  const auto p = static_cast<Eigen::Index>(col);
  ts.design.X.resize(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = L.raw_row(F[i]);
    for (Eigen::Index j = 0; j < p; ++j) ts.design.X(static_cast<Eigen::Index>(i), j) = r[static_cast<std::size_t>(j)];
  }
  for (auto& tb : L.terms) {
    if (!tb.centered) continue;
    tb.centering.resize(tb.width);
    for (std::size_t j = 0; j < tb.width; ++j) {
      auto c = ts.design.X.col(static_cast<Eigen::Index>(tb.first_col + j));
      tb.centering[j] = c.mean();
      c.array() -= tb.centering[j];
    }
  }

  std::vector<std::size_t> tail_d, tail_t, tail_tensor;
  for (std::size_t j = 1; j < qd; ++j) tail_d.push_back(j);
  for (std::size_t j = 1; j < qt; ++j) tail_t.push_back(j);
  for (std::size_t j = 1; j < qd; ++j)
    for (std::size_t k = 1; k < qt; ++k) tail_tensor.push_back(j * qt + k);

  std::map<std::string, std::size_t> lambda_of;
  auto add_penalty = [&](const std::string& lname, Eigen::MatrixXd D, std::size_t offset) {
    if (D.isZero(0.0)) return;
    const auto w = D.rows();
    const auto Xb = ts.design.X.middleCols(static_cast<Eigen::Index>(offset), w);
    const double xn = (Xb.transpose() * Xb).norm(), dn = D.norm();
    auto [it, fresh] = lambda_of.try_emplace(lname, lambda_of.size());
    ts.penalties.push_back(PenaltyBlock{std::move(D), offset, it->second, dn > 0 && xn > 0 ? xn / dn : 1.0});
  };
  const auto tensor = penalty_for(qd, qt, 0, 0, 1);
  for (const auto& tb : L.terms) {
    if (tb.name.rfind("f1", 0) == 0) add_penalty("f1", restrict_to(ridge_penalty(qd), tail_d), tb.first_col);
    if (tb.name == "f2") add_penalty("f2", restrict_to(ridge_penalty(qt), tail_t), tb.first_col);
    if (tb.name == "f3") {
      add_penalty("f3_dist", restrict_to(tensor[0].D, tail_tensor), tb.first_col);
      add_penalty("f3_time", restrict_to(tensor[1].D, tail_tensor), tb.first_col);
    }
  }
  ts.lambda_count = lambda_of.size();
  return ts;
}

struct StopModel {
  enum class Variant { additive, fallback, untrainable };

  std::size_t k{0};
  Variant variant{Variant::untrainable};
  AdditiveLayout layout;
  PenalizedFit fit;  // additive: penalized (or GLS for AMM) coefficients
  bool mixed{false};
  double sigma2_b{0.0};
  double sigma2_eps{0.0};
  double loglik{0.0};
  bool boundary{false};
  Eigen::VectorXd alpha;  // fallback coefficients
  std::size_t n_trajectories{0};
  std::size_t n_rows{0};
  std::string note;
};

inline const char* to_string(StopModel::Variant v) {
  switch (v) {
    case StopModel::Variant::additive: return "additive";
    case StopModel::Variant::fallback: return "fallback";
    case StopModel::Variant::untrainable: return "untrainable";
  }
  return "?";
}

struct ModelBank {
  static constexpr int kFormatVersion = 1;
  int format_version{kFormatVersion};
  std::string route_id;
  ModelKind kind{ModelKind::bam};
  ModelSpec spec;
  DateWindow window;
  std::vector<double> stop_dists;  // route stop distances, for mismatch checks
  std::vector<StopModel> stops;    // k = 0 .. K-1
};

inline Eigen::VectorXd fit_fallback(const HistorySet& h) {
  Eigen::VectorXd y;
  const auto F = history_features(h, nullptr, &y);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(F.size()), 5);
  for (std::size_t i = 0; i < F.size(); ++i) {
    const auto r = fallback_row(F[i]);
    for (Eigen::Index j = 0; j < 5; ++j) X(static_cast<Eigen::Index>(i), j) = r[static_cast<std::size_t>(j)];
  }
  return X.completeOrthogonalDecomposition().solve(y);
}

/// Trains one stop. For AMM, `lambdas` (if given) are the EAM GCV optimum;
/// otherwise the EAM search is run here first.
inline StopModel train_stop(ModelKind kind, const HistorySet& h, const ModelSpec& spec,
                            std::span<const double> stop_offsets,
                            const std::vector<double>* lambdas = nullptr) {
  StopModel m;
  m.k = h.stop_index;
  m.n_trajectories = h.trajectories.size();
  m.n_rows = h.row_count();
  if (m.n_rows == 0) {
    m.variant = StopModel::Variant::untrainable;
    m.note = "no usable trajectories";
    return m;
  }
  auto use_fallback = [&](std::string why) {
    m.variant = StopModel::Variant::fallback;
    m.alpha = fit_fallback(h);
    m.note = std::move(why);
    return m;
  };
  if (m.n_trajectories < spec.n_min || m.n_rows < spec.r_min)
    return use_fallback("training size below threshold");

  auto ts = assemble_training(h, spec, kind, stop_offsets);
  if (static_cast<std::size_t>(ts.design.cols()) + 10 > m.n_rows)
    return use_fallback("fewer rows than model columns");
  PenalizedProblem prob(ts.design, ts.penalties);
  std::vector<double> lam;
  PenalizedFit fit;
  if (lambdas && lambdas->size() == ts.lambda_count) {
    lam = *lambdas;
    fit = fit_at(prob, lam);
  } else {
    const auto grid = log_grid(spec.lambda_lo, spec.lambda_hi, spec.grid_points);
    try {
      fit = optimize_lambdas(prob, std::vector<std::vector<double>>(ts.lambda_count, grid), {spec.threads});
    } catch (const FitError&) {
      return use_fallback("no finite GCV on the lambda grid");
    }
    lam = fit.lambdas;
  }
  m.variant = StopModel::Variant::additive;
  m.layout = std::move(ts.layout);
  if (kind == ModelKind::amm) {
    const MixedProblem mp(ts.design, ts.groups, ts.penalties, lam);
    const auto mf = fit_mixed(mp, spec.mixed);
    m.fit = mf.base;
    m.mixed = true;
    m.sigma2_b = mf.sigma2_b;
    m.sigma2_eps = mf.sigma2_eps;
    m.loglik = mf.loglik;
    m.boundary = mf.boundary;
  } else {
    m.fit = std::move(fit);
    m.sigma2_eps = m.fit.sigma2_eps;
  }
  return m;
}

inline std::vector<double> stop_offsets(std::span<const double> stop_dists, std::size_t k) {
  std::vector<double> out;
  for (std::size_t j = k + 1; j < stop_dists.size(); ++j) out.push_back(stop_dists[j] - stop_dists[k]);
  return out;
}

/// EAM lambdas for AMM training, keyed by stop.
using LambdaHints = std::map<std::size_t, std::vector<double>>;

inline ModelBank train_bank(const std::vector<HistorySet>& histories, const RouteGeometry& route,
                            const ModelSpec& spec, ModelKind kind, const LambdaHints* hints = nullptr) {
  ModelBank bank;
  bank.route_id = route.route_id();
  bank.kind = kind;
  bank.spec = spec;
  bank.stop_dists = route.stops();
  if (!histories.empty()) bank.window = histories.front().window;
  if (histories.size() != route.K()) throw ModelError("one history per stop k = 0..K-1 required");
  for (std::size_t k = 0; k < histories.size(); ++k) {
    if (histories[k].stop_index != k) throw ModelError("histories must be ordered by stop index");
    const auto offs = stop_offsets(route.stops(), k);
    const std::vector<double>* lam = nullptr;
    std::vector<double> own;
    if (kind == ModelKind::amm) {
      if (hints && hints->count(k)) {
        lam = &hints->at(k);
      } else {
        const auto eam = train_stop(ModelKind::eam, histories[k], spec, offs);
        if (eam.variant == StopModel::Variant::additive) {
          own = eam.fit.lambdas;
          lam = &own;
        }
      }
    }
    bank.stops.push_back(train_stop(kind, histories[k], spec, offs, lam));
  }
  return bank;
}

inline LambdaHints lambda_hints(const ModelBank& eam) {
  LambdaHints h;
  for (const auto& s : eam.stops)
    if (s.variant == StopModel::Variant::additive) h[s.k] = s.fit.lambdas;
  return h;
}

/// What is known about a bus normalized at p_k at prediction time.
struct BusState {
  std::size_t k{0};
  Instant departure;
  std::vector<TrajPoint> observed;  // own (dist, T) points used for the random intercept
  std::span<const NormalizedTrajectory> context;  // other trajectories at p_k, by departure
};

inline FeatureRow feature_at(const BusState& s, double dist) {
  return FeatureRow{dist, hour_of_day(s.departure), weekend_feature(s.departure),
                    last_bus_feature(s.context, s.departure, dist)};
}

inline double stop_random_intercept(const StopModel& m, const BusState& s) {
  if (!m.mixed || s.observed.empty()) return 0.0;
  std::vector<double> res;
  for (const auto& p : s.observed) res.push_back(p.T - predict_linear(m.fit, m.layout.row(feature_at(s, p.dist))));
  return blup_intercept(m.sigma2_b, m.sigma2_eps, res);
}

/// Predicted cumulative minutes from p_k at each target distance.
inline std::vector<double> predict_travel_time(const ModelBank& bank, const BusState& state,
                                               std::span<const double> targets) {
  if (state.k >= bank.stops.size()) throw ModelError("no model for stop " + std::to_string(state.k));
  const auto& m = bank.stops[state.k];
  std::vector<double> out;
  out.reserve(targets.size());
  switch (m.variant) {
    case StopModel::Variant::untrainable:
      throw ModelError("stop " + std::to_string(state.k) + " is untrainable: " + m.note);
    case StopModel::Variant::fallback:
      for (double d : targets) out.push_back(predict_linear(m.alpha, fallback_row(feature_at(state, d))));
      return out;
    case StopModel::Variant::additive: {
      const double b0 = stop_random_intercept(m, state);
      for (double d : targets) out.push_back(predict_linear(m.fit, m.layout.row(feature_at(state, d))) + b0);
      return out;
    }
  }
  return out;
}

}  // namespace bustime
