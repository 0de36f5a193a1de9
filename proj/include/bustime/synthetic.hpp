#pragma once

// Synthetic bus routes and GPS traces with known travel-time truth.
//
// Each ride follows a pace field (min/km) with two rush-hour peaks that grow
// with distance, a weekend discount, a slowly varying day-congestion factor
// and per-ride speed jitter. The last fix at the origin precedes the actual
// departure by a random offset, which shows up as a per-ride intercept once
// trajectories are normalized at the origin. Fix timestamps carry Gaussian
// noise, reordered so each trace stays monotone; positions carry only
// cross-track noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bustime/geometry.hpp"
#include "bustime/time.hpp"

namespace bustime {

struct Scenario {
  std::string route_id{"121"};
  double length_m{15000.0};
  std::size_t stop_count{18};
  GeoPoint origin{-22.90, -43.20};
  double heading_deg{35.0};

  CivilDate first_day{2013, 9, 26};
  std::size_t days{44};
  double rides_per_day{27.5};
  std::size_t buses{6};
  double first_departure_h{5.5};
  double last_departure_h{22.5};
  double schedule_jitter_min{3.0};

  double sigma_b{3.0};    // sd of the origin departure offset, minutes
  double sigma_eps{1.0};  // sd of fix timestamp noise, minutes
  double gap_mean_min{4.0};
  double gap_min_min{0.5};
  double gap_max_min{12.0};
  double cross_track_m{5.0};

  double base_pace{1.95};  // min/km off-peak
  double peak_morning{0.25};
  double peak_evening{0.90};
  double peak_morning_h{10.0};
  double peak_evening_h{17.0};
  double peak_width_h{1.2};
  double weekend_peak_factor{0.6};
  double weekend_discount{0.15};  // pace reduction at the route end on weekends
  double day_sd{0.12};            // log-pace sd of the day-congestion process
  double day_timescale_h{3.0};
  double ride_sd{0.05};           // log-pace sd per ride
  double dwell_mean_min{0.3};     // per intermediate stop
  double terminal_dwell_min{5.0};
  double origin_dwell_min{12.0};

  std::uint64_t seed{1};
};

/// Route-603-like short route.
inline Scenario short_route_scenario() {
  Scenario s;
  s.route_id = "603";
  s.length_m = 4000.0;
  s.stop_count = 15;
  s.origin = {-22.95, -43.25};
  s.heading_deg = 110.0;
  s.base_pace = 2.6;
  return s;
}

struct RideTruth {
  std::string route_id;
  std::string bus_id;
  Instant departure;         // actual wheels-rolling time at the origin
  double origin_offset_min;  // departure minus last origin fix
  std::vector<double> stop_arrival_min;  // true time from departure to each stop
  double step_m{0.0};
  std::vector<double> arrive_min;  // true first-arrival time at i * step_m
  std::vector<double> leave_min;   // true last-presence time at i * step_m (differs during dwells)
};

struct SyntheticData {
  Scenario scenario;
  std::vector<GeoPoint> shape;
  std::vector<GeoPoint> stops;
  std::vector<GpsPoint> gps;
  std::vector<RideTruth> truth;
};

namespace detail {

inline double round_to(double v, double q) { return std::round(v / q) * q; }

inline std::vector<GeoPoint> synth_shape(const Scenario& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const double k = kEarthRadiusM * kPi / 180.0;
  const double coslat = std::cos(s.origin.lat * kPi / 180.0);
  const double step = 250.0;
  const auto n = static_cast<std::size_t>(std::ceil(s.length_m / step));
  double heading = s.heading_deg * kPi / 180.0, x = 0.0, y = 0.0;
  std::vector<GeoPoint> v{s.origin};
  const double a1 = U(rng), a2 = U(rng);
  for (std::size_t i = 1; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    const double h = heading + 0.5 * std::sin(2 * kPi * (t + a1)) + 0.3 * std::sin(5 * kPi * t + a2);
    x += step * std::sin(h);
    y += step * std::cos(h);
    v.push_back({round_to(s.origin.lat + y / k, 1e-7), round_to(s.origin.lon + x / (k * coslat), 1e-7)});
  }
  return v;
}

/// Ornstein-Uhlenbeck log-pace factor on a 15-minute grid over one day.
inline std::vector<double> day_process(const Scenario& s, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  const double dt = 0.25, rho = std::exp(-dt / s.day_timescale_h);
  std::vector<double> z(4 * 28 + 1);
  z[0] = s.day_sd * N(rng);
  for (std::size_t i = 1; i < z.size(); ++i) z[i] = rho * z[i - 1] + s.day_sd * std::sqrt(1 - rho * rho) * N(rng);
  return z;
}

inline double day_factor(const std::vector<double>& z, double hour) {
  const double u = std::clamp(hour / 0.25, 0.0, static_cast<double>(z.size() - 1));
  const auto i = std::min(static_cast<std::size_t>(u), z.size() - 2);
  const double f = u - static_cast<double>(i);
  return std::exp(z[i] * (1 - f) + z[i + 1] * f);
}

}  // namespace detail

/// Pace in min/km at distance d (meters) and clock hour h, before the day and
/// ride factors.
inline double scenario_pace(const Scenario& s, double d, double hour, bool weekend) {
  const double frac = std::clamp(d / s.length_m, 0.0, 1.0);
  auto bump = [&](double c) { return std::exp(-0.5 * std::pow((hour - c) / s.peak_width_h, 2)); };
  double peak = s.peak_morning * bump(s.peak_morning_h) + s.peak_evening * bump(s.peak_evening_h);
  if (weekend) peak *= s.weekend_peak_factor;
  double p = s.base_pace * (1.0 + peak * (0.4 + 1.2 * frac));
  if (weekend) p *= 1.0 - s.weekend_discount * frac;
  return p;
}

inline double truth_time_at(const RideTruth& t, double dist) {
  const double u = std::max(0.0, dist) / t.step_m;
  const auto i = std::min(static_cast<std::size_t>(u), t.arrive_min.size() - 2);
  const double f = std::min(1.0, u - static_cast<double>(i));
  return t.leave_min[i] + (t.arrive_min[i + 1] - t.leave_min[i]) * f;
}

inline SyntheticData generate_synthetic_history(const Scenario& s) {
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  SyntheticData out;
  out.scenario = s;
  out.shape = detail::synth_shape(s, rng);
  const auto probe = build_route(s.route_id, out.shape, {out.shape.front()}, Metric::equirectangular, 1.0);
  const double L = probe.length();

  // Stops: origin, terminal, and jittered interior positions.
  std::vector<double> stop_d{0.0};
  const double spacing = L / static_cast<double>(s.stop_count - 1);
  for (std::size_t j = 1; j + 1 < s.stop_count; ++j)
    stop_d.push_back(spacing * (static_cast<double>(j) + 0.3 * (U(rng) - 0.5)));
  stop_d.push_back(L);
  for (double d : stop_d) {
    const auto g = probe.point_at(d);
    out.stops.push_back({detail::round_to(g.lat, 1e-7), detail::round_to(g.lon, 1e-7)});
  }

  auto place = [&](double d, double lateral) {
    const auto c = probe.to_local(probe.point_at(d));
    const auto a = probe.to_local(probe.point_at(std::max(0.0, d - 1.0)));
    const auto b = probe.to_local(probe.point_at(std::min(L, d + 1.0)));
    const double ex = b.x - a.x, ey = b.y - a.y, en = std::hypot(ex, ey);
    RouteGeometry::Local q{c.x, c.y};
    if (en > 0.0) {
      q.x += -ey / en * lateral;
      q.y += ex / en * lateral;
    }
    const auto g = probe.to_geo(q);
    return GeoPoint{detail::round_to(g.lat, 1e-7), detail::round_to(g.lon, 1e-7)};
  };

  const double gap_shape = 4.0;
  std::gamma_distribution<double> gap(gap_shape, s.gap_mean_min / gap_shape);
  auto next_gap = [&] { return std::clamp(gap(rng), s.gap_min_min, s.gap_max_min); };
  std::gamma_distribution<double> offset(4.0, s.sigma_b / 2.0);  // mean 2 sd, sd = sigma_b
  std::exponential_distribution<double> dwell(s.dwell_mean_min > 0 ? 1.0 / s.dwell_mean_min : 1.0);

  const double step_m = 50.0;
  const auto nstep = static_cast<std::size_t>(std::ceil(L / step_m));
  std::size_t ride_no = 0;
  for (std::size_t day = 0; day < s.days; ++day) {
    const CivilDate date = civil_from_days(days_from_civil(s.first_day) + static_cast<std::int64_t>(day));
    const Instant midnight = midnight_of(date);
    const bool weekend = is_weekend(midnight + 12 * 3600.0);
    const auto z = detail::day_process(s, rng);
    const auto n_rides = static_cast<std::size_t>(std::floor(s.rides_per_day * static_cast<double>(day + 1)) -
                                                  std::floor(s.rides_per_day * static_cast<double>(day)));
    std::vector<double> dep_h(n_rides);
    for (std::size_t r = 0; r < n_rides; ++r) {
      const double base = s.first_departure_h + (s.last_departure_h - s.first_departure_h) *
                                                    static_cast<double>(r) / std::max<double>(1.0, static_cast<double>(n_rides - 1));
      dep_h[r] = base + s.schedule_jitter_min / 60.0 * N(rng);
    }
    std::sort(dep_h.begin(), dep_h.end());

    for (double h0 : dep_h) {
      RideTruth t;
      t.route_id = s.route_id;
      t.bus_id = s.route_id + "-B" + std::to_string(ride_no % s.buses + 1);
      ++ride_no;
      t.departure = Instant{std::round((midnight + h0 * 3600.0).seconds)};
      t.origin_offset_min = s.sigma_b > 0.0 ? offset(rng) : 0.0;
      t.step_m = L / static_cast<double>(nstep);
      const double ride_f = std::exp(s.ride_sd * N(rng));

      // Integrate the pace field along the route with stop dwells.
      t.arrive_min.assign(nstep + 1, 0.0);
      t.leave_min.assign(nstep + 1, 0.0);
      std::size_t next_stop = 1;
      double T = 0.0;
      for (std::size_t i = 1; i <= nstep; ++i) {
        const double d = t.step_m * static_cast<double>(i);
        const double hour = h0 + T / 60.0;
        T += t.step_m / 1000.0 * scenario_pace(s, d - 0.5 * t.step_m, hour, weekend) *
             detail::day_factor(z, hour) * ride_f;
        t.arrive_min[i] = T;
        if (next_stop + 1 < stop_d.size() && d >= stop_d[next_stop]) {
          // Dwell is attributed to the grid node at or just past the stop.
          T += s.dwell_mean_min > 0 ? dwell(rng) : 0.0;
          ++next_stop;
        }
        t.leave_min[i] = T;
      }
      for (double d : stop_d) t.stop_arrival_min.push_back(d <= 0.0 ? 0.0 : truth_time_at(t, d));
      const double trip = t.leave_min.back();

      auto dist_at = [&](double m) {
        // Inverse of the truth curve; dwell intervals map to their node.
        if (m <= 0.0) return 0.0;
        auto it = std::lower_bound(t.leave_min.begin(), t.leave_min.end(), m);
        if (it == t.leave_min.end()) return L;
        const auto i = static_cast<std::size_t>(it - t.leave_min.begin());
        if (m >= t.arrive_min[i]) return t.step_m * static_cast<double>(i);
        const double a = t.leave_min[i - 1], b = t.arrive_min[i];
        return t.step_m * (static_cast<double>(i - 1) + (m - a) / (b - a));
      };
      auto emit = [&](double minutes_from_dep, double d, bool noisy) {
        double m = minutes_from_dep;
        if (noisy && s.sigma_eps > 0.0) m += s.sigma_eps * N(rng);
        const double lateral = s.cross_track_m > 0.0 ? s.cross_track_m * N(rng) : 0.0;
        const auto g = place(d, lateral);
        out.gps.push_back({t.bus_id, s.route_id, Instant{std::round((t.departure + m * 60.0).seconds)}, g.lat, g.lon});
      };

      // Origin dwell, ending exactly at the last origin fix.
      const double last_origin = -t.origin_offset_min;
      for (double m = last_origin - s.origin_dwell_min; m < last_origin - 1e-9;) {
        emit(m, 0.0, false);
        m += next_gap();
      }
      {
        const auto g = place(0.0, 0.0);
        out.gps.push_back({t.bus_id, s.route_id, Instant{std::round((t.departure + last_origin * 60.0).seconds)},
                           g.lat, g.lon});
      }
      // Outbound.
      // Noisy timestamps are reassigned in sorted order so the trace stays
      // monotone in distance.
      double m = next_gap();
      std::vector<double> true_m, noisy_m;
      for (; m < trip; m += next_gap()) {
        true_m.push_back(m);
        const double e = s.sigma_eps > 0.0 ? s.sigma_eps * N(rng) : 0.0;
        noisy_m.push_back(std::clamp(m + e, last_origin + 1.0 / 60.0, trip));
      }
      std::sort(noisy_m.begin(), noisy_m.end());
      for (std::size_t i = 0; i < true_m.size(); ++i) emit(noisy_m[i], dist_at(true_m[i]), false);
      // Terminal dwell, then the return leg at off-peak pace.
      const double ret_pace = s.base_pace * ride_f;
      const double ret_trip = L / 1000.0 * ret_pace;
      for (; m < trip + s.terminal_dwell_min; m += next_gap()) emit(m, L, false);
      for (; m < trip + s.terminal_dwell_min + ret_trip; m += next_gap()) {
        const double back = (m - trip - s.terminal_dwell_min) / ret_pace * 1000.0;
        emit(m, std::max(0.0, L - back), false);
      }
      out.truth.push_back(std::move(t));
    }
  }
  std::stable_sort(out.gps.begin(), out.gps.end(), [](const GpsPoint& a, const GpsPoint& b) {
    return a.bus_id != b.bus_id ? a.bus_id < b.bus_id : a.timestamp < b.timestamp;
  });
  return out;
}

}  // namespace bustime
