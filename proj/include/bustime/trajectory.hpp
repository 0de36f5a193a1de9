#pragma once

// Cumulative space-time trajectories normalized at a bus stop.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bustime/geometry.hpp"
#include "bustime/time.hpp"

namespace bustime {

struct TrajPoint {
  double dist{0.0};  // meters beyond the normalizing stop
  double T{0.0};     // minutes since the interpolated passage of that stop
};

struct NormalizedTrajectory {
  std::string bus_id;
  std::string ride_id;
  Instant departure;  // T = 0
  std::vector<TrajPoint> points;

  double max_dist() const { return points.empty() ? 0.0 : points.back().dist; }
};

/// One outbound ride of one bus, as a time-ordered projected run.
struct Ride {
  std::string bus_id;
  std::string ride_id;
  std::vector<ProjectedPoint> points;
};

enum class SkipReason { none, no_fix_before_stop, no_fix_after_stop, outside_window };

inline const char* to_string(SkipReason r) {
  switch (r) {
    case SkipReason::none: return "none";
    case SkipReason::no_fix_before_stop: return "no_fix_before_stop";
    case SkipReason::no_fix_after_stop: return "no_fix_after_stop";
    case SkipReason::outside_window: return "outside_window";
  }
  return "?";
}

struct NormalizeResult {
  std::optional<NormalizedTrajectory> trajectory;
  SkipReason reason{SkipReason::none};
};

/// Drops fixes whose distance does not exceed the running maximum (GPS jitter).
inline std::vector<ProjectedPoint> monotone_subsequence(const std::vector<ProjectedPoint>& pts) {
  std::vector<ProjectedPoint> out;
  out.reserve(pts.size());
  for (const auto& p : pts)
    if (out.empty() || (p.dist > out.back().dist && p.timestamp > out.back().timestamp))
      out.push_back(p);
  return out;
}

inline NormalizeResult normalize_at_stop(const std::vector<ProjectedPoint>& projections,
                                         double stop_dist, std::string bus_id = {},
                                         std::string ride_id = {}) {
  const auto pts = monotone_subsequence(projections);
  // Last fix at or before the stop; its successor (if any) is strictly beyond.
  constexpr double kAtStop = 1e-6;  // meters
  std::optional<std::size_t> before;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts[i].dist <= stop_dist + kAtStop) before = i;
  if (!before) return {std::nullopt, SkipReason::no_fix_before_stop};
  const std::size_t a = *before;
  if (a + 1 >= pts.size()) return {std::nullopt, SkipReason::no_fix_after_stop};

  Instant dep = pts[a].timestamp;
  if (pts[a].dist < stop_dist) {
    const auto& b = pts[a + 1];
    const double u = (stop_dist - pts[a].dist) / (b.dist - pts[a].dist);
    dep = Instant{pts[a].timestamp.seconds + u * (b.timestamp.seconds - pts[a].timestamp.seconds)};
  }
  NormalizedTrajectory traj{std::move(bus_id), std::move(ride_id), dep, {}};
  for (std::size_t i = a + 1; i < pts.size(); ++i)
    traj.points.push_back({std::max(0.0, pts[i].dist - stop_dist), minutes_between(dep, pts[i].timestamp)});
  return {std::move(traj), SkipReason::none};
}

/// Piecewise-linear T at `dist`, with the implicit (0, 0) anchor. Empty when
/// `dist` lies outside [0, last observed distance].
inline std::optional<double> interpolate_time_at(const NormalizedTrajectory& traj, double dist) {
  if (dist < 0.0 || traj.points.empty() || dist > traj.points.back().dist) return std::nullopt;
  double d0 = 0.0, t0 = 0.0;
  for (const auto& p : traj.points) {
    if (dist <= p.dist) {
      if (dist == p.dist) return p.T;
      return t0 + (dist - d0) / (p.dist - d0) * (p.T - t0);
    }
    d0 = p.dist;
    t0 = p.T;
  }
  return std::nullopt;
}

/// Half-open range of calendar days [first, last).
struct DateWindow {
  CivilDate first;
  CivilDate last;

  bool contains(Instant t) const {
    const auto d = day_number(t);
    return d >= days_from_civil(first) && d < days_from_civil(last);
  }
  std::int64_t days() const { return days_from_civil(last) - days_from_civil(first); }
};

struct HistorySet {
  std::size_t stop_index{0};
  DateWindow window;
  std::vector<NormalizedTrajectory> trajectories;  // ordered by departure
  std::map<SkipReason, std::size_t> skipped;

  bool empty() const { return trajectories.empty(); }
  std::size_t row_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.points.size();
    return n;
  }
};

inline HistorySet build_history(const std::vector<Ride>& rides, const RouteGeometry& route,
                                std::size_t k, const DateWindow& window) {
  if (k >= route.stop_count()) throw std::out_of_range("stop index beyond route");
  HistorySet h;
  h.stop_index = k;
  h.window = window;
  for (const auto& ride : rides) {
    auto res = normalize_at_stop(ride.points, route.stops()[k], ride.bus_id, ride.ride_id);
    if (!res.trajectory) {
      ++h.skipped[res.reason];
      continue;
    }
    if (!window.contains(res.trajectory->departure)) {
      ++h.skipped[SkipReason::outside_window];
      continue;
    }
    h.trajectories.push_back(std::move(*res.trajectory));
  }
  std::stable_sort(h.trajectories.begin(), h.trajectories.end(),
                   [](const auto& a, const auto& b) { return a.departure < b.departure; });
  return h;
}

/// Groups raw fixes by bus, filters them against the route and cuts each
/// bus's stream into outbound rides.
inline std::vector<Ride> extract_rides(const std::vector<GpsPoint>& points,
                                       const RouteGeometry& route, double max_offset,
                                       const RunSplitOptions& opt = {}) {
  std::map<std::string, std::vector<GpsPoint>> by_bus;
  for (const auto& p : points)
    if (p.route_id == route.route_id()) by_bus[p.bus_id].push_back(p);
  std::vector<Ride> rides;
  for (const auto& [bus, pts] : by_bus) {
    for (auto& run : outbound_runs(project_trace(pts, route, max_offset), opt)) {
      Ride r{bus, bus + "@" + format_instant(run.front().timestamp), std::move(run)};
      rides.push_back(std::move(r));
    }
  }
  std::stable_sort(rides.begin(), rides.end(), [](const Ride& a, const Ride& b) {
    return a.points.front().timestamp < b.points.front().timestamp;
  });
  return rides;
}

}  // namespace bustime
