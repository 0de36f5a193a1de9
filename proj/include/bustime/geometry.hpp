#pragma once

// Route polylines, stop snapping and projection of GPS fixes onto the
// one-dimensional distance-from-origin scale.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bustime/time.hpp"

namespace bustime {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kPi = 3.14159265358979323846;

/// Coordinate pair. For geographic metrics this is (lat, lon) in degrees;
/// for Metric::planar it is (north, east) in meters.
struct GeoPoint {
  double lat{0.0};
  double lon{0.0};
};

enum class Metric {
  planar,           // coordinates are already meters
  equirectangular,  // local tangent-plane approximation at the centroid latitude
  haversine,        // equirectangular projection, haversine segment lengths
};

struct GpsPoint {
  std::string bus_id;
  std::string route_id;
  Instant timestamp;
  double lat{0.0};
  double lon{0.0};
};

struct ProjectedPoint {
  double dist{0.0};    // meters from origin along the route
  double offset{0.0};  // perpendicular distance to the route, meters
  Instant timestamp;
};

enum class Direction { outbound, inbound, unknown };

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class RouteGeometry {
 public:
  RouteGeometry() = default;

  const std::string& route_id() const { return route_id_; }
  const std::vector<GeoPoint>& vertices() const { return vertices_; }
  const std::vector<double>& cum_arc() const { return cum_arc_; }
  /// Stop distances p_0 = 0 < p_1 < ... < p_K.
  const std::vector<double>& stops() const { return stops_; }
  std::size_t stop_count() const { return stops_.size(); }
  /// Number of on-route stops beyond the origin.
  std::size_t K() const { return stops_.empty() ? 0 : stops_.size() - 1; }
  double length() const { return cum_arc_.empty() ? 0.0 : cum_arc_.back(); }
  Metric metric() const { return metric_; }

  ProjectedPoint project(const GeoPoint& p, Instant t = {}) const {
    const auto q = to_local(p);
    ProjectedPoint best{0.0, INFINITY, t};
    for (std::size_t i = 0; i + 1 < local_.size(); ++i) {
      const double seg = planar_len_[i];
      if (seg <= 0.0) continue;
      const auto& a = local_[i];
      const auto& b = local_[i + 1];
      const double ex = b.x - a.x, ey = b.y - a.y;
      double u = ((q.x - a.x) * ex + (q.y - a.y) * ey) / (seg * seg);
      u = std::clamp(u, 0.0, 1.0);
      const double fx = a.x + u * ex, fy = a.y + u * ey;
      const double off = std::hypot(q.x - fx, q.y - fy);
      const double dist = cum_arc_[i] + u * (cum_arc_[i + 1] - cum_arc_[i]);
      constexpr double kTie = 1e-9;
      if (off < best.offset - kTie ||
          (std::abs(off - best.offset) <= kTie && dist < best.dist)) {
        best.offset = off;
        best.dist = dist;
      }
    }
    return best;
  }

  /// Point on the polyline at arc length `dist` (clamped to the route).
  GeoPoint point_at(double dist) const {
    dist = std::clamp(dist, 0.0, length());
    auto it = std::upper_bound(cum_arc_.begin(), cum_arc_.end(), dist);
    std::size_t i = it == cum_arc_.begin() ? 0 : static_cast<std::size_t>(it - cum_arc_.begin()) - 1;
    if (i + 1 >= vertices_.size()) return vertices_.back();
    const double span = cum_arc_[i + 1] - cum_arc_[i];
    const double u = span > 0.0 ? (dist - cum_arc_[i]) / span : 0.0;
    const auto& a = local_[i];
    const auto& b = local_[i + 1];
    return to_geo({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
  }

  /// Local planar coordinates (east, north) in meters.
  struct Local {
    double x{0.0};
    double y{0.0};
  };

  Local to_local(const GeoPoint& p) const {
    if (metric_ == Metric::planar) return {p.lon, p.lat};
    const double k = kEarthRadiusM * kPi / 180.0;
    return {(p.lon - lon0_) * k * cos_lat0_, (p.lat - lat0_) * k};
  }

  GeoPoint to_geo(const Local& l) const {
    if (metric_ == Metric::planar) return {l.y, l.x};
    const double k = kEarthRadiusM * kPi / 180.0;
    return {lat0_ + l.y / k, lon0_ + l.x / (k * cos_lat0_)};
  }

  friend RouteGeometry build_route(std::string route_id, std::vector<GeoPoint> vertices,
                                   const std::vector<GeoPoint>& stop_points, Metric metric,
                                   double max_offset);

 private:
  std::string route_id_;
  std::vector<GeoPoint> vertices_;
  std::vector<Local> local_;
  std::vector<double> planar_len_;
  std::vector<double> cum_arc_;
  std::vector<double> stops_;
  Metric metric_{Metric::equirectangular};
  double lat0_{0.0};
  double lon0_{0.0};
  double cos_lat0_{1.0};
};

inline double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  const double r = kPi / 180.0;
  const double dlat = (b.lat - a.lat) * r, dlon = (b.lon - a.lon) * r;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * r) * std::cos(b.lat * r) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Builds a route from its polyline and its stops (origin first). Stops are
/// snapped with the same projection used for GPS fixes.
inline RouteGeometry build_route(std::string route_id, std::vector<GeoPoint> vertices,
                                 const std::vector<GeoPoint>& stop_points, Metric metric,
                                 double max_offset) {
  if (vertices.size() < 2) throw GeometryError("route needs at least 2 vertices");
  RouteGeometry r;
  r.route_id_ = std::move(route_id);
  r.metric_ = metric;
  if (metric != Metric::planar) {
    double lat = 0.0, lon = 0.0;
    for (const auto& v : vertices) {
      if (std::abs(v.lat) > 90.0 || std::abs(v.lon) > 180.0)
        throw GeometryError("vertex outside lat/lon range");
      lat += v.lat;
      lon += v.lon;
    }
    r.lat0_ = lat / static_cast<double>(vertices.size());
    r.lon0_ = lon / static_cast<double>(vertices.size());
    r.cos_lat0_ = std::cos(r.lat0_ * kPi / 180.0);
  }
  r.vertices_ = std::move(vertices);
  for (const auto& v : r.vertices_) r.local_.push_back(r.to_local(v));
  r.cum_arc_.assign(r.vertices_.size(), 0.0);
  r.planar_len_.assign(r.vertices_.size() - 1, 0.0);
  for (std::size_t i = 0; i + 1 < r.vertices_.size(); ++i) {
    const auto& a = r.local_[i];
    const auto& b = r.local_[i + 1];
    r.planar_len_[i] = std::hypot(b.x - a.x, b.y - a.y);
    const double seg = metric == Metric::haversine && r.planar_len_[i] > 0.0
                           ? haversine_m(r.vertices_[i], r.vertices_[i + 1])
                           : r.planar_len_[i];
    r.cum_arc_[i + 1] = r.cum_arc_[i] + seg;
  }
  if (r.length() <= 0.0) throw GeometryError("route has zero length");

  for (std::size_t s = 0; s < stop_points.size(); ++s) {
    const auto pp = r.project(stop_points[s]);
    if (pp.offset > max_offset)
      throw GeometryError("stop " + std::to_string(s) + " is " + std::to_string(pp.offset) +
                          " m from the route (max " + std::to_string(max_offset) + ")");
    if (!r.stops_.empty() && pp.dist <= r.stops_.back())
      throw GeometryError("snapped stop order is not strictly increasing at stop " +
                          std::to_string(s));
    r.stops_.push_back(pp.dist);
  }
  if (!r.stops_.empty()) {
    if (r.stops_.front() > max_offset)
      throw GeometryError("first stop is not at the route origin");
    r.stops_.front() = 0.0;
  }
  return r;
}

inline ProjectedPoint project_to_route(const GpsPoint& point, const RouteGeometry& route) {
  return route.project({point.lat, point.lon}, point.timestamp);
}

struct DirectionRule {
  double min_fraction{0.8};
  std::size_t min_points{3};
};

inline Direction infer_direction(const std::vector<ProjectedPoint>& pts,
                                 DirectionRule rule = {}) {
  if (pts.size() < 2 || pts.size() < rule.min_points) return Direction::unknown;
  std::size_t up = 0, down = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].dist > pts[i - 1].dist) ++up;
    if (pts[i].dist < pts[i - 1].dist) ++down;
  }
  const double n = static_cast<double>(pts.size() - 1);
  if (static_cast<double>(up) >= rule.min_fraction * n) return Direction::outbound;
  if (static_cast<double>(down) >= rule.min_fraction * n) return Direction::inbound;
  return Direction::unknown;
}

struct RunSplitOptions {
  double turn_tolerance_m{50.0};  // hysteresis before a reversal is accepted
  double max_gap_s{1800.0};       // a longer silence starts a new trace
  DirectionRule direction{};
};

/// Splits a time-ordered projected trace into monotone runs between turning
/// points and returns the ones classified outbound. A run starts at the last
/// fix of the preceding minimum, so dwell fixes at the origin anchor the ride,
/// and ends at the first fix of the following maximum.
inline std::vector<std::vector<ProjectedPoint>> outbound_runs(
    const std::vector<ProjectedPoint>& pts, const RunSplitOptions& opt = {}) {
  std::vector<std::vector<ProjectedPoint>> runs;
  auto emit = [&](std::size_t from, std::size_t to) {
    if (to <= from) return;
    std::vector<ProjectedPoint> run(pts.begin() + static_cast<std::ptrdiff_t>(from),
                                    pts.begin() + static_cast<std::ptrdiff_t>(to) + 1);
    if (infer_direction(run, opt.direction) == Direction::outbound) runs.push_back(std::move(run));
  };

  std::size_t chunk_begin = 0;
  while (chunk_begin < pts.size()) {
    std::size_t chunk_end = chunk_begin;
    while (chunk_end + 1 < pts.size() &&
           pts[chunk_end + 1].timestamp - pts[chunk_end].timestamp <= opt.max_gap_s)
      ++chunk_end;

    enum class State { unknown, up, down } state = State::unknown;
    std::size_t start = chunk_begin, ext = chunk_begin;
    std::size_t lo = chunk_begin, hi = chunk_begin;
    const double tol = opt.turn_tolerance_m;
    for (std::size_t i = chunk_begin + 1; i <= chunk_end; ++i) {
      const double d = pts[i].dist;
      switch (state) {
        case State::unknown:
          if (d <= pts[lo].dist) lo = i;
          if (d >= pts[hi].dist) hi = i;
          if (d >= pts[lo].dist + tol) {
            state = State::up;
            start = lo;
            ext = i;
          } else if (d <= pts[hi].dist - tol) {
            state = State::down;
            start = hi;
            ext = i;
          }
          break;
        case State::up:
          if (d > pts[ext].dist) {
            ext = i;
          } else if (d <= pts[ext].dist - tol) {
            emit(start, ext);
            start = ext;
            ext = i;
            state = State::down;
          }
          break;
        case State::down:
          if (d <= pts[ext].dist) {
            ext = i;
          } else if (d >= pts[ext].dist + tol) {
            start = ext;
            ext = i;
            state = State::up;
          }
          break;
      }
    }
    if (state == State::up) emit(start, ext);
    chunk_begin = chunk_end + 1;
  }
  return runs;
}

/// Projects, drops fixes farther than `max_offset` from the route, orders by
/// time (dropping repeated timestamps) and returns the projected fixes.
inline std::vector<ProjectedPoint> project_trace(const std::vector<GpsPoint>& points,
                                                 const RouteGeometry& route, double max_offset) {
  std::vector<ProjectedPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    auto pp = project_to_route(p, route);
    if (pp.offset <= max_offset) out.push_back(pp);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ProjectedPoint& a, const ProjectedPoint& b) {
                     return a.timestamp < b.timestamp;
                   });
  std::vector<ProjectedPoint> unique;
  unique.reserve(out.size());
  for (const auto& p : out)
    if (unique.empty() || p.timestamp > unique.back().timestamp) unique.push_back(p);
  return unique;
}

/// Off-route filtering plus direction selection: keeps the longest outbound
/// run of the trace (earliest on ties). Empty output means an unusable trace.
inline std::vector<ProjectedPoint> filter_points(const std::vector<GpsPoint>& points,
                                                 const RouteGeometry& route,
                                                 double max_offset = 100.0,
                                                 const RunSplitOptions& opt = {}) {
  auto runs = outbound_runs(project_trace(points, route, max_offset), opt);
  std::vector<ProjectedPoint> best;
  for (auto& r : runs)
    if (r.size() > best.size()) best = std::move(r);
  return best;
}

}  // namespace bustime
