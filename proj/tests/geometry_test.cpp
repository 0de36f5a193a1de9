#include "bustime/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

namespace bustime {
namespace {

RouteGeometry planar_route(std::vector<GeoPoint> v, std::vector<GeoPoint> stops = {}) {
  if (stops.empty()) stops = {v.front()};
  return build_route("r", std::move(v), stops, Metric::planar, 100.0);
}

ProjectedPoint at(double dist, double sec) { return {dist, 0.0, Instant{sec}}; }

/// Nearest sample on the polyline sampled every `step` meters (planar).
double dense_projection(const RouteGeometry& r, const GeoPoint& p, double step) {
  double best_off = INFINITY, best_dist = 0.0;
  for (double d = 0.0; d <= r.length(); d += step) {
    const auto q = r.point_at(d);
    const double off = std::hypot(q.lat - p.lat, q.lon - p.lon);
    if (off < best_off) {
      best_off = off;
      best_dist = d;
    }
  }
  return best_dist;
}

TEST(BuildRoute, PlanarEndpoints) {
  auto r = build_route("r", {{0, 0}, {1000, 0}}, {{0, 0}, {1000, 0}}, Metric::planar, 50.0);
  ASSERT_EQ(r.stop_count(), 2u);
  EXPECT_EQ(r.stops()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.stops()[1], 1000.0);
  EXPECT_EQ(r.K(), 1u);
}

TEST(BuildRoute, DuplicateVertexIsSkipped) {
  auto r = planar_route({{0, 0}, {0, 500}, {0, 500}, {0, 1000}});
  EXPECT_DOUBLE_EQ(r.length(), 1000.0);
  for (std::size_t i = 1; i < r.cum_arc().size(); ++i) EXPECT_GE(r.cum_arc()[i], r.cum_arc()[i - 1]);
  EXPECT_DOUBLE_EQ(r.project({10, 500}).dist, 500.0);
}

TEST(BuildRoute, Errors) {
  EXPECT_THROW(planar_route({{0, 0}}), GeometryError);
  EXPECT_THROW(build_route("r", {{0, 0}, {0, 1000}}, {{0, 0}, {500, 500}}, Metric::planar, 100.0),
               GeometryError);
  EXPECT_THROW(build_route("r", {{0, 0}, {0, 1000}}, {{0, 0}, {0, 800}, {0, 400}}, Metric::planar,
                           100.0),
               GeometryError);
}

TEST(BuildRoute, GeographicLengthMatchesHaversine) {
  // ~1.11 km due north near Rio.
  std::vector<GeoPoint> v{{-22.90, -43.20}, {-22.89, -43.20}};
  auto eq = build_route("r", v, {v[0], v[1]}, Metric::equirectangular, 10.0);
  auto hv = build_route("r", v, {v[0], v[1]}, Metric::haversine, 10.0);
  EXPECT_NEAR(eq.length(), haversine_m(v[0], v[1]), 0.5);
  EXPECT_DOUBLE_EQ(hv.length(), haversine_m(v[0], v[1]));
  EXPECT_NEAR(hv.stops()[1], hv.length(), 1e-6);
}

TEST(ProjectToRoute, VertexAndPerpendicularFoot) {
  auto r = planar_route({{0, 0}, {1000, 0}, {1000, 800}});
  auto a = r.project({1000, 0});
  EXPECT_DOUBLE_EQ(a.dist, r.cum_arc()[1]);
  EXPECT_DOUBLE_EQ(a.offset, 0.0);

  auto line = planar_route({{0, 0}, {0, 1000}});
  auto b = line.project({30, 500});
  EXPECT_DOUBLE_EQ(b.dist, 500.0);
  EXPECT_DOUBLE_EQ(b.offset, 30.0);
}

TEST(ProjectToRoute, TieGoesToSmallerDistance) {
  // U-shape: the point (500, 100) is 100 m from both parallel legs.
  auto r = planar_route({{0, 0}, {1000, 0}, {1000, 200}, {0, 200}});
  auto p = r.project({500, 100});
  EXPECT_DOUBLE_EQ(p.offset, 100.0);
  EXPECT_DOUBLE_EQ(p.dist, 500.0);
}

TEST(ProjectToRoute, OnCurvePointsAndSubdivision) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-400.0, 400.0);
  std::vector<GeoPoint> v{{0, 0}};
  for (int i = 0; i < 12; ++i) v.push_back({v.back().lat + U(rng), v.back().lon + 300.0 + U(rng) * 0.5});
  auto r = planar_route(v);

  // Subdivide every segment at its midpoint.
  std::vector<GeoPoint> fine{v[0]};
  for (std::size_t i = 1; i < v.size(); ++i) {
    fine.push_back({(v[i - 1].lat + v[i].lat) / 2, (v[i - 1].lon + v[i].lon) / 2});
    fine.push_back(v[i]);
  }
  auto rf = planar_route(fine);
  std::uniform_real_distribution<double> D(0.0, r.length());
  for (int t = 0; t < 200; ++t) {
    const double d = D(rng);
    const auto p = r.point_at(d);
    // A point on a segment can sit at equal (zero) offset from a crossing
    // segment only on self-intersections, which this walk avoids.
    const auto pp = r.project(p);
    EXPECT_NEAR(pp.offset, 0.0, 1e-6);
    EXPECT_NEAR(pp.dist, d, 1e-9 * r.length());
    const GeoPoint off{p.lat + U(rng) * 0.1, p.lon + U(rng) * 0.1};
    EXPECT_NEAR(r.project(off).dist, rf.project(off).dist, 1e-7);
  }
}

TEST(ProjectToRoute, DenseSamplingOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<GeoPoint> v{{0, 0}};
  for (int i = 0; i < 8; ++i) v.push_back({v.back().lat + 200.0 * U(rng), v.back().lon + 250.0});
  auto r = planar_route(v);
  std::uniform_real_distribution<double> D(0.0, r.length());
  for (int t = 0; t < 20; ++t) {
    const auto base = r.point_at(D(rng));
    const GeoPoint p{base.lat + 25.0 * U(rng), base.lon + 25.0 * U(rng)};
    EXPECT_NEAR(r.project(p).dist, dense_projection(r, p, 0.1), 1.0);
  }
}

TEST(InferDirection, Cases) {
  EXPECT_EQ(infer_direction({at(100, 0), at(400, 60), at(900, 120)}), Direction::outbound);
  EXPECT_EQ(infer_direction({at(900, 0), at(400, 60), at(100, 120)}), Direction::inbound);
  EXPECT_EQ(infer_direction({at(500, 0), at(500, 60), at(500, 120)}), Direction::unknown);
  EXPECT_EQ(infer_direction({at(500, 0)}), Direction::unknown);
  EXPECT_EQ(infer_direction({at(100, 0), at(200, 60)}), Direction::unknown);
  // 3 of 4 steps positive is below the 80% rule.
  EXPECT_EQ(infer_direction({at(0, 0), at(100, 1), at(50, 2), at(200, 3), at(300, 4)}),
            Direction::unknown);
}

std::vector<GpsPoint> trace_from(const RouteGeometry& r, std::vector<std::pair<double, double>> dist_time,
                                 double lateral = 0.0) {
  std::vector<GpsPoint> out;
  for (auto [d, t] : dist_time) {
    auto p = r.point_at(d);
    out.push_back({"b", "r", Instant{t}, p.lat + lateral, p.lon});
  }
  return out;
}

TEST(FilterPoints, KeepsNearPointsDropsFarOnes) {
  auto r = planar_route({{0, 0}, {0, 5000}});
  auto pts = trace_from(r, {{0, 0}, {800, 120}, {1500, 240}, {2600, 360}}, 10.0);
  EXPECT_EQ(filter_points(pts, r, 50.0).size(), 4u);

  pts.insert(pts.begin() + 2, GpsPoint{"b", "r", Instant{200}, 2000.0, 1200.0});
  auto f = filter_points(pts, r, 50.0);
  ASSERT_EQ(f.size(), 4u);
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_GT(f[i].timestamp, f[i - 1].timestamp);
}

TEST(FilterPoints, MixedTraceKeepsOutboundRun) {
  // Hand-labeled: return leg (t = 0..3), dwell at origin (t = 4, 5), outbound
  // (t = 5..9, starting at the last dwell fix), then the next return (t = 10..).
  auto r = planar_route({{0, 0}, {0, 5000}});
  auto pts = trace_from(r, {{4000, 0},
                            {3000, 100},
                            {1800, 200},
                            {600, 300},
                            {0, 400},
                            {0, 500},
                            {700, 600},
                            {1900, 700},
                            {3100, 800},
                            {4200, 900},
                            {3300, 1000},
                            {2100, 1100}});
  auto f = filter_points(pts, r, 50.0);
  ASSERT_EQ(f.size(), 5u);
  EXPECT_EQ(f.front().timestamp.seconds, 500.0);
  EXPECT_EQ(f.back().timestamp.seconds, 900.0);
  EXPECT_EQ(infer_direction(f), Direction::outbound);
}

TEST(FilterPoints, OutputIsTimeOrderedSubsequence) {
  std::mt19937_64 rng(3);
  auto r = planar_route({{0, 0}, {0, 3000}, {2000, 3000}});
  std::uniform_real_distribution<double> U(0.0, r.length());
  std::vector<GpsPoint> pts;
  for (int i = 0; i < 60; ++i) {
    auto p = r.point_at(U(rng));
    pts.push_back({"b", "r", Instant{std::floor(U(rng))}, p.lat, p.lon});
  }
  auto f = filter_points(pts, r, 100.0);
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_GT(f[i].timestamp, f[i - 1].timestamp);
  EXPECT_TRUE(filter_points({}, r, 100.0).empty());
}

}  // namespace
}  // namespace bustime
