#pragma once

// Instance-based baseline: Gaussian-kernel weighted average of historical
// trajectories, with similarity measured on the stops already passed.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bustime/trajectory.hpp"

namespace bustime {

struct KernelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Historical times interpolated at the stops beyond p_k.
struct StopGrid {
  std::size_t k{0};
  std::vector<double> stops;                              // offsets beyond p_k, increasing
  std::vector<std::vector<std::optional<double>>> times;  // [trajectory][stop]

  std::size_t size() const { return times.size(); }
};

inline StopGrid to_stop_grid(std::span<const NormalizedTrajectory> trajectories,
                             std::vector<double> stops, std::size_t k = 0) {
  for (std::size_t i = 1; i < stops.size(); ++i)
    if (!(stops[i] > stops[i - 1])) throw KernelError("grid stops must be strictly increasing");
  StopGrid g;
  g.k = k;
  g.stops = std::move(stops);
  g.times.reserve(trajectories.size());
  for (const auto& tr : trajectories) {
    std::vector<std::optional<double>> row;
    row.reserve(g.stops.size());
    for (double s : g.stops) row.push_back(interpolate_time_at(tr, s));
    g.times.push_back(std::move(row));
  }
  return g;
}

inline StopGrid to_stop_grid(const HistorySet& history, const RouteGeometry& route, std::size_t k) {
  std::vector<double> offs;
  for (std::size_t j = k + 1; j < route.stop_count(); ++j) offs.push_back(route.stops()[j] - route.stops()[k]);
  return to_stop_grid(history.trajectories, std::move(offs), k);
}

/// Squared distance over the first partial.size() stops, or +inf when the
/// trajectory is absent at any of them.
inline double prefix_sq_distance(std::span<const double> partial, const std::vector<std::optional<double>>& row) {
  double s = 0.0;
  for (std::size_t j = 0; j < partial.size(); ++j) {
    if (j >= row.size() || !row[j]) return std::numeric_limits<double>::infinity();
    const double d = partial[j] - *row[j];
    s += d * d;
  }
  return s;
}

/// w_i = exp(-||x - y_i||^2 / b) over the shared prefix stops.
inline std::vector<double> kernel_weights(std::span<const double> partial, const StopGrid& grid, double b = 1.0) {
  if (partial.empty()) throw KernelError("kernel needs at least one observed stop");
  if (partial.size() > grid.stops.size()) throw KernelError("partial trajectory longer than the stop grid");
  if (!(b > 0.0)) throw KernelError("bandwidth must be positive");
  std::vector<double> w(grid.size());
  bool any = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double d2 = prefix_sq_distance(partial, grid.times[i]);
    w[i] = std::isfinite(d2) ? std::exp(-d2 / b) : 0.0;
    any |= w[i] > 0.0;
  }
  if (!any) throw KernelError("no comparable history for the observed prefix");
  return w;
}

inline std::vector<double> prefix_sq_distances(std::span<const double> partial, const StopGrid& grid) {
  if (partial.empty()) throw KernelError("kernel needs at least one observed stop");
  std::vector<double> d2(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) d2[i] = prefix_sq_distance(partial, grid.times[i]);
  return d2;
}

/// Weighted mean of historical times at each target stop index, renormalized
/// over the trajectories present there. Weights are evaluated relative to the
/// closest trajectory, which leaves the normalized average unchanged.
inline std::vector<std::optional<double>> weighted_stop_means(std::span<const double> d2, const StopGrid& grid,
                                                              double b, std::span<const std::size_t> targets) {
  if (!(b > 0.0)) throw KernelError("bandwidth must be positive");
  double dmin = std::numeric_limits<double>::infinity();
  for (double v : d2) dmin = std::min(dmin, v);
  if (!std::isfinite(dmin)) throw KernelError("no comparable history for the observed prefix");
  std::vector<double> w(d2.size());
  for (std::size_t i = 0; i < d2.size(); ++i) w[i] = std::isfinite(d2[i]) ? std::exp(-(d2[i] - dmin) / b) : 0.0;

  std::vector<std::optional<double>> out;
  out.reserve(targets.size());
  for (std::size_t t : targets) {
    if (t >= grid.stops.size()) throw KernelError("target stop outside the grid");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& v = grid.times[i][t];
      if (!v || w[i] == 0.0) continue;
      num += w[i] * *v;
      den += w[i];
    }
    out.push_back(den > 0.0 ? std::optional<double>(num / den) : std::nullopt);
  }
  return out;
}

inline std::vector<std::optional<double>> kernel_predict(std::span<const double> partial, const StopGrid& grid,
                                                         double b, std::span<const std::size_t> targets) {
  if (partial.size() > grid.stops.size()) throw KernelError("partial trajectory longer than the stop grid");
  return weighted_stop_means(prefix_sq_distances(partial, grid), grid, b, targets);
}

/// Predictions at arbitrary distances for a bus whose own normalized points
/// are `observed`. The prefix is the grid stops up to the current position;
/// before the first stop the current position itself is compared. Stop
/// predictions are joined linearly from (0, 0); targets past the last
/// predicted stop are absent.
inline std::vector<std::optional<double>> kernel_predict_dists(std::span<const NormalizedTrajectory> history,
                                                               const StopGrid& grid,
                                                               std::span<const TrajPoint> observed, double b,
                                                               std::span<const double> targets) {
  if (observed.empty()) throw KernelError("kernel needs at least one observed point");
  NormalizedTrajectory own;
  own.points.assign(observed.begin(), observed.end());
  const double here = observed.back().dist;
  std::vector<double> partial;
  for (double s : grid.stops) {
    if (s > here) break;
    partial.push_back(*interpolate_time_at(own, s));
  }
  std::vector<double> d2;
  if (partial.empty()) {
    const auto local = to_stop_grid(history, {here});
    d2 = prefix_sq_distances(std::vector<double>{observed.back().T}, local);
  } else {
    d2 = prefix_sq_distances(partial, grid);
  }
  std::vector<std::size_t> all(grid.stops.size());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  const auto at_stops = weighted_stop_means(d2, grid, b, all);

  std::vector<std::optional<double>> out;
  out.reserve(targets.size());
  for (double d : targets) {
    std::optional<double> v;
    double d0 = 0.0, t0 = 0.0;
    for (std::size_t j = 0; j < grid.stops.size(); ++j) {
      if (!at_stops[j]) break;
      const double d1 = grid.stops[j], t1 = *at_stops[j];
      if (d <= d1) {
        v = d1 > d0 ? t0 + (t1 - t0) * (d - d0) / (d1 - d0) : t1;
        break;
      }
      d0 = d1;
      t0 = t1;
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace bustime
