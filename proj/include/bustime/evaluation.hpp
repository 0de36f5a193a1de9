#pragma once

// Error metrics, paired signed-rank tests and false-discovery-rate control
// for comparing travel-time predictors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace bustime {

struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PredictionRecord {
  std::string method;
  std::string route_id;
  std::string bus_id;
  std::string ride_id;
  std::size_t k{0};
  double prediction_distance{0.0};  // meters beyond p_k
  double T{0.0};                    // observed minutes
  double T_hat{0.0};                // predicted minutes

  double abs_error() const { return std::abs(T - T_hat); }
  double rel_error() const { return std::abs(T - T_hat) / T; }
};

/// Records with T <= 0 are not scoreable; they are removed and counted.
inline std::vector<PredictionRecord> scoreable(std::span<const PredictionRecord> recs, std::size_t* rejected = nullptr) {
  std::vector<PredictionRecord> out;
  std::size_t bad = 0;
  for (const auto& r : recs) {
    if (r.T > 0.0 && std::isfinite(r.T_hat)) out.push_back(r);
    else ++bad;
  }
  if (rejected) *rejected = bad;
  return out;
}

/// (1/N) sum |T - T_hat| / T.
inline double mare(std::span<const PredictionRecord> recs) {
  if (recs.empty()) throw EvaluationError("MARE of an empty record set");
  double s = 0.0;
  for (const auto& r : recs) {
    if (!(r.T > 0.0)) throw EvaluationError("observed travel time must be positive");
    s += r.rel_error();
  }
  return s / static_cast<double>(recs.size());
}

inline std::size_t distance_bin(double meters) {
  return static_cast<std::size_t>(std::floor(std::max(0.0, meters) / 1000.0));
}

/// Absolute errors in half-open 1-km bins of prediction distance.
inline std::map<std::size_t, std::vector<double>> bin_by_distance(std::span<const PredictionRecord> recs) {
  std::map<std::size_t, std::vector<double>> bins;
  for (const auto& r : recs) bins[distance_bin(r.prediction_distance)].push_back(r.abs_error());
  return bins;
}

/// Nearest-rank percentile: the ceil(q n)-th order statistic.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw EvaluationError("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

inline double percentile95(std::vector<double> v) { return percentile(std::move(v), 0.95); }

/// Average ranks (1-based) of |d| with ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  return rank;
}

struct SignedRanks {
  std::vector<double> ranks;  // of |d|, zero differences dropped
  std::vector<bool> positive;
  double w_plus{0.0};
  double tie_term{0.0};  // sum (t^3 - t) over tie groups
};

inline SignedRanks signed_ranks(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw EvaluationError("paired samples differ in length");
  std::vector<double> mag;
  SignedRanks s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    mag.push_back(std::abs(d));
    s.positive.push_back(d > 0.0);
  }
  s.ranks = average_ranks(mag);
  for (std::size_t i = 0; i < mag.size(); ++i)
    if (s.positive[i]) s.w_plus += s.ranks[i];
  std::map<double, double> groups;
  for (double r : s.ranks) groups[r] += 1.0;
  for (const auto& [r, t] : groups) s.tie_term += t * t * t - t;
  return s;
}

/// Two-sided p-value by enumerating all 2^n sign assignments (via the
/// distribution of doubled ranks, which are integers even with ties).
inline double wilcoxon_exact(const SignedRanks& s) {
  const std::size_t n = s.ranks.size();
  if (n == 0) return 1.0;
  std::vector<long> r2(n);
  long total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r2[i] = std::lround(2.0 * s.ranks[i]);
    total += r2[i];
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long r : r2) {
    for (long v = reach; v >= 0; --v)
      if (count[static_cast<std::size_t>(v)] != 0.0) count[static_cast<std::size_t>(v + r)] += count[static_cast<std::size_t>(v)];
    reach += r;
  }
  const long w = std::lround(2.0 * s.w_plus);
  double le = 0.0, ge = 0.0, all = 0.0;
  for (long v = 0; v <= total; ++v) {
    const double c = count[static_cast<std::size_t>(v)];
    all += c;
    if (v <= w) le += c;
    if (v >= w) ge += c;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / all);
}

/// Normal approximation with tie-corrected variance and continuity correction.
inline double wilcoxon_normal(const SignedRanks& s) {
  const auto n = static_cast<double>(s.ranks.size());
  if (n == 0) return 1.0;
  const double mu = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - s.tie_term / 48.0;
  if (!(var > 0.0)) return 1.0;
  const double z = std::max(0.0, std::abs(s.w_plus - mu) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

/// Two-sided paired signed-rank test; exact for n <= 20 non-zero differences.
inline double wilcoxon_paired(std::span<const double> a, std::span<const double> b) {
  const auto s = signed_ranks(a, b);
  if (s.ranks.empty()) return 1.0;
  return s.ranks.size() <= 20 ? wilcoxon_exact(s) : wilcoxon_normal(s);
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
inline std::vector<double> bh_adjust(std::span<const double> p) {
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw EvaluationError("p-values must lie in [0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double run = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double scaled = r + 1 == m ? p[idx[r]] : p[idx[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    run = std::min(run, scaled);
    adj[idx[r]] = std::min(1.0, run);
  }
  return adj;
}

// ---------------------------------------------------------------------------
// Report assembly

struct BinSummary {
  std::size_t bin_km{0};
  std::size_t n{0};
  double mean_abs_err{0.0};
  double p95{0.0};
  double q1{0.0}, median{0.0}, q3{0.0};
};

struct MethodSummary {
  std::string method;
  std::string route_id;
  std::size_t n{0};
  double mare{0.0};
  std::vector<BinSummary> bins;
};

struct Comparison {
  std::string route_id;
  std::string method_a;
  std::string method_b;
  std::string scope;  // "overall" or "bin:<km>"
  std::size_t n{0};
  double stat_a{0.0};  // MARE (overall) or mean absolute error (bin)
  double stat_b{0.0};
  double p_raw{1.0};
  double p_adj{1.0};
};

struct EvaluationReport {
  std::vector<MethodSummary> methods;
  std::vector<Comparison> comparisons;
  std::size_t rejected{0};
  std::size_t dropped_unpaired{0};
};

using RecordKey = std::tuple<std::string, std::string, std::size_t, double>;  // route, ride, k, distance

inline RecordKey key_of(const PredictionRecord& r) { return {r.route_id, r.ride_id, r.k, r.prediction_distance}; }

/// Scores each method per route on the records every listed method covers,
/// then compares every method pair overall (relative errors) and per bin
/// (absolute errors), with one BH family over all comparisons.
inline EvaluationReport evaluate_records(std::span<const PredictionRecord> all,
                                         const std::vector<std::string>& methods) {
  EvaluationReport rep;
  const auto recs = scoreable(all, &rep.rejected);
  std::map<RecordKey, std::map<std::string, const PredictionRecord*>> by_key;
  for (const auto& r : recs)
    if (std::find(methods.begin(), methods.end(), r.method) != methods.end()) by_key[key_of(r)][r.method] = &r;

  std::map<std::string, std::map<std::string, std::vector<const PredictionRecord*>>> per;  // route -> method
  for (const auto& [key, ms] : by_key) {
    if (ms.size() != methods.size()) {
      rep.dropped_unpaired += ms.size();
      continue;
    }
    for (const auto& m : methods) per[std::get<0>(key)][m].push_back(ms.at(m));
  }

  for (const auto& [route, mm] : per) {
    for (const auto& m : methods) {
      const auto& v = mm.at(m);
      std::vector<PredictionRecord> rs;
      for (auto* p : v) rs.push_back(*p);
      MethodSummary s{m, route, rs.size(), mare(rs), {}};
      for (auto& [bin, errs] : bin_by_distance(rs)) {
        BinSummary b;
        b.bin_km = bin;
        b.n = errs.size();
        b.mean_abs_err = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
        b.p95 = percentile95(errs);
        b.q1 = percentile(errs, 0.25);
        b.median = percentile(errs, 0.5);
        b.q3 = percentile(errs, 0.75);
        s.bins.push_back(b);
      }
      rep.methods.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < methods.size(); ++i)
      for (std::size_t j = i + 1; j < methods.size(); ++j) {
        const auto& A = mm.at(methods[i]);
        const auto& B = mm.at(methods[j]);
        std::vector<double> ra, rb;
        std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> bins;
        for (std::size_t t = 0; t < A.size(); ++t) {
          ra.push_back(A[t]->rel_error());
          rb.push_back(B[t]->rel_error());
          auto& bb = bins[distance_bin(A[t]->prediction_distance)];
          bb.first.push_back(A[t]->abs_error());
          bb.second.push_back(B[t]->abs_error());
        }
        auto mean = [](const std::vector<double>& v) {
          return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        };
        rep.comparisons.push_back(
            {route, methods[i], methods[j], "overall", ra.size(), mean(ra), mean(rb), wilcoxon_paired(ra, rb), 1.0});
        for (const auto& [bin, ab] : bins)
          rep.comparisons.push_back({route, methods[i], methods[j], "bin:" + std::to_string(bin), ab.first.size(),
                                     mean(ab.first), mean(ab.second), wilcoxon_paired(ab.first, ab.second), 1.0});
      }
  }
  std::vector<double> raw;
  for (const auto& c : rep.comparisons) raw.push_back(c.p_raw);
  const auto adj = bh_adjust(raw);
  for (std::size_t i = 0; i < adj.size(); ++i) rep.comparisons[i].p_adj = adj[i];
  return rep;
}

}  // namespace bustime
