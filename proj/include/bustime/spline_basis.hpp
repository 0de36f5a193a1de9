#pragma once

// Regression-spline bases, tensor-product rows and ridge-type penalties.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bustime {

enum class BasisKind { truncated_linear, cubic };

inline const char* to_string(BasisKind k) {
  return k == BasisKind::cubic ? "cubic" : "truncated_linear";
}

inline BasisKind basis_kind_from(const std::string& s) {
  if (s == "cubic") return BasisKind::cubic;
  if (s == "truncated_linear") return BasisKind::truncated_linear;
  throw std::invalid_argument("unknown basis kind '" + s + "'");
}

/// {1, x, g(x - tau_1), ..., g(x - tau_{q-2})} with g = (.)_+ or |.|^3.
struct SplineBasis {
  BasisKind kind{BasisKind::cubic};
  std::vector<double> knots;
  double lo{0.0};
  double hi{1.0};

  std::size_t q() const { return knots.size() + 2; }

  void eval(double x, std::span<double> out) const {
    if (!std::isfinite(x)) throw std::domain_error("basis evaluated at non-finite x");
    out[0] = 1.0;
    out[1] = x;
    for (std::size_t j = 0; j < knots.size(); ++j) {
      const double u = x - knots[j];
      out[j + 2] = kind == BasisKind::truncated_linear ? std::max(0.0, u) : std::abs(u * u * u);
    }
  }

  std::vector<double> row(double x) const {
    std::vector<double> r(q());
    eval(x, r);
    return r;
  }
};

inline SplineBasis make_basis(BasisKind kind, std::vector<double> knots, double lo, double hi) {
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i] > knots[i - 1])) throw std::invalid_argument("knots must be strictly increasing");
  return SplineBasis{kind, std::move(knots), lo, hi};
}

/// Row-major outer product: index j * b.size() + k.
inline std::vector<double> tensor_row(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() * b.size());
  for (std::size_t j = 0; j < a.size(); ++j)
    for (std::size_t k = 0; k < b.size(); ++k) out[j * b.size() + k] = a[j] * b[k];
  return out;
}

struct KnotStrategy {
  enum class Kind { at_stops, equally_spaced } kind{Kind::equally_spaced};
  std::size_t count{5};

  static KnotStrategy at_stops() { return {Kind::at_stops, 0}; }
  static KnotStrategy equally_spaced(std::size_t c) { return {Kind::equally_spaced, c}; }
};

/// Knots strictly inside (lo, hi), ascending, with near-duplicates collapsed.
/// For at_stops the candidate values are the stop distances; for
/// equally_spaced(c) they are c points splitting [min, max] of `values`.
inline std::vector<double> make_knots(std::span<const double> values, KnotStrategy strategy,
                                      double lo, double hi) {
  std::vector<double> cand;
  if (strategy.kind == KnotStrategy::Kind::at_stops) {
    cand.assign(values.begin(), values.end());
  } else {
    for (std::size_t i = 1; i <= strategy.count; ++i)
      cand.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(strategy.count + 1));
  }
  std::sort(cand.begin(), cand.end());
  const double eps = 1e-9 * std::max(1.0, std::abs(hi - lo));
  std::vector<double> out;
  for (double c : cand) {
    if (!(c > lo + eps && c < hi - eps)) continue;
    if (!out.empty() && c - out.back() <= eps) continue;
    out.push_back(c);
  }
  return out;
}

inline std::vector<double> make_knots(std::span<const double> values, KnotStrategy strategy) {
  if (values.empty()) throw std::invalid_argument("make_knots needs a non-empty sample");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return make_knots(values, strategy, *mn, *mx);
}

/// Quadratic penalty lambda[lambda_index] * scale * b' D b applied to the
/// coefficient slice starting at design column `offset`.
struct PenaltyBlock {
  Eigen::MatrixXd D;
  std::size_t offset{0};
  std::size_t lambda_index{0};
  double scale{1.0};

  std::size_t width() const { return static_cast<std::size_t>(D.rows()); }
};

/// diag(0, 0, 1, ..., 1) of size q.
inline Eigen::MatrixXd ridge_penalty(std::size_t q) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
  for (std::size_t j = 2; j < q; ++j) D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = 1.0;
  return D;
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

inline PenaltyBlock penalty_for(std::size_t q, std::size_t offset = 0, std::size_t lambda_index = 0) {
  return PenaltyBlock{ridge_penalty(q), offset, lambda_index, 1.0};
}

/// Marginal tensor penalties D_a (x) I and I (x) D_b, each with its own lambda.
inline std::vector<PenaltyBlock> penalty_for(std::size_t q1, std::size_t q2, std::size_t offset,
                                             std::size_t lambda_a, std::size_t lambda_b) {
  const auto Ia = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(q1), static_cast<Eigen::Index>(q1));
  const auto Ib = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(q2), static_cast<Eigen::Index>(q2));
  return {PenaltyBlock{kron(ridge_penalty(q1), Ib), offset, lambda_a, 1.0},
          PenaltyBlock{kron(Ia, ridge_penalty(q2)), offset, lambda_b, 1.0}};
}

/// Principal submatrix on `keep` (ascending indices).
inline Eigen::MatrixXd restrict_to(const Eigen::MatrixXd& D, std::span<const std::size_t> keep) {
  const auto n = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd R(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      R(i, j) = D(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(i)]),
                  static_cast<Eigen::Index>(keep[static_cast<std::size_t>(j)]));
  return R;
}

/// Contiguous design-matrix column range owned by one model term.
struct TermBlock {
  std::string name;
  std::size_t first_col{0};
  std::size_t width{0};
  bool centered{false};
  std::vector<double> centering;  // subtracted column means, size width when centered
};

}  // namespace bustime
