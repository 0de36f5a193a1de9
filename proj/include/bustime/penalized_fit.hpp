#pragma once

// Penalized least squares: minimize ||y - X b||^2_W + sum_i lambda_i b' S_i b,
// with GCV-based selection of the smoothing parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "bustime/spline_basis.hpp"

namespace bustime {

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DesignMatrix {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd weights;  // empty means unit weights
  std::vector<TermBlock> terms;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
};

struct SolveDiagnostics {
  double rcond{1.0};
  bool ridge_applied{false};
  double ridge{0.0};
};

struct PenalizedFit {
  Eigen::VectorXd beta;
  std::vector<double> lambdas;
  double edf{0.0};
  double rss{0.0};
  double tss{0.0};
  double sigma2_eps{0.0};
  double adj_r2{0.0};
  double gcv{0.0};
  std::size_t n{0};
  SolveDiagnostics diagnostics;
};

/// Sum of lambda_i * scale_i * D_i embedded at each block's offset.
inline Eigen::MatrixXd penalty_matrix(Eigen::Index p, std::span<const PenaltyBlock> penalties,
                                      std::span<const double> lambdas) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p, p);
  for (const auto& pb : penalties) {
    if (pb.lambda_index >= lambdas.size()) throw FitError("penalty refers to missing lambda");
    const auto w = static_cast<Eigen::Index>(pb.width());
    const auto o = static_cast<Eigen::Index>(pb.offset);
    if (o + w > p) throw FitError("penalty block exceeds design width");
    S.block(o, o, w, w) += lambdas[pb.lambda_index] * pb.scale * pb.D;
  }
  return S;
}

/// Cross-products of a design, reused across lambda evaluations.
class PenalizedProblem {
 public:
  PenalizedProblem(const DesignMatrix& design, std::vector<PenaltyBlock> penalties)
      : X_(design.X), y_(design.y), w_(design.weights), penalties_(std::move(penalties)) {
    if (X_.rows() != y_.size()) throw FitError("design rows and response length differ");
    if (w_.size() != 0 && w_.size() != y_.size()) throw FitError("weight length mismatch");
    if (!X_.allFinite() || !y_.allFinite() || (w_.size() && !w_.allFinite()))
      throw FitError("design contains non-finite values");
    if (w_.size() && (w_.array() < 0.0).any()) throw FitError("negative weight");
    for (const auto& pb : penalties_) {
      if (pb.D.rows() != pb.D.cols()) throw FitError("penalty block is not square");
      if (!pb.D.allFinite()) throw FitError("penalty contains non-finite values");
    }
    if (w_.size()) {
      const Eigen::MatrixXd WX = w_.asDiagonal() * X_;
      G_ = X_.transpose() * WX;
      b_ = WX.transpose() * y_;
      const double sw = w_.sum();
      const double ybar = w_.dot(y_) / sw;
      tss_ = (w_.array() * (y_.array() - ybar).square()).sum();
    } else {
      G_ = Eigen::MatrixXd::Zero(X_.cols(), X_.cols());
      G_.selfadjointView<Eigen::Lower>().rankUpdate(X_.transpose());
      G_ = G_.selfadjointView<Eigen::Lower>();
      b_ = X_.transpose() * y_;
      tss_ = (y_.array() - y_.mean()).square().sum();
    }
    n_ = static_cast<std::size_t>(X_.rows());
  }

  std::size_t n() const { return n_; }
  Eigen::Index p() const { return X_.cols(); }
  const Eigen::MatrixXd& G() const { return G_; }
  const Eigen::VectorXd& Xty() const { return b_; }
  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::VectorXd& y() const { return y_; }
  const std::vector<PenaltyBlock>& penalties() const { return penalties_; }
  double tss() const { return tss_; }

  std::size_t lambda_count() const {
    std::size_t m = 0;
    for (const auto& pb : penalties_) m = std::max(m, pb.lambda_index + 1);
    return m;
  }

  struct Evaluation {
    Eigen::VectorXd beta;
    double edf{0.0};
    double rss{0.0};
    SolveDiagnostics diagnostics;
  };

  /// Solves (G + S) b = X'Wy. Falls back to a small ridge when the system is
  /// numerically singular, which approaches the minimum-norm solution.
  Evaluation evaluate(std::span<const double> lambdas, bool want_edf = true) const {
    for (double l : lambdas)
      if (!(l >= 0.0) || !std::isfinite(l)) throw FitError("lambdas must be finite and >= 0");
    Eigen::MatrixXd M = G_ + penalty_matrix(p(), penalties_, lambdas);
    Evaluation ev;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    ev.diagnostics.rcond = rc;
    if (llt.info() != Eigen::Success || rc < 1e-12) {
      const double ridge = 1e-10 * std::max(G_.trace(), 1e-300) / static_cast<double>(p());
      M.diagonal().array() += ridge;
      llt.compute(M);
      if (llt.info() != Eigen::Success) throw FitError("penalized system could not be factored");
      ev.diagnostics.ridge_applied = true;
      ev.diagnostics.ridge = ridge;
    }
    ev.beta = llt.solve(b_);
    if (want_edf) ev.edf = llt.solve(G_).trace();
    const Eigen::VectorXd r = y_ - X_ * ev.beta;
    ev.rss = w_.size() ? (w_.array() * r.array().square()).sum() : r.squaredNorm();
    return ev;
  }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  Eigen::VectorXd w_;
  std::vector<PenaltyBlock> penalties_;
  Eigen::MatrixXd G_;
  Eigen::VectorXd b_;
  double tss_{0.0};
  std::size_t n_{0};
};

/// GCV(lambda) = n RSS / (n - tr A)^2; +inf once tr A reaches n.
inline double gcv_value(std::size_t n, double rss, double edf) {
  const double dn = static_cast<double>(n);
  const double denom = dn - edf;
  if (!(denom > 1e-9 * dn)) return std::numeric_limits<double>::infinity();
  return dn * rss / (denom * denom);
}

inline double adjusted_r2(std::size_t n, double rss, double tss, double edf) {
  const double dn = static_cast<double>(n);
  if (!(dn - edf > 0.0) || !(tss > 0.0) || n < 2) return std::numeric_limits<double>::quiet_NaN();
  return 1.0 - (rss / (dn - edf)) / (tss / (dn - 1.0));
}

inline PenalizedFit make_fit(const PenalizedProblem& prob, std::span<const double> lambdas,
                             PenalizedProblem::Evaluation ev) {
  PenalizedFit f;
  f.beta = std::move(ev.beta);
  f.lambdas.assign(lambdas.begin(), lambdas.end());
  f.edf = ev.edf;
  f.rss = ev.rss;
  f.tss = prob.tss();
  f.n = prob.n();
  const double dn = static_cast<double>(f.n);
  f.sigma2_eps = dn - f.edf > 0.0 ? f.rss / (dn - f.edf) : 0.0;
  f.adj_r2 = adjusted_r2(f.n, f.rss, f.tss, f.edf);
  f.gcv = gcv_value(f.n, f.rss, f.edf);
  f.diagnostics = ev.diagnostics;
  return f;
}

inline Eigen::VectorXd solve_penalized(const DesignMatrix& design,
                                       const std::vector<PenaltyBlock>& penalties,
                                       std::span<const double> lambdas) {
  return PenalizedProblem(design, penalties).evaluate(lambdas, false).beta;
}

inline double hat_trace(const DesignMatrix& design, const std::vector<PenaltyBlock>& penalties,
                        std::span<const double> lambdas) {
  return PenalizedProblem(design, penalties).evaluate(lambdas).edf;
}

inline double gcv_score(const DesignMatrix& design, const std::vector<PenaltyBlock>& penalties,
                        std::span<const double> lambdas) {
  PenalizedProblem prob(design, penalties);
  const auto ev = prob.evaluate(lambdas);
  return gcv_value(prob.n(), ev.rss, ev.edf);
}

inline PenalizedFit fit_at(const PenalizedProblem& prob, std::span<const double> lambdas) {
  return make_fit(prob, lambdas, prob.evaluate(lambdas));
}

/// `count` log-spaced values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (count == 0 || !(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("bad lambda grid");
  std::vector<double> g(count);
  if (count == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i)
    g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  return g;
}

/// Tie rule: scores within a relative 1e-12 are tied; the tie goes to the
/// larger sum of log-lambdas, then to the lexicographically larger vector.
inline bool better_candidate(double score, std::span<const double> lam, double best_score,
                             std::span<const double> best_lam) {
  if (!std::isfinite(score)) return false;
  if (!std::isfinite(best_score)) return true;
  const double tol = 1e-12 * std::max(std::abs(score), std::abs(best_score));
  if (score < best_score - tol) return true;
  if (score > best_score + tol) return false;
  double sa = 0.0, sb = 0.0;
  for (double v : lam) sa += std::log(std::max(v, 1e-300));
  for (double v : best_lam) sb += std::log(std::max(v, 1e-300));
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(best_lam.begin(), best_lam.end(), lam.begin(), lam.end());
}

struct GridSearchOptions {
  unsigned threads{0};  // 0 = hardware concurrency
};

/// Exhaustive search over the Cartesian product of per-lambda grids.
inline PenalizedFit optimize_lambdas(const PenalizedProblem& prob,
                                     const std::vector<std::vector<double>>& grids,
                                     GridSearchOptions opt = {}) {
  const std::size_t m = prob.lambda_count();
  if (grids.size() != m) throw FitError("one grid per smoothing parameter required");
  std::size_t total = 1;
  for (const auto& g : grids) {
    if (g.empty()) throw FitError("empty lambda grid");
    total *= g.size();
  }
  auto lambdas_at = [&](std::size_t idx) {
    std::vector<double> lam(m);
    for (std::size_t i = m; i-- > 0;) {
      lam[i] = grids[i][idx % grids[i].size()];
      idx /= grids[i].size();
    }
    return lam;
  };

  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));
  std::vector<double> scores(total, std::numeric_limits<double>::infinity());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      const auto lam = lambdas_at(idx);
      const auto ev = prob.evaluate(lam);
      scores[idx] = gcv_value(prob.n(), ev.rss, ev.edf);
    }
  };
  if (threads <= 1) {
    work(0, total);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (total + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(total, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  std::size_t best = total;
  std::vector<double> best_lam;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t idx = 0; idx < total; ++idx) {
    const auto lam = lambdas_at(idx);
    if (better_candidate(scores[idx], lam, best_score, best_lam)) {
      best = idx;
      best_score = scores[idx];
      best_lam = lam;
    }
  }
  if (best == total) throw FitError("every grid point has infinite GCV (model too rich for data)");
  return fit_at(prob, best_lam);
}

inline PenalizedFit optimize_lambdas(const DesignMatrix& design,
                                     const std::vector<PenaltyBlock>& penalties,
                                     const std::vector<std::vector<double>>& grids,
                                     GridSearchOptions opt = {}) {
  return optimize_lambdas(PenalizedProblem(design, penalties), grids, opt);
}

inline double predict_linear(const Eigen::VectorXd& beta, std::span<const double> row) {
  if (static_cast<Eigen::Index>(row.size()) != beta.size())
    throw FitError("design row has width " + std::to_string(row.size()) + ", model expects " +
                   std::to_string(beta.size()));
  double s = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) s += beta[static_cast<Eigen::Index>(j)] * row[j];
  return s;
}

inline double predict_linear(const PenalizedFit& fit, std::span<const double> row) {
  return predict_linear(fit.beta, row);
}

}  // namespace bustime
