#pragma once

// Random-intercept extension of the penalized additive fit:
//   y = X b + Z u + e,  u_g ~ N(0, s2_b),  e ~ N(0, s2_e I),
// with the smoothing penalties held at fixed lambdas. Variance components
// are estimated by maximum likelihood with b profiled out by penalized GLS.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bustime/penalized_fit.hpp"

namespace bustime {

struct MixedFit {
  PenalizedFit base;  // GLS coefficients; edf/rss/adj_r2 are conditional on the BLUPs
  double sigma2_b{0.0};
  double sigma2_eps{1.0};
  double loglik{0.0};
  bool boundary{false};  // sigma2_b estimated at 0
  std::size_t iterations{0};
  std::vector<double> group_blups;  // training-group intercepts, by group index
  std::vector<double> loglik_trace;
};

struct MixedOptions {
  double log_ratio_lo{-18.0};  // ln(s2_b / s2_e) search range
  double log_ratio_hi{9.0};
  std::size_t coarse_points{55};
  std::size_t max_iterations{200};
  double tolerance{1e-8};
};

/// Penalized GLS profile for a fixed variance ratio gamma = s2_b / s2_e.
class MixedProblem {
 public:
  MixedProblem(const DesignMatrix& design, std::span<const std::size_t> groups,
               const std::vector<PenaltyBlock>& penalties, std::span<const double> lambdas)
      : X_(design.X), y_(design.y) {
    if (static_cast<Eigen::Index>(groups.size()) != X_.rows())
      throw FitError("one group id per design row required");
    if (!X_.allFinite() || !y_.allFinite()) throw FitError("design contains non-finite values");
    lambdas_.assign(lambdas.begin(), lambdas.end());
    S_ = penalty_matrix(X_.cols(), penalties, lambdas);
    std::size_t gmax = 0;
    for (auto g : groups) gmax = std::max(gmax, g + 1);
    group_of_.assign(groups.begin(), groups.end());
    m_.assign(gmax, 0.0);
    for (auto g : groups) m_[g] += 1.0;
    std::size_t used = 0;
    for (double mg : m_) used += mg > 0.0;
    if (used < 2) throw FitError("mixed model needs at least two groups");
    Sx_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gmax), X_.cols());
    sy_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(gmax));
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      const auto g = static_cast<Eigen::Index>(group_of_[static_cast<std::size_t>(i)]);
      Sx_.row(g) += X_.row(i);
      sy_[g] += y_[i];
    }
    G_ = X_.transpose() * X_;
    b_ = X_.transpose() * y_;
  }

  std::size_t n() const { return static_cast<std::size_t>(X_.rows()); }
  std::size_t group_count() const { return m_.size(); }
  const std::vector<double>& group_sizes() const { return m_; }

  struct Profile {
    Eigen::VectorXd beta;
    Eigen::VectorXd residual;
    double quad{0.0};    // r'W r + b'S b
    double logdet{0.0};  // sum_g log(1 + gamma m_g)
  };

  Profile profile(double gamma) const {
    Eigen::VectorXd c(static_cast<Eigen::Index>(m_.size()));
    double logdet = 0.0;
    for (std::size_t g = 0; g < m_.size(); ++g) {
      c[static_cast<Eigen::Index>(g)] = gamma / (1.0 + gamma * m_[g]);
      logdet += std::log1p(gamma * m_[g]);
    }
    Eigen::MatrixXd M = G_ + S_;
    M.noalias() -= Sx_.transpose() * c.asDiagonal() * Sx_;
    const Eigen::VectorXd rhs = b_ - Sx_.transpose() * c.cwiseProduct(sy_);
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
      M.diagonal().array() += 1e-10 * std::max(G_.trace(), 1e-300) / static_cast<double>(M.rows());
      llt.compute(M);
      if (llt.info() != Eigen::Success) throw FitError("mixed-model GLS system is singular");
    }
    Profile pr;
    pr.beta = llt.solve(rhs);
    pr.residual = y_ - X_ * pr.beta;
    Eigen::VectorXd rsum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m_.size()));
    for (Eigen::Index i = 0; i < pr.residual.size(); ++i)
      rsum[static_cast<Eigen::Index>(group_of_[static_cast<std::size_t>(i)])] += pr.residual[i];
    pr.quad = pr.residual.squaredNorm() - (c.array() * rsum.array().square()).sum() +
              pr.beta.dot(S_ * pr.beta);
    pr.logdet = logdet;
    return pr;
  }

  /// Log-likelihood with b profiled out, at arbitrary (s2_b, s2_e).
  double loglik(double sigma2_b, double sigma2_eps) const {
    const auto pr = profile(sigma2_b / sigma2_eps);
    const double dn = static_cast<double>(n());
    return -0.5 * (dn * std::log(2.0 * kPiValue * sigma2_eps) + pr.logdet + pr.quad / sigma2_eps);
  }

  /// Log-likelihood with b and s2_e profiled out; returns s2_e through `s2e`.
  double profiled_loglik(double gamma, double* s2e = nullptr) const {
    const auto pr = profile(gamma);
    const double dn = static_cast<double>(n());
    const double s2 = std::max(pr.quad / dn, 1e-300);
    if (s2e) *s2e = s2;
    return -0.5 * (dn * std::log(2.0 * kPiValue * s2) + pr.logdet + dn);
  }

  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::MatrixXd& penalty() const { return S_; }
  const std::vector<std::size_t>& group_of() const { return group_of_; }
  const std::vector<double>& lambdas() const { return lambdas_; }

  static constexpr double kPiValue = 3.14159265358979323846;

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd S_;
  std::vector<double> lambdas_;
  std::vector<std::size_t> group_of_;
  std::vector<double> m_;
  Eigen::MatrixXd Sx_;
  Eigen::VectorXd sy_;
  Eigen::MatrixXd G_;
  Eigen::VectorXd b_;
};

/// b_0 = m s2_b rbar / (m s2_b + s2_e), the random-intercept BLUP for one
/// trajectory with residuals `residuals`.
inline double blup_intercept(double sigma2_b, double sigma2_eps, std::span<const double> residuals) {
  if (residuals.empty()) throw FitError("BLUP needs at least one observed response");
  if (sigma2_b <= 0.0) return 0.0;
  double sum = 0.0;
  for (double r : residuals) sum += r;
  const double m = static_cast<double>(residuals.size());
  return sigma2_b * sum / (m * sigma2_b + sigma2_eps);
}

inline double blup_intercept(const MixedFit& fit, std::span<const double> residuals) {
  return blup_intercept(fit.sigma2_b, fit.sigma2_eps, residuals);
}

/// BLUP from design rows and observed responses of one new trajectory.
inline double blup_intercept(const MixedFit& fit, const Eigen::MatrixXd& rows,
                             std::span<const double> responses) {
  if (rows.rows() != static_cast<Eigen::Index>(responses.size()))
    throw FitError("rows and responses differ in length");
  std::vector<double> res(responses.size());
  for (std::size_t i = 0; i < responses.size(); ++i)
    res[i] = responses[i] - rows.row(static_cast<Eigen::Index>(i)).dot(fit.base.beta);
  return blup_intercept(fit, res);
}

inline double predict_mixed(const MixedFit& fit, double b0, std::span<const double> row) {
  return predict_linear(fit.base.beta, row) + b0;
}

namespace detail {

inline MixedFit finish_mixed(const MixedProblem& prob, double gamma, double loglik) {
  MixedFit f;
  const auto pr = prob.profile(gamma);
  const double dn = static_cast<double>(prob.n());
  f.sigma2_eps = std::max(pr.quad / dn, 1e-300);
  f.sigma2_b = gamma * f.sigma2_eps;
  f.loglik = loglik;
  f.boundary = gamma == 0.0;

  const auto& m = prob.group_sizes();
  const auto& gid = prob.group_of();
  std::vector<double> rsum(m.size(), 0.0);
  for (Eigen::Index i = 0; i < pr.residual.size(); ++i) rsum[gid[static_cast<std::size_t>(i)]] += pr.residual[i];
  f.group_blups.assign(m.size(), 0.0);
  std::vector<double> c(m.size(), 0.0);
  double tr_p = 0.0;
  for (std::size_t g = 0; g < m.size(); ++g) {
    c[g] = gamma / (1.0 + gamma * m[g]);
    f.group_blups[g] = c[g] * rsum[g];
    tr_p += c[g] * m[g];
  }

  // Conditional hat trace: tr((X'WX + S)^-1 X'W^2 X) + tr(P), P = Z (Z'Z + I/gamma)^-1 Z'.
  const auto& X = prob.X();
  Eigen::MatrixXd Sx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.size()), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) Sx.row(static_cast<Eigen::Index>(gid[static_cast<std::size_t>(i)])) += X.row(i);
  Eigen::MatrixXd WX = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto g = gid[static_cast<std::size_t>(i)];
    WX.row(i) -= c[g] * Sx.row(static_cast<Eigen::Index>(g));
  }
  Eigen::MatrixXd M = X.transpose() * WX + prob.penalty();
  const Eigen::MatrixXd W2 = WX.transpose() * WX;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  const double edf = ldlt.solve(W2).trace() + tr_p;

  Eigen::VectorXd cond = pr.residual;
  for (Eigen::Index i = 0; i < cond.size(); ++i) cond[i] -= f.group_blups[gid[static_cast<std::size_t>(i)]];
  const double rss = cond.squaredNorm();
  const double tss = (prob.y().array() - prob.y().mean()).square().sum();

  f.base.beta = pr.beta;
  f.base.lambdas = prob.lambdas();
  f.base.edf = edf;
  f.base.rss = rss;
  f.base.tss = tss;
  f.base.n = prob.n();
  f.base.sigma2_eps = f.sigma2_eps;
  f.base.adj_r2 = adjusted_r2(prob.n(), rss, tss, edf);
  f.base.gcv = gcv_value(prob.n(), rss, edf);
  return f;
}

}  // namespace detail

/// Coarse scan over ln(gamma), then golden-section refinement of the best
/// bracket. A maximum at the lower edge of the scan is reported as the
/// boundary estimate s2_b = 0.
inline MixedFit fit_mixed(const MixedProblem& prob, MixedOptions opt = {}) {
  std::vector<double> trace;
  auto ll = [&](double t) {
    const double v = prob.profiled_loglik(std::exp(t));
    trace.push_back(v);
    return v;
  };
  const std::size_t np = std::max<std::size_t>(opt.coarse_points, 3);
  const double step = (opt.log_ratio_hi - opt.log_ratio_lo) / static_cast<double>(np - 1);
  std::vector<double> vals(np);
  std::size_t best = 0;
  for (std::size_t i = 0; i < np; ++i) {
    vals[i] = ll(opt.log_ratio_lo + step * static_cast<double>(i));
    if (vals[i] > vals[best]) best = i;
  }
  if (best == 0) {
    const double l0 = prob.profiled_loglik(0.0);
    if (l0 >= vals[0]) {
      auto f = detail::finish_mixed(prob, 0.0, l0);
      f.iterations = np;
      f.loglik_trace = std::move(trace);
      return f;
    }
  }
  double a = opt.log_ratio_lo + step * static_cast<double>(best == 0 ? 0 : best - 1);
  double b = opt.log_ratio_lo + step * static_cast<double>(std::min(best + 1, np - 1));
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = ll(c), fd = ll(d);
  double prev = std::max(fc, fd);
  std::size_t it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = ll(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = ll(d);
    }
    const double cur = std::max(fc, fd);
    const bool flat = std::abs(cur - prev) < opt.tolerance;
    prev = cur;
    if (flat && (b - a) < 1e-9 * (1.0 + std::abs(a))) break;
  }
  if (it == opt.max_iterations)
    throw FitError("variance-component search did not converge after " +
                   std::to_string(opt.max_iterations) + " iterations");
  const double t = fc > fd ? c : d;
  auto f = detail::finish_mixed(prob, std::exp(t), std::max(fc, fd));
  f.iterations = np + it + 1;
  f.loglik_trace = std::move(trace);
  return f;
}

inline MixedFit fit_mixed(const DesignMatrix& design, std::span<const std::size_t> groups,
                          const std::vector<PenaltyBlock>& penalties,
                          std::span<const double> lambdas, MixedOptions opt = {}) {
  return fit_mixed(MixedProblem(design, groups, penalties, lambdas), opt);
}

}  // namespace bustime
