#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "mzip/data.hpp"
#include "mzip/error.hpp"
#include "mzip/likelihood.hpp"
#include "mzip/model.hpp"
#include "mzip/numerics.hpp"

namespace mzip {

struct FitResult {
  ParameterVector theta_hat;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd se;
  double loglik = 0.0;
  double aic = 0.0;
  int iterations = 0;
  bool converged = false;
  double final_grad_norm = 0.0;
  std::optional<double> nu_hat;
  std::optional<double> se_nu;

  Family family = Family::zip;
  ColumnNames columns;
  std::size_t n_subjects = 0;
  std::size_t n_obs = 0;
  int quadrature_points = 0;
  std::uint64_t seed = 0;
  double ridge = 0.0;  // added to H when it was numerically singular
  std::vector<double> loglik_trace;
  std::vector<std::string> diagnostics;

  Eigen::Index k() const { return theta_hat.size(); }
};

struct CovariateProfile {
  Eigen::VectorXd h1, h2, w;
};

struct CovarianceProfile {
  CovariateProfile profile;
  double sigma1 = 0.0, sigma2 = 0.0, rho = 0.0;
  Eigen::Matrix2d Sigma;
};

struct WaldRow {
  std::string name;
  double estimate = 0.0, se = 0.0, z = 0.0, p = 0.0, ci_lo = 0.0, ci_hi = 0.0;
  bool p_defined = true;
};

struct LrtResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline double aic(double loglik, Eigen::Index k) {
  if (k < 0) throw Error(Errc::domain_error, "inference", "parameter count must be nonnegative");
  return -2.0 * loglik + 2.0 * static_cast<double>(k);
}

inline LrtResult lrt(double loglik_null, double loglik_alt, int df) {
  if (df < 1) throw Error(Errc::domain_error, "inference", "LRT degrees of freedom must be >= 1");
  if (loglik_alt < loglik_null - 1e-8) {
    throw Error(Errc::negative_statistic, "inference", "alternative log-likelihood is below the null");
  }
  LrtResult r;
  r.statistic = std::max(0.0, 2.0 * (loglik_alt - loglik_null));
  r.p_value = chi2_sf(r.statistic, df);
  return r;
}

namespace detail {

// Newton-Raphson for a canonical-link GLM with working weights from `fam`.
// fam(eta) returns {mean, variance}; the log-likelihood is supplied for the halving guard.
template <class MeanVar, class LogLik>
Eigen::VectorXd glm_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& offset,
                           Eigen::VectorXd beta, MeanVar fam, LogLik ll, int max_steps) {
  auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = X * b + offset;
    double s = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) s += ll(y[i], eta[i]);
    return s;
  };
  double cur = loglik(beta);
  for (int step = 0; step < max_steps; ++step) {
    const Eigen::VectorXd eta = X * beta + offset;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(X.cols());
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(X.cols(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const auto [m, v] = fam(eta[i]);
      grad += (y[i] - m) * X.row(i).transpose();
      info.selfadjointView<Eigen::Lower>().rankUpdate(X.row(i).transpose(), v);
    }
    info.triangularView<Eigen::StrictlyUpper>() = info.transpose();
    info.diagonal().array() += 1e-10 * (1.0 + info.diagonal().array().abs());
    const Eigen::VectorXd dir = info.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      const Eigen::VectorXd cand = beta + t * dir;
      const double val = loglik(cand);
      if (std::isfinite(val) && val >= cur) {
        moved = val > cur;
        beta = cand;
        cur = val;
        break;
      }
    }
    if (!moved || grad.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  return beta;
}

}  // namespace detail

namespace detail {

struct SpdSolve {
  Eigen::MatrixXd inverse;
  double ridge = 0.0;
};

// Inverse of a symmetric PSD matrix; a ridge of 1e-8 tr(H)/k is added when it
// is numerically singular.
inline SpdSolve spd_inverse(Eigen::MatrixXd H) {
  const Eigen::Index k = H.rows();
  SpdSolve out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  const double max_ev = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 1e-13 * max_ev) || !(max_ev > 0.0)) {
    out.ridge = 1e-8 * std::max(H.trace(), 1e-300) / static_cast<double>(k);
    H.diagonal().array() += out.ridge;
    es.compute(H);
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) {
      throw Error(Errc::singular_information, "inference", "information matrix is singular");
    }
  }
  out.inverse = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  out.inverse = 0.5 * (out.inverse + out.inverse.transpose()).eval();
  return out;
}

}  // namespace detail

namespace detail {

// Predicted log-likelihood gain g'H^{-1}g/2 below which the observed information
// is used (a chi-square(k)/2-sized neighbourhood of the maximum).
inline constexpr double kNewtonDecrement = 25.0;

// Newton direction J^{-1} g with J = -d score / d theta from forward differences
// of the analytic score; empty when J is not positive definite.
inline std::optional<Eigen::VectorXd> observed_information_step(const Dataset& ds, const ParameterVector& theta,
                                                                 const ModelSpec& spec, const QuadratureRule& rule,
                                                                 const Eigen::VectorXd& score) {
  const Eigen::Index k = theta.size();
  Eigen::MatrixXd J(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    ParameterVector shifted = theta;
    const double h = 1e-6 * (1.0 + std::abs(theta.flat()[j]));
    shifted.flat()[j] += h;
    try {
      J.col(j) = -(analytic_score(ds, shifted, spec, rule) - score) / h;
    } catch (const Error&) {
      return std::nullopt;
    }
  }
  J = 0.5 * (J + J.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(J);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd dir = llt.solve(score);
  if (!dir.allFinite()) return std::nullopt;
  return dir;
}

}  // namespace detail

/// Quasi-Newton maximization with the empirical information
///   theta <- theta + t H^{-1} g,   H = sum_i g_i g_i',
/// where t is halved (up to 30 times) until the log-likelihood does not decrease.
/// Close to the maximum the direction uses the observed information instead,
/// which restores quadratic convergence to the gradient tolerance.
inline FitResult fit(const Dataset& ds, const ModelSpec& spec, const ParameterVector& init) {
  validate(ds, spec);
  if (!(init.sizes() == spec.sizes())) {
    throw Error(Errc::dimension_mismatch, "inference", "initial parameter blocks do not match the model");
  }
  const QuadratureRule rule = gauss_hermite(spec.quadrature_points);

  FitResult res;
  res.family = spec.family;
  res.columns = spec.covariates;
  res.n_subjects = ds.subjects.size();
  res.n_obs = ds.n_obs();
  res.quadrature_points = spec.quadrature_points;
  res.seed = spec.seed;

  ParameterVector theta = init;
  Evaluation ev = evaluate(ds, theta, spec, rule, true);
  res.loglik_trace.push_back(ev.loglik);
  // Acceptance floor: log-likelihood changes below summation round-off are not declines.
  const auto floor_of = [&](double ll) {
    return 16.0 * std::numeric_limits<double>::epsilon() * (std::abs(ll) + static_cast<double>(ds.n_obs()));
  };

  int small_change = 0;
  for (int iter = 0; iter < spec.max_iter; ++iter) {
    if (ev.score.cwiseAbs().maxCoeff() < spec.grad_tol) break;
    const auto solve = detail::spd_inverse(empirical_information(ev.subject_scores));
    if (solve.ridge > 0.0) {
      res.diagnostics.push_back("iteration " + std::to_string(iter + 1) + ": ridge added to singular information");
    }
    Eigen::VectorXd dir = solve.inverse * ev.score;
    // Near the maximum the empirical-information step contracts only linearly;
    // once its predicted gain is small, switch to the observed information.
    if (0.5 * ev.score.dot(dir) < detail::kNewtonDecrement) {
      if (auto newton = detail::observed_information_step(ds, theta, spec, rule, ev.score)) dir = *newton;
    }

    double t = 1.0;
    std::optional<ParameterVector> accepted;
    double accepted_ll = ev.loglik;
    for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
      ParameterVector cand(theta.sizes(), theta.flat() + t * dir);
      double ll = -std::numeric_limits<double>::infinity();
      try {
        ll = total_loglik(ds, cand, spec, rule);
      } catch (const Error&) {
        // Out-of-domain trial point (e.g. |rho| -> 1); treat as a decrease.
      }
      if (std::isfinite(ll) && ll >= ev.loglik - floor_of(ev.loglik)) {
        accepted = std::move(cand);
        accepted_ll = ll;
        break;
      }
    }
    if (!accepted) {
      res.diagnostics.push_back("iteration " + std::to_string(iter + 1) + ": line search found no ascent");
      break;
    }
    const double rel_change = std::abs(accepted_ll - ev.loglik) / (1.0 + std::abs(ev.loglik));
    theta = std::move(*accepted);
    ev = evaluate(ds, theta, spec, rule, true);
    res.loglik_trace.push_back(ev.loglik);
    ++res.iterations;
    small_change = rel_change < spec.loglik_rel_tol ? small_change + 1 : 0;
    if (small_change >= 5) {
      res.diagnostics.push_back("log-likelihood stalled (relative change < " + std::to_string(spec.loglik_rel_tol) +
                                " for 5 iterations)");
      break;
    }
  }

  res.theta_hat = theta;
  res.loglik = ev.loglik;
  res.final_grad_norm = ev.score.cwiseAbs().maxCoeff();
  res.converged = res.final_grad_norm < spec.grad_tol;
  res.aic = aic(res.loglik, theta.size());
  const auto solve = detail::spd_inverse(empirical_information(ev.subject_scores));
  res.ridge = solve.ridge;
  if (solve.ridge > 0.0) res.diagnostics.push_back("SingularInformation: ridge added at the estimate");
  res.vcov = solve.inverse;
  res.se = res.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  if (theta.has_nu()) {
    const Eigen::Index j = theta.sizes().nu_offset();
    res.nu_hat = theta.nu();
    res.se_nu = *res.nu_hat * res.se[j];  // delta method
  }
  return res;
}

inline constexpr int kWarmStartOrder = 5;

/// Deterministic starting values: gamma from a logistic fit of 1{y = 0} on x1,
/// alpha from a Poisson log-linear fit of y on x2 with log(offset), both
/// then refined by a short fit at quadrature order kWarmStartOrder starting from
/// zeta = delta = 0, log nu = 0.
inline ParameterVector initialize(const Dataset& ds, const ModelSpec& spec) {
  validate(ds, spec);
  const BlockSizes sz = spec.sizes();
  const auto n = static_cast<Eigen::Index>(ds.n_obs());
  Eigen::MatrixXd X1(n, sz.p1), X2(n, sz.p2);
  Eigen::VectorXd zero(n), y(n), log_off(n);
  Eigen::Index r = 0;
  std::size_t zeros = 0;
  for (const auto& s : ds.subjects) {
    for (const auto& o : s.obs) {
      X1.row(r) = o.x1.transpose();
      X2.row(r) = o.x2.transpose();
      zero[r] = o.y == 0 ? 1.0 : 0.0;
      y[r] = static_cast<double>(o.y);
      log_off[r] = std::log(o.offset);
      zeros += o.y == 0;
      ++r;
    }
  }
  if (zeros == 0 || zeros == ds.n_obs()) {
    throw Error(Errc::degenerate_data, "inference",
                zeros == 0 ? "no zero counts: the zero-inflation model is not identifiable"
                           : "all counts are zero: the count model is not identifiable");
  }
  const double frac = static_cast<double>(zeros) / static_cast<double>(ds.n_obs());
  if (frac < 0.01 || frac > 0.99) {
    throw Error(Errc::degenerate_data, "inference",
                "zero fraction " + std::to_string(frac) + " is outside [0.01, 0.99]");
  }

  ParameterVector theta(sz);
  theta.gamma() = detail::glm_newton(
      X1, zero, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(sz.p1),
      [](double eta) {
        const double p = detail::logistic(eta);
        return std::pair{p, p * (1.0 - p)};
      },
      [](double yi, double eta) { return yi * eta - detail::softplus(eta); }, 25);
  theta.alpha() = detail::glm_newton(
      X2, y, log_off, Eigen::VectorXd::Zero(sz.p2),
      [](double eta) {
        const double m = std::exp(eta);
        return std::pair{m, m};
      },
      [](double yi, double eta) { return yi * eta - std::exp(eta); }, 25);
  if (sz.has_nu) theta.set_log_nu(0.0);
  if (spec.quadrature_points <= kWarmStartOrder) return theta;

  // Warm start: a short fit of the full model at coarse quadrature moves the
  // zero-block intercepts away from the GLM values, which mistake the extra
  // zeros induced by the random intercepts for structural zeros.
  ModelSpec coarse = spec;
  coarse.quadrature_points = kWarmStartOrder;
  coarse.max_iter = 25;
  coarse.grad_tol = 1e-3;
  try {
    const FitResult warm = fit(ds, coarse, theta);
    if (std::isfinite(warm.loglik) && warm.theta_hat.flat().allFinite()) theta = warm.theta_hat;
  } catch (const Error&) {
    // Keep the GLM values.
  }
  return theta;
}

inline std::vector<CovarianceProfile> covariance_profiles(const FitResult& fit,
                                                          const std::vector<CovariateProfile>& profiles) {
  std::vector<CovarianceProfile> out;
  for (const auto& p : profiles) {
    const SubjectCovariance cov = subject_covariance(fit.theta_hat.zeta1(), fit.theta_hat.zeta2(),
                                                     fit.theta_hat.delta(), p.h1, p.h2, p.w);
    out.push_back({p, cov.sigma1, cov.sigma2, cov.rho, cov.Sigma});
  }
  return out;
}

inline std::vector<WaldRow> wald_table(const FitResult& fit, double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw Error(Errc::domain_error, "inference", "confidence level must be in (0, 1)");
  const double crit = norm_quantile(0.5 + 0.5 * level);
  const auto names = fit.theta_hat.names(fit.columns);
  std::vector<WaldRow> rows;
  for (Eigen::Index j = 0; j < fit.theta_hat.size(); ++j) {
    WaldRow r;
    r.name = names[static_cast<std::size_t>(j)];
    r.estimate = fit.theta_hat.flat()[j];
    r.se = fit.se[j];
    if (r.se > 0.0) {
      r.z = r.estimate / r.se;
      r.p = std::erfc(std::abs(r.z) / std::numbers::sqrt2);
    } else {
      r.z = std::numeric_limits<double>::quiet_NaN();
      r.p = std::numeric_limits<double>::quiet_NaN();
      r.p_defined = false;
    }
    r.ci_lo = r.estimate - crit * r.se;
    r.ci_hi = r.estimate + crit * r.se;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace mzip
