#pragma once

// Marginal log-likelihood by tensorized Gauss-Hermite quadrature over the
// bivariate random intercepts, with analytic scores.
//
// For subject i with Sigma_i = C C', the integral over b ~ N(0, Sigma_i) is
// mapped to the physicists' rule through b = sqrt(2) C u:
//
//   L_i = pi^{-1} sum_{j,k} w_j w_k prod_t f(y_t | b_jk)
//
// and evaluated in log space. The score differentiates this approximation
// exactly: besides the Delta1/Delta2 chain terms, the nodes b_jk move with
// (zeta1, zeta2, delta) through C.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "mzip/data.hpp"
#include "mzip/error.hpp"
#include "mzip/model.hpp"
#include "mzip/numerics.hpp"
#include "mzip/parallel.hpp"

namespace mzip {

using ScoreVector = Eigen::VectorXd;
using InformationMatrix = Eigen::MatrixXd;

/// How the covariance-block scores are assembled.
///  - quadrature_exact: derivative of the quadrature approximation itself
///    (nodes move with Sigma_i); agrees with finite differences of the
///    computed log-likelihood to rounding.
///  - density: derivative of the N(0, Sigma_i) density at fixed b, the
///    textbook form built from dSigma^{-1}/dzeta and dSigma^{-1}/ddelta.
///    Equal to the former up to quadrature error.
enum class ScoreForm { quadrature_exact, density };

struct SubjectEvaluation {
  double loglik = 0.0;
  ScoreVector score;  // empty unless requested
};

struct Evaluation {
  double loglik = 0.0;
  ScoreVector score;
  std::vector<ScoreVector> subject_scores;
};

namespace detail {

inline void check_family(const ParameterVector& theta, Family family) {
  if (theta.has_nu() != (family == Family::zinb)) {
    throw Error(Errc::dimension_mismatch, "likelihood",
                "parameter vector and model family disagree about the dispersion block");
  }
}

}  // namespace detail

inline SubjectEvaluation evaluate_subject(const Subject& s, const ParameterVector& theta, Family family,
                                          const QuadratureRule& rule, bool with_score,
                                          ScoreForm form = ScoreForm::quadrature_exact) {
  detail::check_family(theta, family);
  const BlockSizes& sz = theta.sizes();
  const SubjectCovariance cov = subject_covariance(theta, s);
  const double s1 = cov.sigma1, s2 = cov.sigma2, rho = cov.rho;
  const double one_m_rho2 = (1.0 - rho) * (1.0 + rho);
  const double rr = std::sqrt(one_m_rho2);
  const double sq1 = std::sqrt(1.0 + s1 * s1);
  const bool zinb = family == Family::zinb;
  const double nu = zinb ? theta.nu() : 0.0;

  const std::size_t n = s.obs.size();
  const int Q = rule.order();
  const std::size_t nodes = static_cast<std::size_t>(Q) * Q;

  // Per-observation marginal pieces.
  std::vector<double> d1(n), d2(n), exp_d2(n), lfac(n), lnr(n), dnr(n), c_gamma1(n), c_zeta1(n), p_m(n);
  for (std::size_t t = 0; t < n; ++t) {
    const Observation& o = s.obs[t];
    const double tz = o.x1.dot(theta.gamma());
    const double q = detail::probit_of_logit(tz);
    d1[t] = sq1 * q;
    d2[t] = o.x2.dot(theta.alpha()) + std::log(o.offset) + detail::softplus(tz) - 0.5 * s2 * s2;
    exp_d2[t] = std::exp(d2[t]);
    const double yd = static_cast<double>(o.y);
    lfac[t] = std::lgamma(yd + 1.0);
    if (zinb) {
      lnr[t] = detail::nb_gamma_ratio_log(o.y, nu);
      double acc = 0.0;
      for (std::int64_t l = 1; l < o.y; ++l) acc += static_cast<double>(l) / (1.0 + nu * static_cast<double>(l));
      dnr[t] = acc;
    }
    if (with_score) {
      // dDelta1/dgamma = sqrt(1+s1^2) p(1-p)/phi(q) x1; formed in logs for the tails.
      const double log_p = -detail::softplus(-tz), log_1mp = -detail::softplus(tz);
      c_gamma1[t] = sq1 * std::exp(log_p + log_1mp - log_norm_pdf(q));
      c_zeta1[t] = s1 * s1 / sq1 * q;
      p_m[t] = std::exp(log_p);
    }
  }

  std::vector<double> log_w(Q), u(rule.nodes);
  for (int j = 0; j < Q; ++j) log_w[j] = std::log(rule.weights[j]);
  const double log_norm = -std::log(std::numbers::pi);
  const double sqrt2 = std::numbers::sqrt2;

  std::vector<double> S(nodes);
  std::vector<double> nd1, nd2, ndnu;  // per node x observation derivatives
  if (with_score) {
    nd1.resize(nodes * n);
    nd2.resize(nodes * n);
    if (zinb) ndnu.resize(nodes * n);
  }
  std::vector<double> logp(n), log1mp(n), logphi(n), mills(n);

  for (int j = 0; j < Q; ++j) {
    const double b1 = sqrt2 * s1 * u[j];
    for (std::size_t t = 0; t < n; ++t) {
      const double e1 = d1[t] + b1;
      logp[t] = log_norm_cdf(e1);
      log1mp[t] = log_norm_cdf(-e1);
      logphi[t] = log_norm_pdf(e1);
      mills[t] = std::exp(logphi[t] - log1mp[t]);
    }
    for (int k = 0; k < Q; ++k) {
      const double b2 = sqrt2 * s2 * (rho * u[j] + rr * u[k]);
      const double exp_b2 = std::exp(b2);
      const std::size_t node = static_cast<std::size_t>(j) * Q + k;
      double acc = log_norm + log_w[j] + log_w[k];
      for (std::size_t t = 0; t < n; ++t) {
        const std::int64_t y = s.obs[t].y;
        const double yd = static_cast<double>(y);
        const double e2 = d2[t] + b2;
        const double lam = exp_d2[t] * exp_b2;
        double lf, g1 = 0.0, g2 = 0.0, gnu = 0.0;
        if (!zinb) {
          if (y == 0) {
            const double lg0 = -lam;
            lf = log_add_exp(logp[t], log1mp[t] + lg0);
            if (with_score) {
              g1 = std::exp(logphi[t] + std::log(-std::expm1(lg0)) - lf);
              g2 = -lam * std::exp(log1mp[t] + lg0 - lf);
            }
          } else {
            lf = log1mp[t] - lam + yd * e2 - lfac[t];
            if (with_score) {
              g1 = -mills[t];
              g2 = yd - lam;
            }
          }
        } else {
          const double nl = nu * lam;
          const double l1p = std::log1p(nl);
          if (y == 0) {
            const double lg0 = -l1p / nu;
            lf = log_add_exp(logp[t], log1mp[t] + lg0);
            if (with_score) {
              const double ratio = std::exp(log1mp[t] + lg0 - lf);
              g1 = std::exp(logphi[t] + std::log(-std::expm1(lg0)) - lf);
              g2 = -ratio * lam / (1.0 + nl);
              gnu = ratio * (l1p / (nu * nu) - lam / (nu * (1.0 + nl)));
            }
          } else {
            lf = log1mp[t] + lnr[t] - (yd + 1.0 / nu) * l1p + yd * e2 - lfac[t];
            if (with_score) {
              g1 = -mills[t];
              g2 = (yd - lam) / (1.0 + nl);
              gnu = dnr[t] + l1p / (nu * nu) - (yd + 1.0 / nu) * lam / (1.0 + nl);
            }
          }
        }
        acc += lf;
        if (with_score) {
          nd1[node * n + t] = g1;
          nd2[node * n + t] = g2;
          if (zinb) ndnu[node * n + t] = gnu;
        }
      }
      if (std::isnan(acc)) {
        throw Error(Errc::non_finite_likelihood, "likelihood", "NaN integrand for subject '" + s.id + "'");
      }
      S[node] = acc;
    }
  }

  SubjectEvaluation out;
  out.loglik = log_sum_exp(S);
  if (!std::isfinite(out.loglik)) {
    throw Error(Errc::non_finite_likelihood, "likelihood", "non-finite log-likelihood for subject '" + s.id + "'");
  }
  if (!with_score) return out;

  // Posterior-weighted accumulation over nodes.
  std::vector<double> ed1(n, 0.0), ed2(n, 0.0), ednu(n, 0.0);
  double e_b1a1 = 0.0, e_b2a2 = 0.0, e_drho_a2 = 0.0;  // quadrature_exact pieces
  double e_dens1 = 0.0, e_dens2 = 0.0, e_densr = 0.0;  // density pieces (per unit covariate)

  // Density-form matrices: Sigma^{-1} = D^{-1} R^{-1} D^{-1}.
  Eigen::Matrix2d Dinv = Eigen::Vector2d(1.0 / s1, 1.0 / s2).asDiagonal();
  Eigen::Matrix2d Rinv;
  Rinv << 1.0, -rho, -rho, 1.0;
  Rinv /= one_m_rho2;
  const Eigen::Matrix2d dDinv1 = Eigen::Vector2d(-1.0 / s1, 0.0).asDiagonal();
  const Eigen::Matrix2d dDinv2 = Eigen::Vector2d(0.0, -1.0 / s2).asDiagonal();
  const Eigen::Matrix2d dSinv1 = dDinv1 * Rinv * Dinv + Dinv * Rinv * dDinv1;
  const Eigen::Matrix2d dSinv2 = dDinv2 * Rinv * Dinv + Dinv * Rinv * dDinv2;
  const double drho = one_m_rho2;  // drho/d(w'delta)
  Eigen::Matrix2d dRinv;
  dRinv << 2.0 * rho, -(1.0 + rho * rho), -(1.0 + rho * rho), 2.0 * rho;
  dRinv *= drho / (one_m_rho2 * one_m_rho2);
  const Eigen::Matrix2d dSinvr = Dinv * dRinv * Dinv;

  for (int j = 0; j < Q; ++j) {
    const double b1 = sqrt2 * s1 * u[j];
    for (int k = 0; k < Q; ++k) {
      const std::size_t node = static_cast<std::size_t>(j) * Q + k;
      const double pi_node = std::exp(S[node] - out.loglik);
      if (pi_node == 0.0) continue;
      const double b2 = sqrt2 * s2 * (rho * u[j] + rr * u[k]);
      double a1 = 0.0, a2 = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double g1 = nd1[node * n + t], g2 = nd2[node * n + t];
        a1 += g1;
        a2 += g2;
        ed1[t] += pi_node * g1;
        ed2[t] += pi_node * g2;
        if (zinb) ednu[t] += pi_node * ndnu[node * n + t];
      }
      if (form == ScoreForm::quadrature_exact) {
        e_b1a1 += pi_node * b1 * a1;
        e_b2a2 += pi_node * b2 * a2;
        e_drho_a2 += pi_node * sqrt2 * s2 * (u[j] - rho / rr * u[k]) * a2;
      } else {
        const Eigen::Vector2d b(b1, b2);
        e_dens1 += pi_node * (-1.0 - 0.5 * b.dot(dSinv1 * b));
        e_dens2 += pi_node * (-1.0 - 0.5 * b.dot(dSinv2 * b));
        e_densr += pi_node * (rho / one_m_rho2 * drho - 0.5 * b.dot(dSinvr * b));
      }
    }
  }

  ScoreVector g = ScoreVector::Zero(sz.size());
  auto g_gamma = g.segment(sz.gamma_offset(), sz.p1);
  auto g_alpha = g.segment(sz.alpha_offset(), sz.p2);
  double sum_z1 = 0.0, sum_z2 = 0.0, sum_nu = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const Observation& o = s.obs[t];
    g_gamma += (ed1[t] * c_gamma1[t] + ed2[t] * p_m[t]) * o.x1;
    g_alpha += ed2[t] * o.x2;
    sum_z1 += ed1[t] * c_zeta1[t];
    sum_z2 += -s2 * s2 * ed2[t];
    sum_nu += ednu[t];
  }
  if (form == ScoreForm::quadrature_exact) {
    g.segment(sz.zeta1_offset(), sz.a) = (sum_z1 + e_b1a1) * s.h1;
    g.segment(sz.zeta2_offset(), sz.b) = (sum_z2 + e_b2a2) * s.h2;
    g.segment(sz.delta_offset(), sz.c) = e_drho_a2 * drho * s.w;
  } else {
    g.segment(sz.zeta1_offset(), sz.a) = (sum_z1 + e_dens1) * s.h1;
    g.segment(sz.zeta2_offset(), sz.b) = (sum_z2 + e_dens2) * s.h2;
    g.segment(sz.delta_offset(), sz.c) = e_densr * s.w;
  }
  if (zinb) g[sz.nu_offset()] = nu * sum_nu;  // d/dlog(nu) = nu d/dnu
  if (!g.allFinite()) {
    throw Error(Errc::non_finite_likelihood, "likelihood", "non-finite score for subject '" + s.id + "'");
  }
  out.score = std::move(g);
  return out;
}

inline Evaluation evaluate(const Dataset& ds, const ParameterVector& theta, const ModelSpec& spec,
                           const QuadratureRule& rule, bool with_score,
                           ScoreForm form = ScoreForm::quadrature_exact) {
  std::vector<SubjectEvaluation> parts(ds.subjects.size());
  parallel_for(ds.subjects.size(), spec.threads, [&](std::size_t i) {
    parts[i] = evaluate_subject(ds.subjects[i], theta, spec.family, rule, with_score, form);
  });
  Evaluation ev;
  if (with_score) ev.score = ScoreVector::Zero(theta.size());
  for (auto& p : parts) {  // fixed-order reduction
    ev.loglik += p.loglik;
    if (with_score) {
      ev.score += p.score;
      ev.subject_scores.push_back(std::move(p.score));
    }
  }
  return ev;
}

inline double subject_loglik(const Subject& s, const ParameterVector& theta, const ModelSpec& spec,
                             const QuadratureRule& rule) {
  return evaluate_subject(s, theta, spec.family, rule, false).loglik;
}

inline double total_loglik(const Dataset& ds, const ParameterVector& theta, const ModelSpec& spec,
                           const QuadratureRule& rule) {
  return evaluate(ds, theta, spec, rule, false).loglik;
}

inline ScoreVector analytic_score(const Dataset& ds, const ParameterVector& theta, const ModelSpec& spec,
                                  const QuadratureRule& rule, ScoreForm form = ScoreForm::quadrature_exact) {
  return evaluate(ds, theta, spec, rule, true, form).score;
}

/// Central differences of f at x with per-coordinate step step*(1 + |x_j|).
inline Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                                  const Eigen::VectorXd& x, double step) {
  if (!(step > 0.0)) throw Error(Errc::domain_error, "likelihood", "finite-difference step must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = step * (1.0 + std::abs(x[j]));
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline ScoreVector finite_difference_score(const Dataset& ds, const ParameterVector& theta, const ModelSpec& spec,
                                           const QuadratureRule& rule, double step) {
  return finite_difference_gradient(
      [&](const Eigen::VectorXd& x) { return total_loglik(ds, ParameterVector(theta.sizes(), x), spec, rule); },
      theta.flat(), step);
}

/// Sum of outer products of per-subject scores.
inline InformationMatrix empirical_information(std::span<const ScoreVector> scores) {
  if (scores.empty()) throw Error(Errc::empty_input, "likelihood", "no subject scores");
  const Eigen::Index k = scores.front().size();
  InformationMatrix H = InformationMatrix::Zero(k, k);
  for (const auto& g : scores) {
    if (g.size() != k) throw Error(Errc::dimension_mismatch, "likelihood", "score vectors differ in length");
    H.selfadjointView<Eigen::Lower>().rankUpdate(g);
  }
  H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
  return H;
}

/// max_j |a_j - b_j| / max(||b||_inf, 1): the discrepancy measure used by gradcheck.
inline double max_relative_discrepancy(const Eigen::VectorXd& analytic, const Eigen::VectorXd& reference) {
  const double scale = std::max(reference.cwiseAbs().maxCoeff(), 1.0);
  return (analytic - reference).cwiseAbs().maxCoeff() / scale;
}

struct GradientCheck {
  ScoreVector analytic;
  ScoreVector reference;  // central finite differences of the log-likelihood
  double discrepancy = 0.0;
};

/// Analytic score versus central finite differences at theta.
inline GradientCheck gradient_check(const Dataset& ds, const ParameterVector& theta, const ModelSpec& spec,
                                    const QuadratureRule& rule, double step = 1e-5) {
  GradientCheck out;
  out.analytic = analytic_score(ds, theta, spec, rule);
  out.reference = finite_difference_score(ds, theta, spec, rule, step);
  out.discrepancy = max_relative_discrepancy(out.analytic, out.reference);
  return out;
}

}  // namespace mzip
