#pragma once

// Deterministic model mathematics for marginalized zero-inflated Poisson and
// negative-binomial models with bivariate random intercepts:
//
//   logit p^M = x1'gamma                        (mixing proportion)
//   log mu    = x2'alpha + log(offset)          (overall mean, mu = (1-p^M) lambda^M)
//   Phi^{-1} p^c(b) = Delta1 + b1,  log lambda^c(b) = Delta2 + b2
//   b ~ N(0, Sigma_i),  Sigma_i = D_i R_i D_i
//   log sigma1 = h1'zeta1,  log sigma2 = h2'zeta2,  atanh(rho) = w'delta

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mzip/data.hpp"
#include "mzip/error.hpp"
#include "mzip/numerics.hpp"

namespace mzip {

/// Flattened (gamma, alpha, zeta1, zeta2, delta[, log nu]).
class ParameterVector {
 public:
  using Segment = Eigen::VectorBlock<Eigen::VectorXd>;
  using ConstSegment = Eigen::VectorBlock<const Eigen::VectorXd>;

  ParameterVector() = default;
  explicit ParameterVector(const BlockSizes& sizes)
      : sizes_(sizes), values_(Eigen::VectorXd::Zero(sizes.size())) {}
  ParameterVector(const BlockSizes& sizes, Eigen::VectorXd flat) : sizes_(sizes), values_(std::move(flat)) {
    if (values_.size() != sizes_.size()) {
      throw Error(Errc::dimension_mismatch, "model",
                  "parameter vector has length " + std::to_string(values_.size()) + ", blocks need " +
                      std::to_string(sizes_.size()));
    }
  }

  static ParameterVector from_blocks(const Eigen::VectorXd& gamma, const Eigen::VectorXd& alpha,
                                     const Eigen::VectorXd& zeta1, const Eigen::VectorXd& zeta2,
                                     const Eigen::VectorXd& delta, std::optional<double> nu = std::nullopt) {
    BlockSizes sz{gamma.size(), alpha.size(), zeta1.size(), zeta2.size(), delta.size(), nu.has_value()};
    ParameterVector p(sz);
    p.gamma() = gamma;
    p.alpha() = alpha;
    p.zeta1() = zeta1;
    p.zeta2() = zeta2;
    p.delta() = delta;
    if (nu) {
      if (!(*nu > 0.0)) throw Error(Errc::domain_error, "model", "dispersion nu must be positive");
      p.set_log_nu(std::log(*nu));
    }
    return p;
  }

  const BlockSizes& sizes() const { return sizes_; }
  Eigen::Index size() const { return values_.size(); }
  const Eigen::VectorXd& flat() const { return values_; }
  Eigen::VectorXd& flat() { return values_; }

  ConstSegment gamma() const { return values_.segment(sizes_.gamma_offset(), sizes_.p1); }
  ConstSegment alpha() const { return values_.segment(sizes_.alpha_offset(), sizes_.p2); }
  ConstSegment zeta1() const { return values_.segment(sizes_.zeta1_offset(), sizes_.a); }
  ConstSegment zeta2() const { return values_.segment(sizes_.zeta2_offset(), sizes_.b); }
  ConstSegment delta() const { return values_.segment(sizes_.delta_offset(), sizes_.c); }
  Segment gamma() { return values_.segment(sizes_.gamma_offset(), sizes_.p1); }
  Segment alpha() { return values_.segment(sizes_.alpha_offset(), sizes_.p2); }
  Segment zeta1() { return values_.segment(sizes_.zeta1_offset(), sizes_.a); }
  Segment zeta2() { return values_.segment(sizes_.zeta2_offset(), sizes_.b); }
  Segment delta() { return values_.segment(sizes_.delta_offset(), sizes_.c); }

  bool has_nu() const { return sizes_.has_nu; }
  double log_nu() const {
    if (!has_nu()) throw Error(Errc::dimension_mismatch, "model", "parameter vector has no dispersion block");
    return values_[sizes_.nu_offset()];
  }
  double nu() const { return std::exp(log_nu()); }
  void set_log_nu(double v) {
    if (!has_nu()) throw Error(Errc::dimension_mismatch, "model", "parameter vector has no dispersion block");
    values_[sizes_.nu_offset()] = v;
  }

  /// Human-readable labels, e.g. "gamma[time]", "log_nu".
  std::vector<std::string> names(const ColumnNames& cols) const {
    std::vector<std::string> out;
    auto add = [&](const char* block, const std::vector<std::string>& c, Eigen::Index n) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto k = static_cast<std::size_t>(j);
        out.push_back(std::string(block) + "[" + (k < c.size() ? c[k] : std::to_string(j)) + "]");
      }
    };
    add("gamma", cols.zero, sizes_.p1);
    add("alpha", cols.mean, sizes_.p2);
    add("zeta1", cols.sigma1, sizes_.a);
    add("zeta2", cols.sigma2, sizes_.b);
    add("delta", cols.rho, sizes_.c);
    if (sizes_.has_nu) out.emplace_back("log_nu");
    return out;
  }

 private:
  BlockSizes sizes_;
  Eigen::VectorXd values_;
};

struct SubjectCovariance {
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  double rho = 0.0;
  Eigen::Matrix2d Sigma = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d sqrt_factor = Eigen::Matrix2d::Identity();  // lower triangular, C C' = Sigma
};

struct MarginalQuantities {
  double p_M = 0.0;
  double mu = 0.0;
  double eta_M = 0.0;
  double lambda_M = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
};

struct ConditionalRates {
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  double p_c = 0.0;
  double lambda_c = 0.0;
};

namespace detail {

inline void require_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw Error(Errc::dimension_mismatch, "model",
                std::string(what) + ": lengths " + std::to_string(a) + " and " + std::to_string(b));
  }
}

inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

/// Phi^{-1}(logistic(t)), taking the quantile on the smaller tail.
inline double probit_of_logit(double t) {
  return t <= 0.0 ? norm_quantile(logistic(t)) : -norm_quantile(logistic(-t));
}

/// ZIP log-pmf from log p, log(1-p) and lambda.
inline double zip_log_pmf_lp(std::int64_t y, double log_p, double log_1mp, double lambda) {
  if (y == 0) return log_add_exp(log_p, log_1mp - lambda);
  const double yd = static_cast<double>(y);
  return log_1mp - lambda + yd * std::log(lambda) - std::lgamma(yd + 1.0);
}

/// sum_{l=0}^{y-1} log(1 + nu l), the log Gamma ratio with the nu^y factors cancelled.
inline double nb_gamma_ratio_log(std::int64_t y, double nu) {
  double s = 0.0;
  for (std::int64_t l = 1; l < y; ++l) s += std::log1p(nu * static_cast<double>(l));
  return s;
}

inline double zinb_log_pmf_lp(std::int64_t y, double log_p, double log_1mp, double lambda, double nu) {
  const double l1p = std::log1p(nu * lambda);
  if (y == 0) return log_add_exp(log_p, log_1mp - l1p / nu);
  const double yd = static_cast<double>(y);
  return log_1mp + nb_gamma_ratio_log(y, nu) - (yd + 1.0 / nu) * l1p + yd * std::log(lambda) -
         std::lgamma(yd + 1.0);
}

inline void check_pmf_args(std::int64_t y, double p_c, double lambda_c) {
  if (y < 0) throw Error(Errc::domain_error, "model", "count must be nonnegative");
  if (!(p_c >= 0.0 && p_c <= 1.0)) throw Error(Errc::domain_error, "model", "p_c must lie in [0, 1]");
  if (!(lambda_c > 0.0) || !std::isfinite(lambda_c)) {
    throw Error(Errc::domain_error, "model", "lambda_c must be positive and finite");
  }
}

}  // namespace detail

inline double marginal_zero_prob(const Eigen::Ref<const Eigen::VectorXd>& gamma,
                                 const Eigen::Ref<const Eigen::VectorXd>& x1) {
  detail::require_same_size(gamma.size(), x1.size(), "zero block");
  return detail::logistic(x1.dot(gamma));
}

inline double overall_mean(const Eigen::Ref<const Eigen::VectorXd>& alpha,
                           const Eigen::Ref<const Eigen::VectorXd>& x2, double offset) {
  detail::require_same_size(alpha.size(), x2.size(), "mean block");
  if (!(offset > 0.0)) throw Error(Errc::domain_error, "model", "offset must be positive");
  return offset * std::exp(x2.dot(alpha));
}

/// log lambda^M = x2'alpha + log(offset) + log(1 + exp(x1'gamma)), so that
/// (1 - p^M) lambda^M equals the overall mean.
inline double eta_marginal(const Eigen::Ref<const Eigen::VectorXd>& alpha,
                           const Eigen::Ref<const Eigen::VectorXd>& gamma,
                           const Eigen::Ref<const Eigen::VectorXd>& x1,
                           const Eigen::Ref<const Eigen::VectorXd>& x2, double offset) {
  detail::require_same_size(gamma.size(), x1.size(), "zero block");
  detail::require_same_size(alpha.size(), x2.size(), "mean block");
  if (!(offset > 0.0)) throw Error(Errc::domain_error, "model", "offset must be positive");
  return x2.dot(alpha) + std::log(offset) + detail::softplus(x1.dot(gamma));
}

inline SubjectCovariance subject_covariance(const Eigen::Ref<const Eigen::VectorXd>& zeta1,
                                            const Eigen::Ref<const Eigen::VectorXd>& zeta2,
                                            const Eigen::Ref<const Eigen::VectorXd>& delta,
                                            const Eigen::Ref<const Eigen::VectorXd>& h1,
                                            const Eigen::Ref<const Eigen::VectorXd>& h2,
                                            const Eigen::Ref<const Eigen::VectorXd>& w) {
  detail::require_same_size(zeta1.size(), h1.size(), "sigma1 block");
  detail::require_same_size(zeta2.size(), h2.size(), "sigma2 block");
  detail::require_same_size(delta.size(), w.size(), "rho block");
  SubjectCovariance cov;
  cov.sigma1 = std::exp(h1.dot(zeta1));
  cov.sigma2 = std::exp(h2.dot(zeta2));
  cov.rho = std::tanh(w.dot(delta));
  if (!(std::abs(cov.rho) < 1.0 - 1e-15) || !(cov.sigma1 > 0.0) || !(cov.sigma2 > 0.0) ||
      !std::isfinite(cov.sigma1) || !std::isfinite(cov.sigma2)) {
    throw Error(Errc::factorization_failure, "model",
                "random-effects covariance is not positive definite (rho = " + std::to_string(cov.rho) + ")");
  }
  const double s1 = cov.sigma1, s2 = cov.sigma2, r = cov.rho;
  cov.Sigma << s1 * s1, r * s1 * s2, r * s1 * s2, s2 * s2;
  cov.sqrt_factor << s1, 0.0, r * s2, s2 * std::sqrt((1.0 - r) * (1.0 + r));
  return cov;
}

/// Same h for both standard deviations.
inline SubjectCovariance subject_covariance(const Eigen::Ref<const Eigen::VectorXd>& zeta1,
                                            const Eigen::Ref<const Eigen::VectorXd>& zeta2,
                                            const Eigen::Ref<const Eigen::VectorXd>& delta,
                                            const Eigen::Ref<const Eigen::VectorXd>& h,
                                            const Eigen::Ref<const Eigen::VectorXd>& w) {
  return subject_covariance(zeta1, zeta2, delta, h, h, w);
}

inline SubjectCovariance subject_covariance(const ParameterVector& theta, const Subject& s) {
  return subject_covariance(theta.zeta1(), theta.zeta2(), theta.delta(), s.h1, s.h2, s.w);
}

/// Intercept shift for the probit zero model so that E[Phi(Delta1 + b1)] = p^M.
inline double delta1(double p_M, double sigma1) {
  if (!(p_M > 0.0 && p_M < 1.0)) throw Error(Errc::domain_error, "model", "delta1 requires 0 < p_M < 1");
  return std::sqrt(1.0 + sigma1 * sigma1) * norm_quantile(p_M);
}

/// Intercept shift for the log-rate so that E[exp(Delta2 + b2)] = lambda^M.
inline double delta2(double lambda_M, double sigma2) {
  if (!(lambda_M > 0.0)) throw Error(Errc::domain_error, "model", "delta2 requires lambda_M > 0");
  return std::log(lambda_M) - 0.5 * sigma2 * sigma2;
}

inline MarginalQuantities marginal_quantities(const ParameterVector& theta, const Observation& o,
                                              const SubjectCovariance& cov) {
  MarginalQuantities m;
  const double t = o.x1.dot(theta.gamma());
  m.p_M = marginal_zero_prob(theta.gamma(), o.x1);
  m.mu = overall_mean(theta.alpha(), o.x2, o.offset);
  m.eta_M = eta_marginal(theta.alpha(), theta.gamma(), o.x1, o.x2, o.offset);
  m.lambda_M = std::exp(m.eta_M);
  m.delta1 = std::sqrt(1.0 + cov.sigma1 * cov.sigma1) * detail::probit_of_logit(t);
  m.delta2 = m.eta_M - 0.5 * cov.sigma2 * cov.sigma2;
  return m;
}

inline ConditionalRates conditional_rates(double d1, double d2, const Eigen::Vector2d& b) {
  return {b, norm_cdf(d1 + b[0]), std::exp(d2 + b[1])};
}

inline double zip_log_pmf(std::int64_t y, double p_c, double lambda_c) {
  detail::check_pmf_args(y, p_c, lambda_c);
  return detail::zip_log_pmf_lp(y, std::log(p_c), std::log1p(-p_c), lambda_c);
}

inline double zinb_log_pmf(std::int64_t y, double p_c, double lambda_c, double nu) {
  detail::check_pmf_args(y, p_c, lambda_c);
  if (!(nu > 0.0)) throw Error(Errc::domain_error, "model", "nu must be positive");
  return detail::zinb_log_pmf_lp(y, std::log(p_c), std::log1p(-p_c), lambda_c, nu);
}

}  // namespace mzip
