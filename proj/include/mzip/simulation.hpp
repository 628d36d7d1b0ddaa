#pragma once

// Synthetic panels from the marginalized ZIP / ZINB random-intercept models and
// the Monte-Carlo replication harness.
//
// Covariate plan per subject i: group_i ~ Bernoulli(0.5), Time_it = t for
// t = 1..n, offset 1; x1 = x2 = (1, group, Time); h = (1) or (1, group) when
// the covariance is heterogeneous; w = (1).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mzip/config.hpp"
#include "mzip/data.hpp"
#include "mzip/error.hpp"
#include "mzip/inference.hpp"
#include "mzip/model.hpp"
#include "mzip/parallel.hpp"

namespace mzip {

using Rng = std::mt19937_64;

struct Scenario {
  Family family = Family::zip;
  int N = 300;
  int n_per_subject = 5;
  int M = 100;
  ParameterVector truth;
  bool heterogeneous = false;      // truth sigma models carry a group term
  bool fit_heterogeneous = false;  // fitted sigma models carry a group term
  std::uint64_t master_seed = 1;
  int quadrature_points = 20;
  int max_iter = 200;
  double grad_tol = 1e-5;
  bool init_at_truth = false;
  unsigned threads = 0;

  static std::vector<std::string> sigma_covariates(bool hetero) {
    return hetero ? std::vector<std::string>{"intercept", "group"} : std::vector<std::string>{"intercept"};
  }

  ModelSpec model_spec(bool hetero) const {
    ModelSpec spec;
    spec.family = family;
    spec.covariates.zero = {"intercept", "group", "time"};
    spec.covariates.mean = {"intercept", "group", "time"};
    spec.covariates.sigma1 = sigma_covariates(hetero);
    spec.covariates.sigma2 = sigma_covariates(hetero);
    spec.covariates.rho = {"intercept"};
    spec.quadrature_points = quadrature_points;
    spec.max_iter = max_iter;
    spec.grad_tol = grad_tol;
    spec.seed = master_seed;
    spec.threads = 1;
    return spec;
  }
  ModelSpec data_spec() const { return model_spec(heterogeneous); }
  ModelSpec fit_spec() const { return model_spec(fit_heterogeneous); }

  void check() const {
    if (N < 1 || n_per_subject < 1 || M < 1) {
      throw Error(Errc::config_error, "simulation", "N, n_per_subject and M must be >= 1");
    }
    if (!(truth.sizes() == data_spec().sizes())) {
      throw Error(Errc::dimension_mismatch, "simulation", "truth blocks do not match the covariate plan");
    }
  }

  /// Homogeneous ZIP setting: gamma = (-2.8, 0.58, 0.1), alpha = (1.6, -0.4, 0.1),
  /// zeta10 = zeta20 = -0.1, delta0 = 0.8.
  static Scenario scenario1(int N = 300, int M = 100, std::uint64_t seed = 20240101) {
    Scenario sc;
    sc.family = Family::zip;
    sc.N = N;
    sc.M = M;
    sc.master_seed = seed;
    sc.truth = ParameterVector::from_blocks(Eigen::Vector3d(-2.8, 0.58, 0.1), Eigen::Vector3d(1.6, -0.4, 0.1),
                                            Eigen::VectorXd::Constant(1, -0.1), Eigen::VectorXd::Constant(1, -0.1),
                                            Eigen::VectorXd::Constant(1, 0.8));
    return sc;
  }

  /// Scenario 1 with negative-binomial counts, nu = 0.8.
  static Scenario scenario2(int N = 300, int M = 100, std::uint64_t seed = 20240202) {
    Scenario sc = scenario1(N, M, seed);
    sc.family = Family::zinb;
    sc.truth = ParameterVector::from_blocks(sc.truth.gamma(), sc.truth.alpha(), sc.truth.zeta1(), sc.truth.zeta2(),
                                            sc.truth.delta(), 0.8);
    return sc;
  }

  /// Heterogeneous covariance: log sigma_j = -0.1 + 0.1 group.
  static Scenario scenario3(Family family, bool fit_heterogeneous, int N = 300, int M = 100,
                            std::uint64_t seed = 20240303) {
    Scenario sc = family == Family::zip ? scenario1(N, M, seed) : scenario2(N, M, seed);
    sc.master_seed = seed;
    sc.heterogeneous = true;
    sc.fit_heterogeneous = fit_heterogeneous;
    std::optional<double> nu;
    if (family == Family::zinb) nu = 0.8;
    sc.truth = ParameterVector::from_blocks(sc.truth.gamma(), sc.truth.alpha(), Eigen::Vector2d(-0.1, 0.1),
                                            Eigen::Vector2d(-0.1, 0.1), sc.truth.delta(), nu);
    return sc;
  }

  static Scenario from_config(const KeyValueConfig& cfg) {
    Scenario sc;
    sc.family = parse_family(cfg.get_string("family", "zip"));
    sc.N = static_cast<int>(cfg.get_int("N"));
    sc.n_per_subject = static_cast<int>(cfg.get_int("n_per_subject", 5));
    sc.M = static_cast<int>(cfg.get_int("M"));
    sc.heterogeneous = cfg.get_bool("heterogeneous", false);
    sc.fit_heterogeneous = cfg.get_bool("fit_heterogeneous", sc.heterogeneous);
    sc.master_seed = static_cast<std::uint64_t>(cfg.get_int("master_seed", static_cast<std::int64_t>(cfg.get_int("seed", 1))));
    sc.quadrature_points = static_cast<int>(cfg.get_int("quadrature_points", 20));
    sc.max_iter = static_cast<int>(cfg.get_int("max_iter", 200));
    sc.grad_tol = cfg.get_double("grad_tol", 1e-5);
    sc.init_at_truth = cfg.get_bool("init_at_truth", false);
    auto vec = [&](const std::string& key) {
      const auto v = cfg.get_doubles(key);
      if (v.empty()) throw Error(Errc::config_error, "simulation", "missing or empty key '" + key + "'");
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    std::optional<double> nu;
    if (sc.family == Family::zinb) nu = cfg.get_double("truth.nu");
    sc.truth = ParameterVector::from_blocks(vec("truth.gamma"), vec("truth.alpha"), vec("truth.zeta1"),
                                            vec("truth.zeta2"), vec("truth.delta"), nu);
    sc.check();
    return sc;
  }
};

namespace detail {

inline double plan_covariate(const std::string& name, double group, double time) {
  if (name == kIntercept) return 1.0;
  if (name == "group") return group;
  if (name == "time") return time;
  throw Error(Errc::config_error, "simulation", "covariate plan has no variable '" + name + "'");
}

inline Eigen::VectorXd plan_vector(const std::vector<std::string>& names, double group, double time) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) v[static_cast<Eigen::Index>(j)] = plan_covariate(names[j], group, time);
  return v;
}

inline Rng replicate_rng(std::uint64_t master_seed, std::uint64_t replicate_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(replicate_index), static_cast<std::uint32_t>(replicate_index >> 32)};
  return Rng(seq);
}

}  // namespace detail

/// Negative-binomial draw as a Gamma(shape 1/nu, scale nu lambda) mixture of Poissons.
inline std::int64_t sample_zinb(double lambda_c, double nu, Rng& rng) {
  if (!(lambda_c > 0.0) || !(nu > 0.0)) throw Error(Errc::domain_error, "simulation", "sample_zinb needs lambda, nu > 0");
  const double g = std::gamma_distribution<double>(1.0 / nu, nu * lambda_c)(rng);
  if (!(g > 0.0)) return 0;
  return std::poisson_distribution<std::int64_t>(g)(rng);
}

inline std::int64_t sample_poisson(double lambda_c, Rng& rng) {
  if (!(lambda_c > 0.0)) return 0;
  return std::poisson_distribution<std::int64_t>(lambda_c)(rng);
}

/// Draws one panel. The returned dataset carries the covariates of the fitted
/// model (scenario.fit_spec()); the data are generated under scenario.truth.
inline Dataset simulate_dataset(const Scenario& sc, std::uint64_t replicate_index) {
  sc.check();
  const ModelSpec gen = sc.data_spec();
  const ModelSpec fitted = sc.fit_spec();
  Rng rng = detail::replicate_rng(sc.master_seed, replicate_index);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool zinb = sc.family == Family::zinb;
  const double nu = zinb ? sc.truth.nu() : 0.0;

  Dataset ds;
  ds.family = sc.family;
  ds.columns = fitted.covariates;
  ds.subjects.reserve(static_cast<std::size_t>(sc.N));
  for (int i = 0; i < sc.N; ++i) {
    const double group = coin(rng) ? 1.0 : 0.0;
    Subject s;
    s.id = std::to_string(i + 1);
    const SubjectCovariance cov = subject_covariance(
        sc.truth.zeta1(), sc.truth.zeta2(), sc.truth.delta(), detail::plan_vector(gen.covariates.sigma1, group, 0.0),
        detail::plan_vector(gen.covariates.sigma2, group, 0.0), detail::plan_vector(gen.covariates.rho, group, 0.0));
    s.h1 = detail::plan_vector(fitted.covariates.sigma1, group, 0.0);
    s.h2 = detail::plan_vector(fitted.covariates.sigma2, group, 0.0);
    s.w = detail::plan_vector(fitted.covariates.rho, group, 0.0);
    const double z1 = stdnorm(rng);
    const double z2 = stdnorm(rng);
    const Eigen::Vector2d b = cov.sqrt_factor * Eigen::Vector2d(z1, z2);
    for (int t = 1; t <= sc.n_per_subject; ++t) {
      Observation o;
      o.time = t;
      o.offset = 1.0;
      const Eigen::VectorXd x1g = detail::plan_vector(gen.covariates.zero, group, t);
      const Eigen::VectorXd x2g = detail::plan_vector(gen.covariates.mean, group, t);
      o.x1 = detail::plan_vector(fitted.covariates.zero, group, t);
      o.x2 = detail::plan_vector(fitted.covariates.mean, group, t);
      const double tz = x1g.dot(sc.truth.gamma());
      const double d1 = std::sqrt(1.0 + cov.sigma1 * cov.sigma1) * detail::probit_of_logit(tz);
      const double d2 = eta_marginal(sc.truth.alpha(), sc.truth.gamma(), x1g, x2g, 1.0) - 0.5 * cov.sigma2 * cov.sigma2;
      const ConditionalRates rates = conditional_rates(d1, d2, b);
      if (unif(rng) < rates.p_c) {
        o.y = 0;
      } else {
        o.y = zinb ? sample_zinb(rates.lambda_c, nu, rng) : sample_poisson(rates.lambda_c, rng);
      }
      s.obs.push_back(std::move(o));
    }
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

/// tr((Sigma_hat Sigma^{-1} - I)^2).
inline double frobenius_metric(const Eigen::Matrix2d& Sigma_hat, const Eigen::Matrix2d& Sigma_true) {
  const double det = Sigma_true.determinant();
  if (!(std::abs(det) > 1e-300) || !std::isfinite(det)) {
    throw Error(Errc::singular_truth, "simulation", "true covariance matrix is singular");
  }
  const Eigen::Matrix2d A = Sigma_hat * Sigma_true.inverse() - Eigen::Matrix2d::Identity();
  return (A * A).trace();
}

struct ReplicateRecord {
  std::uint64_t index = 0;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  double frob = 0.0;
  std::vector<double> estimate;  // reported-scale values, aligned with ReplicationReport::names
  std::vector<double> se;
  std::string error;  // non-empty when the fit threw
};

struct ParameterSummary {
  std::string name;
  double truth = 0.0, mean = 0.0, prb = 0.0, se = 0.0, sd = 0.0, cp = 0.0;
};

struct ReplicationReport {
  std::vector<ParameterSummary> parameters;
  double aprb = 0.0, ase = 0.0, asd = 0.0, acp = 0.0;
  double frob = 0.0;
  int M = 0;
  int n_converged = 0;
  int n_failed = 0;
  std::string plan;
};

struct StudyResult {
  ReplicationReport report;
  std::vector<ReplicateRecord> replicates;
  std::vector<std::string> names;
};

namespace detail {

// Parameters of the fitted model that have a counterpart in the truth,
// as (label, flat index in the fit, truth value). nu is reported on its own scale.
struct Tracked {
  std::string name;
  Eigen::Index fit_index;
  double truth;
  bool is_nu;
};

inline std::vector<Tracked> tracked_parameters(const Scenario& sc) {
  const ModelSpec fs = sc.fit_spec();
  const BlockSizes fsz = fs.sizes();
  const BlockSizes tsz = sc.truth.sizes();
  const ParameterVector probe(fsz);
  const auto names = probe.names(fs.covariates);
  std::vector<Tracked> out;
  auto add_block = [&](Eigen::Index foff, Eigen::Index fn, Eigen::Index toff, Eigen::Index tn) {
    if (fn != tn) return;
    for (Eigen::Index j = 0; j < fn; ++j) {
      out.push_back({names[static_cast<std::size_t>(foff + j)], foff + j, sc.truth.flat()[toff + j], false});
    }
  };
  add_block(fsz.gamma_offset(), fsz.p1, tsz.gamma_offset(), tsz.p1);
  add_block(fsz.alpha_offset(), fsz.p2, tsz.alpha_offset(), tsz.p2);
  add_block(fsz.zeta1_offset(), fsz.a, tsz.zeta1_offset(), tsz.a);
  add_block(fsz.zeta2_offset(), fsz.b, tsz.zeta2_offset(), tsz.b);
  add_block(fsz.delta_offset(), fsz.c, tsz.delta_offset(), tsz.c);
  if (fsz.has_nu) out.push_back({"nu", fsz.nu_offset(), sc.truth.nu(), true});
  return out;
}

// Mean FROB over the distinct covariate profiles (group 0 / 1 when either
// model is heterogeneous).
inline double study_frob(const Scenario& sc, const ParameterVector& theta_hat) {
  const ModelSpec gen = sc.data_spec();
  const ModelSpec fs = sc.fit_spec();
  const bool profiles = sc.heterogeneous || sc.fit_heterogeneous;
  const int n_prof = profiles ? 2 : 1;
  double acc = 0.0;
  for (int g = 0; g < n_prof; ++g) {
    const double group = g;
    const auto truth = subject_covariance(sc.truth.zeta1(), sc.truth.zeta2(), sc.truth.delta(),
                                          plan_vector(gen.covariates.sigma1, group, 0.0),
                                          plan_vector(gen.covariates.sigma2, group, 0.0),
                                          plan_vector(gen.covariates.rho, group, 0.0));
    const auto est = subject_covariance(theta_hat.zeta1(), theta_hat.zeta2(), theta_hat.delta(),
                                        plan_vector(fs.covariates.sigma1, group, 0.0),
                                        plan_vector(fs.covariates.sigma2, group, 0.0),
                                        plan_vector(fs.covariates.rho, group, 0.0));
    acc += frobenius_metric(est.Sigma, truth.Sigma);
  }
  return acc / n_prof;
}

}  // namespace detail

/// MEAN, PRB, SE, SD, CP per tracked parameter from converged replicates, and
/// APRB/ASE/ASD/ACP over the gamma and alpha blocks.
inline ReplicationReport summarize_study(const Scenario& sc, const std::vector<ReplicateRecord>& reps) {
  const auto tracked = detail::tracked_parameters(sc);
  ReplicationReport rep;
  rep.M = sc.M;
  std::vector<const ReplicateRecord*> ok;
  for (const auto& r : reps) {
    if (r.converged) ok.push_back(&r);
  }
  rep.n_converged = static_cast<int>(ok.size());
  rep.n_failed = static_cast<int>(reps.size()) - rep.n_converged;
  if (ok.empty()) throw Error(Errc::all_replicates_failed, "simulation", "no replicate converged");
  const double m = static_cast<double>(ok.size());
  for (std::size_t p = 0; p < tracked.size(); ++p) {
    ParameterSummary s;
    s.name = tracked[p].name;
    s.truth = tracked[p].truth;
    double sum = 0.0, sum_se = 0.0, covered = 0.0;
    for (const auto* r : ok) {
      const double est = r->estimate[p], se = r->se[p];
      sum += est;
      sum_se += se;
      covered += (est - 1.96 * se <= s.truth && s.truth <= est + 1.96 * se) ? 1.0 : 0.0;
    }
    s.mean = sum / m;
    s.prb = (s.mean - s.truth) / s.truth * 100.0;
    s.se = sum_se / m;
    double ss = 0.0;
    for (const auto* r : ok) ss += (r->estimate[p] - s.mean) * (r->estimate[p] - s.mean);
    s.sd = ok.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
    s.cp = covered / m;
    rep.parameters.push_back(s);
  }
  const BlockSizes fsz = sc.fit_spec().sizes();
  const Eigen::Index n_agg = fsz.p1 + fsz.p2;  // tracked list starts with gamma then alpha
  for (Eigen::Index p = 0; p < n_agg; ++p) {
    const auto& s = rep.parameters[static_cast<std::size_t>(p)];
    rep.aprb += std::abs(s.prb);
    rep.ase += s.se;
    rep.asd += s.sd;
    rep.acp += s.cp;
  }
  rep.aprb /= static_cast<double>(n_agg);
  rep.ase /= static_cast<double>(n_agg);
  rep.asd /= static_cast<double>(n_agg);
  rep.acp /= static_cast<double>(n_agg);
  double frob = 0.0;
  for (const auto* r : ok) frob += r->frob;
  rep.frob = frob / m;
  rep.plan = "group ~ Bernoulli(0.5) per subject; time = 1..n; offset = 1; n_per_subject = " +
             std::to_string(sc.n_per_subject) + "; N = " + std::to_string(sc.N) +
             "; covariance " + (sc.heterogeneous ? "heterogeneous" : "homogeneous") + " (fitted " +
             (sc.fit_heterogeneous ? "heterogeneous" : "homogeneous") + ")";
  return rep;
}

inline ReplicateRecord run_replicate(const Scenario& sc, std::uint64_t index) {
  const auto tracked = detail::tracked_parameters(sc);
  ReplicateRecord rec;
  rec.index = index;
  try {
    const Dataset ds = simulate_dataset(sc, index);
    const ModelSpec spec = sc.fit_spec();
    ParameterVector init = initialize(ds, spec);
    if (sc.init_at_truth && sc.truth.sizes() == spec.sizes()) init = sc.truth;
    const FitResult fr = fit(ds, spec, init);
    rec.converged = fr.converged;
    rec.iterations = fr.iterations;
    rec.loglik = fr.loglik;
    rec.frob = detail::study_frob(sc, fr.theta_hat);
    for (const auto& t : tracked) {
      if (t.is_nu) {
        rec.estimate.push_back(*fr.nu_hat);
        rec.se.push_back(*fr.se_nu);
      } else {
        rec.estimate.push_back(fr.theta_hat.flat()[t.fit_index]);
        rec.se.push_back(fr.se[t.fit_index]);
      }
    }
  } catch (const Error& e) {
    rec.converged = false;
    rec.error = e.what();
    rec.estimate.assign(tracked.size(), std::numeric_limits<double>::quiet_NaN());
    rec.se.assign(tracked.size(), std::numeric_limits<double>::quiet_NaN());
  }
  return rec;
}

/// Replicates run in parallel over independent index-seeded streams; the
/// summary is reduced in replicate order.
inline StudyResult run_study(const Scenario& sc,
                             const std::function<void(const ReplicateRecord&)>& progress = {}) {
  sc.check();
  StudyResult out;
  out.replicates.resize(static_cast<std::size_t>(sc.M));
  std::mutex progress_mutex;
  parallel_for(out.replicates.size(), sc.threads, [&](std::size_t m) {
    out.replicates[m] = run_replicate(sc, m);
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(out.replicates[m]);
    }
  });
  for (const auto& t : detail::tracked_parameters(sc)) out.names.push_back(t.name);
  out.report = summarize_study(sc, out.replicates);
  return out;
}

}  // namespace mzip
