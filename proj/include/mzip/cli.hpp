#pragma once

// Subcommand implementations. Each returns a process exit code
// (0 success, 1 error, 2 fit not converged) and writes only to the streams
// it is given, so tests can drive them in-process.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mzip/config.hpp"
#include "mzip/data.hpp"
#include "mzip/error.hpp"
#include "mzip/inference.hpp"
#include "mzip/io.hpp"
#include "mzip/likelihood.hpp"
#include "mzip/simulation.hpp"

namespace mzip::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConverged = 2;

inline constexpr double kGradcheckTolerance = 1e-4;

struct FitArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  double level = 0.95;
};

struct CompareArgs {
  std::string fit_a;
  std::string fit_b;
  std::optional<int> df;
  bool nested = false;  // derive df from the parameter counts
};

struct StudyArgs {
  std::string scenario;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool quiet = false;
};

struct SimulateArgs {
  std::string scenario;
  std::string out;
  std::string config_out;  // optional fit config matching the scenario
  std::uint64_t replicate = 0;
  std::optional<std::uint64_t> seed;
};

struct GradcheckArgs {
  std::string config;
  std::string data;
  std::string theta;  // optional fit JSON supplying the evaluation point
  double step = 1e-5;
  unsigned threads = 0;
  double corrupt_score = 0.0;  // test hook: added to the first analytic score entry
};

struct ReprofileArgs {
  std::string fit;
  std::string profiles;
  int digits = 6;
};

namespace detail {

inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error [" << e.module() << "] " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error [cli] " << e.what() << "\n";
  }
  return kExitError;
}

inline std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  std::string s = ss.str();
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);  // no "-0.000"
  return s;
}

inline std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

inline Dataset load_dataset(const std::string& path, const ModelSpec& spec, std::ostream& err) {
  Dataset ds = parse_dataset(mzip::detail::read_file(path), spec);
  for (const auto& w : validate(ds, spec)) err << "warning: " << w << "\n";
  return ds;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
  return out;
}

}  // namespace detail

/// Estimates with SEs, Wald z and p, and confidence limits; '*' marks p < 0.05.
inline void print_wald_table(const FitResult& fit, std::ostream& out, double level = 0.95) {
  const auto rows = wald_table(fit, level);
  std::size_t w = 9;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  const std::string lvl = detail::fixed(100.0 * level, 0) + "% CI";
  out << detail::pad("parameter", w, true) << "  " << detail::pad("estimate", 11) << "  " << detail::pad("se", 9)
      << "  " << detail::pad("z", 8) << "  " << detail::pad("p", 8) << "  " << lvl << "\n";
  for (const auto& r : rows) {
    const bool star = r.p_defined && r.p < 0.05;
    out << detail::pad(r.name, w, true) << "  " << detail::pad(detail::fixed(r.estimate, 4) + (star ? "*" : " "), 11)
        << "  " << detail::pad(detail::fixed(r.se, 4), 9) << "  "
        << detail::pad(r.p_defined ? detail::fixed(r.z, 3) : "NA", 8) << "  "
        << detail::pad(r.p_defined ? detail::fixed(r.p, 4) : "NA", 8) << "  [" << detail::fixed(r.ci_lo, 4) << ", "
        << detail::fixed(r.ci_hi, 4) << "]\n";
  }
  if (fit.nu_hat) {
    out << detail::pad("nu", w, true) << "  " << detail::pad(detail::fixed(*fit.nu_hat, 4) + " ", 11) << "  "
        << detail::pad(detail::fixed(fit.se_nu.value_or(NAN), 4), 9) << "  (delta method)\n";
  }
  out << "* significant at the 95% level\n";
  out << "loglik " << detail::fixed(fit.loglik, 3) << "  AIC " << detail::fixed(fit.aic, 3) << "  k " << fit.k()
      << "  subjects " << fit.n_subjects << "  observations " << fit.n_obs << "\n";
  out << "iterations " << fit.iterations << "  converged " << (fit.converged ? "yes" : "no") << "  max|score| "
      << std::scientific << std::setprecision(3) << fit.final_grad_norm << std::defaultfloat << "\n";
}

inline int cmd_fit(const FitArgs& args, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    ModelSpec spec = ModelSpec::from_config(KeyValueConfig::load(args.config));
    if (args.seed) spec.seed = *args.seed;
    spec.threads = args.threads;
    const Dataset ds = detail::load_dataset(args.data, spec, err);
    const ParameterVector init = initialize(ds, spec);
    const FitResult fit = mzip::fit(ds, spec, init);
    for (const auto& d : fit.diagnostics) err << "note: " << d << "\n";
    if (!args.out.empty()) mzip::detail::write_text(args.out, fit_to_json_text(fit, args.level));
    out << "family " << to_string(fit.family) << "  quadrature " << fit.quadrature_points << "x"
        << fit.quadrature_points << "\n";
    print_wald_table(fit, out, args.level);
    if (!fit.converged) {
      err << "error [inference] NotConverged: max|score| " << fit.final_grad_norm << " >= grad_tol " << spec.grad_tol
          << " after " << fit.iterations << " iterations\n";
      return kExitNotConverged;
    }
    return kExitOk;
  });
}

inline int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const FitResult a = load_fit(args.fit_a);
    const FitResult b = load_fit(args.fit_b);
    out << "model A: loglik " << detail::fixed(a.loglik, 3) << "  k " << a.k() << "  AIC " << detail::fixed(a.aic, 3)
        << "\n";
    out << "model B: loglik " << detail::fixed(b.loglik, 3) << "  k " << b.k() << "  AIC " << detail::fixed(b.aic, 3)
        << "\n";
    out << "delta AIC (B - A) " << detail::fixed(b.aic - a.aic, 3) << "  preferred "
        << (b.aic < a.aic ? "B" : (a.aic < b.aic ? "A" : "either")) << "\n";
    std::optional<int> df = args.df;
    if (!df && args.nested) {
      df = static_cast<int>(std::abs(b.k() - a.k()));
      if (*df == 0) throw Error(Errc::config_error, "cli", "nested models must differ in parameter count");
    }
    if (df) {
      // The model with more parameters is the alternative; ties keep B as the alternative.
      const bool b_alt = b.k() >= a.k();
      const LrtResult r = lrt(b_alt ? a.loglik : b.loglik, b_alt ? b.loglik : a.loglik, *df);
      out << "LRT statistic " << detail::fixed(r.statistic, 3) << "  df " << *df << "  p-value ";
      if (r.p_value < 1e-4) {
        out << "< 0.0001";
      } else {
        out << detail::fixed(r.p_value, 4);
      }
      out << "  (p = " << std::scientific << std::setprecision(6) << r.p_value << std::defaultfloat << ")\n";
    }
    return kExitOk;
  });
}

inline Scenario load_scenario(const std::string& path, std::optional<std::uint64_t> seed) {
  Scenario sc = Scenario::from_config(KeyValueConfig::load(path));
  if (seed) sc.master_seed = *seed;
  return sc;
}

inline int cmd_study(const StudyArgs& args, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    Scenario sc = load_scenario(args.scenario, args.seed);
    sc.threads = args.threads;
    int done = 0;
    const StudyResult study = run_study(sc, [&](const ReplicateRecord& r) {
      ++done;
      if (args.quiet) return;
      err << "replicate " << r.index << " (" << done << "/" << sc.M << ") "
          << (r.converged ? "converged" : (r.error.empty() ? "not converged" : "failed: " + r.error)) << "\n";
    });
    if (!args.out_dir.empty()) write_study(study, args.out_dir);
    const ReplicationReport& rep = study.report;
    out << rep.plan << "\n";
    out << "replicates " << rep.M << "  converged " << rep.n_converged << "  excluded " << rep.n_failed << "\n";
    out << detail::pad("parameter", 12, true) << detail::pad("truth", 9) << detail::pad("MEAN", 9)
        << detail::pad("PRB", 9) << detail::pad("SE", 9) << detail::pad("SD", 9) << detail::pad("CP", 7) << "\n";
    for (const auto& p : rep.parameters) {
      out << detail::pad(p.name, 12, true) << detail::pad(detail::fixed(p.truth, 3), 9)
          << detail::pad(detail::fixed(p.mean, 3), 9) << detail::pad(detail::fixed(p.prb, 2), 9)
          << detail::pad(detail::fixed(p.se, 3), 9) << detail::pad(detail::fixed(p.sd, 3), 9)
          << detail::pad(detail::fixed(p.cp, 3), 7) << "\n";
    }
    out << "APRB " << detail::fixed(rep.aprb, 3) << "  ASE " << detail::fixed(rep.ase, 3) << "  ASD "
        << detail::fixed(rep.asd, 3) << "  ACP " << detail::fixed(rep.acp, 3) << "  FROB "
        << detail::fixed(rep.frob, 3) << "\n";
    return kExitOk;
  });
}

/// Fit configuration text for the covariates a dataset from `sc` carries.
inline std::string config_text(const ModelSpec& spec) {
  std::string s;
  s += "family = " + std::string(to_string(spec.family)) + "\n";
  s += "zero_covariates = " + detail::join(spec.covariates.zero) + "\n";
  s += "mean_covariates = " + detail::join(spec.covariates.mean) + "\n";
  s += "sigma1_covariates = " + detail::join(spec.covariates.sigma1) + "\n";
  s += "sigma2_covariates = " + detail::join(spec.covariates.sigma2) + "\n";
  s += "rho_covariates = " + detail::join(spec.covariates.rho) + "\n";
  s += "quadrature_points = " + std::to_string(spec.quadrature_points) + "\n";
  s += "max_iter = " + std::to_string(spec.max_iter) + "\n";
  s += "grad_tol = " + mzip::detail::format_double(spec.grad_tol) + "\n";
  s += "seed = " + std::to_string(spec.seed) + "\n";
  return s;
}

inline int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const Scenario sc = load_scenario(args.scenario, args.seed);
    const Dataset ds = simulate_dataset(sc, args.replicate);
    const std::string csv = serialize_dataset(ds);
    if (args.out.empty()) {
      out << csv;
    } else {
      mzip::detail::write_text(args.out, csv);
      std::size_t zeros = 0;
      for (const auto& s : ds.subjects) {
        for (const auto& o : s.obs) zeros += o.y == 0;
      }
      out << "wrote " << ds.subjects.size() << " subjects, " << ds.n_obs() << " observations ("
          << detail::fixed(100.0 * static_cast<double>(zeros) / static_cast<double>(ds.n_obs()), 1)
          << "% zeros) to " << args.out << "\n";
    }
    if (!args.config_out.empty()) mzip::detail::write_text(args.config_out, config_text(sc.fit_spec()));
    return kExitOk;
  });
}

inline int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    ModelSpec spec = ModelSpec::from_config(KeyValueConfig::load(args.config));
    spec.threads = args.threads;
    const Dataset ds = detail::load_dataset(args.data, spec, err);
    ParameterVector theta = args.theta.empty() ? initialize(ds, spec) : load_fit(args.theta).theta_hat;
    if (!(theta.sizes() == spec.sizes())) {
      throw Error(Errc::dimension_mismatch, "cli", "evaluation point does not match the configured blocks");
    }
    const QuadratureRule rule = gauss_hermite(spec.quadrature_points);
    GradientCheck gc = gradient_check(ds, theta, spec, rule, args.step);
    if (args.corrupt_score != 0.0) {
      gc.analytic[0] += args.corrupt_score;
      gc.discrepancy = max_relative_discrepancy(gc.analytic, gc.reference);
    }
    const auto names = theta.names(spec.covariates);
    out << detail::pad("parameter", 14, true) << detail::pad("analytic", 18) << detail::pad("finite-diff", 18) << "\n";
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      std::ostringstream a, f;
      a << std::scientific << std::setprecision(9) << gc.analytic[j];
      f << std::scientific << std::setprecision(9) << gc.reference[j];
      out << detail::pad(names[static_cast<std::size_t>(j)], 14, true) << detail::pad(a.str(), 18)
          << detail::pad(f.str(), 18) << "\n";
    }
    const bool pass = gc.discrepancy < kGradcheckTolerance;
    out << "max relative discrepancy " << mzip::detail::format_double(gc.discrepancy)
        << " (tolerance 1e-4): " << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kExitOk : kExitError;
  });
}

/// sigma1, sigma2, rho and Sigma at each covariate profile. The profile CSV
/// carries columns named like the sigma/rho covariates of the fit (the
/// intercept is synthesized) and an optional `label` column.
inline std::vector<std::pair<std::string, CovarianceProfile>> reprofile(const FitResult& fit,
                                                                        const std::string& csv_text) {
  const auto lines = mzip::detail::lines_of(csv_text);
  std::size_t li = 0;
  while (li < lines.size() && mzip::detail::trim(lines[li]).empty()) ++li;
  if (li == lines.size()) throw Error(Errc::empty_dataset, "cli", "profile CSV is empty");
  const auto header = mzip::detail::csv_fields(lines[li]);
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    return std::nullopt;
  };
  const auto label_col = column("label");
  std::vector<std::pair<std::string, CovarianceProfile>> out;
  std::vector<CovariateProfile> profiles;
  std::vector<std::string> labels;
  for (++li; li < lines.size(); ++li) {
    if (mzip::detail::trim(lines[li]).empty()) continue;
    const auto fields = mzip::detail::csv_fields(lines[li]);
    if (fields.size() != header.size()) {
      throw Error(Errc::parse_error, "cli",
                  "profile row " + std::to_string(li + 1) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    auto vec = [&](const std::vector<std::string>& names) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
      for (std::size_t j = 0; j < names.size(); ++j) {
        const auto c = column(names[j]);
        if (!c) {
          if (names[j] == kIntercept) {
            v[static_cast<Eigen::Index>(j)] = 1.0;
            continue;
          }
          throw Error(Errc::missing_column, "cli", "profile CSV lacks column '" + names[j] + "'");
        }
        const auto x = mzip::detail::parse_double(fields[*c]);
        if (!x) {
          throw Error(Errc::parse_error, "cli",
                      "profile row " + std::to_string(li + 1) + ", column '" + names[j] + "': not a number");
        }
        v[static_cast<Eigen::Index>(j)] = *x;
      }
      return v;
    };
    profiles.push_back({vec(fit.columns.sigma1), vec(fit.columns.sigma2), vec(fit.columns.rho)});
    labels.push_back(label_col ? fields[*label_col] : std::to_string(profiles.size()));
  }
  const auto cps = covariance_profiles(fit, profiles);
  for (std::size_t i = 0; i < cps.size(); ++i) out.emplace_back(labels[i], cps[i]);
  return out;
}

inline int cmd_reprofile(const ReprofileArgs& args, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const FitResult fit = load_fit(args.fit);
    const auto rows = reprofile(fit, mzip::detail::read_file(args.profiles));
    const int d = args.digits;
    out << "label,sigma1,sigma2,rho,Sigma11,Sigma12,Sigma22\n";
    for (const auto& [label, cp] : rows) {
      out << label << "," << detail::fixed(cp.sigma1, d) << "," << detail::fixed(cp.sigma2, d) << ","
          << detail::fixed(cp.rho, d) << "," << detail::fixed(cp.Sigma(0, 0), d) << ","
          << detail::fixed(cp.Sigma(0, 1), d) << "," << detail::fixed(cp.Sigma(1, 1), d) << "\n";
    }
    return kExitOk;
  });
}

}  // namespace mzip::cli
