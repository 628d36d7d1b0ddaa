#pragma once

// Serialization of fit results (JSON) and replication studies (CSV + JSON).
// Every writer is a pure function of its input so repeated runs are
// byte-identical.

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mzip/data.hpp"
#include "mzip/error.hpp"
#include "mzip/inference.hpp"
#include "mzip/simulation.hpp"

namespace mzip {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double number_from(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw Error(Errc::parse_error, "io", "expected a number, got " + j.dump());
  return j.get<double>();
}

inline const Json& require_key(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(Errc::parse_error, "io", std::string("fit JSON has no '") + key + "' field");
  }
  return j.at(key);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "io", "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(Errc::io_error, "io", "failed writing '" + path.string() + "'");
}

}  // namespace detail

inline Json fit_to_json(const FitResult& fit, double level = 0.95) {
  Json j;
  j["family"] = std::string(to_string(fit.family));
  Json blocks;
  blocks["zero"] = fit.columns.zero;
  blocks["mean"] = fit.columns.mean;
  blocks["sigma1"] = fit.columns.sigma1;
  blocks["sigma2"] = fit.columns.sigma2;
  blocks["rho"] = fit.columns.rho;
  j["blocks"] = blocks;

  Json est = Json::array();
  for (const auto& r : wald_table(fit, level)) {
    Json row;
    row["name"] = r.name;
    row["value"] = r.estimate;
    row["se"] = detail::number_or_null(r.se);
    row["z"] = r.p_defined ? detail::number_or_null(r.z) : Json(nullptr);
    row["p"] = r.p_defined ? detail::number_or_null(r.p) : Json(nullptr);
    row["ci_lo"] = detail::number_or_null(r.ci_lo);
    row["ci_hi"] = detail::number_or_null(r.ci_hi);
    est.push_back(row);
  }
  j["estimates"] = est;
  if (fit.nu_hat) {
    j["nu"] = {{"value", *fit.nu_hat}, {"se", detail::number_or_null(fit.se_nu.value_or(NAN))}};
  }
  Json vcov = Json::array();
  for (Eigen::Index r = 0; r < fit.vcov.rows(); ++r) {
    for (Eigen::Index c = 0; c < fit.vcov.cols(); ++c) vcov.push_back(detail::number_or_null(fit.vcov(r, c)));
  }
  j["vcov"] = vcov;
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["k"] = fit.k();
  j["n_subjects"] = fit.n_subjects;
  j["n_obs"] = fit.n_obs;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["grad_norm"] = fit.final_grad_norm;
  j["quadrature_points"] = fit.quadrature_points;
  j["seed"] = fit.seed;
  j["level"] = level;
  if (fit.ridge > 0.0) j["ridge"] = fit.ridge;
  j["diagnostics"] = fit.diagnostics;
  return j;
}

inline std::string fit_to_json_text(const FitResult& fit, double level = 0.95) {
  return fit_to_json(fit, level).dump(2) + "\n";
}

/// Rebuilds the parts of a FitResult that downstream commands need
/// (estimates, SEs, vcov, log-likelihood, blocks). Diagnostics are not restored.
inline FitResult fit_from_json(const Json& j) {
  FitResult fit;
  try {
    fit.family = parse_family(detail::require_key(j, "family").get<std::string>());
    const Json& blocks = detail::require_key(j, "blocks");
    fit.columns.zero = detail::require_key(blocks, "zero").get<std::vector<std::string>>();
    fit.columns.mean = detail::require_key(blocks, "mean").get<std::vector<std::string>>();
    fit.columns.sigma1 = detail::require_key(blocks, "sigma1").get<std::vector<std::string>>();
    fit.columns.sigma2 = detail::require_key(blocks, "sigma2").get<std::vector<std::string>>();
    fit.columns.rho = detail::require_key(blocks, "rho").get<std::vector<std::string>>();
    const BlockSizes sz{static_cast<Eigen::Index>(fit.columns.zero.size()),
                        static_cast<Eigen::Index>(fit.columns.mean.size()),
                        static_cast<Eigen::Index>(fit.columns.sigma1.size()),
                        static_cast<Eigen::Index>(fit.columns.sigma2.size()),
                        static_cast<Eigen::Index>(fit.columns.rho.size()), fit.family == Family::zinb};

    const Json& est = detail::require_key(j, "estimates");
    if (!est.is_array() || static_cast<Eigen::Index>(est.size()) != sz.size()) {
      throw Error(Errc::dimension_mismatch, "io",
                  "fit JSON lists " + std::to_string(est.size()) + " estimates, blocks need " +
                      std::to_string(sz.size()));
    }
    Eigen::VectorXd flat(sz.size());
    fit.se.resize(sz.size());
    for (Eigen::Index r = 0; r < sz.size(); ++r) {
      const Json& row = est[static_cast<std::size_t>(r)];
      flat[r] = detail::number_from(detail::require_key(row, "value"));
      fit.se[r] = row.contains("se") ? detail::number_from(row.at("se")) : NAN;
    }
    fit.theta_hat = ParameterVector(sz, flat);

    if (j.contains("vcov")) {
      const Json& v = j.at("vcov");
      if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != sz.size() * sz.size()) {
        throw Error(Errc::dimension_mismatch, "io", "vcov has the wrong number of entries");
      }
      fit.vcov.resize(sz.size(), sz.size());
      for (Eigen::Index r = 0; r < sz.size(); ++r) {
        for (Eigen::Index c = 0; c < sz.size(); ++c) {
          fit.vcov(r, c) = detail::number_from(v[static_cast<std::size_t>(r * sz.size() + c)]);
        }
      }
    }
    fit.loglik = detail::number_from(detail::require_key(j, "loglik"));
    fit.aic = j.contains("aic") ? detail::number_from(j.at("aic")) : aic(fit.loglik, sz.size());
    if (j.contains("k") && j.at("k").get<Eigen::Index>() != sz.size()) {
      throw Error(Errc::dimension_mismatch, "io", "'k' disagrees with the estimate count");
    }
    fit.n_subjects = j.value("n_subjects", std::size_t{0});
    fit.n_obs = j.value("n_obs", std::size_t{0});
    fit.iterations = j.value("iterations", 0);
    fit.converged = j.value("converged", false);
    fit.final_grad_norm = j.contains("grad_norm") ? detail::number_from(j.at("grad_norm")) : 0.0;
    fit.quadrature_points = j.value("quadrature_points", 0);
    fit.seed = j.value("seed", std::uint64_t{0});
    if (sz.has_nu) {
      fit.nu_hat = fit.theta_hat.nu();
      if (j.contains("nu")) fit.se_nu = detail::number_from(j.at("nu").value("se", Json(nullptr)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, "io", std::string("malformed fit JSON: ") + e.what());
  }
  return fit;
}

inline FitResult load_fit(const std::string& path) {
  const std::string text = detail::read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, "io", "'" + path + "' is not valid JSON: " + e.what());
  }
  return fit_from_json(j);
}

// ---------------------------------------------------------------------------
// Replication studies.

inline std::string replicates_csv(const StudyResult& study) {
  std::string out = "replicate,converged,iterations,loglik,frob";
  for (const auto& n : study.names) out += ",est_" + n;
  for (const auto& n : study.names) out += ",se_" + n;
  out += ",error\n";
  for (const auto& r : study.replicates) {
    out += std::to_string(r.index) + "," + (r.converged ? "1" : "0") + "," + std::to_string(r.iterations) + "," +
           detail::format_double(r.loglik) + "," + detail::format_double(r.frob);
    for (double v : r.estimate) out += "," + detail::format_double(v);
    for (double v : r.se) out += "," + detail::format_double(v);
    std::string err = r.error;
    for (auto& ch : err) {
      if (ch == '"') ch = '\'';
    }
    out += ",\"" + err + "\"\n";
  }
  return out;
}

inline std::string report_csv(const ReplicationReport& rep) {
  std::string out = "parameter,truth,mean,prb,se,sd,cp\n";
  for (const auto& p : rep.parameters) {
    out += p.name + "," + detail::format_double(p.truth) + "," + detail::format_double(p.mean) + "," +
           detail::format_double(p.prb) + "," + detail::format_double(p.se) + "," + detail::format_double(p.sd) +
           "," + detail::format_double(p.cp) + "\n";
  }
  return out;
}

inline Json report_to_json(const ReplicationReport& rep) {
  Json j;
  j["plan"] = rep.plan;
  j["M"] = rep.M;
  j["n_converged"] = rep.n_converged;
  j["n_failed"] = rep.n_failed;
  j["aggregate"] = {{"APRB", rep.aprb}, {"ASE", rep.ase}, {"ASD", rep.asd}, {"ACP", rep.acp}, {"FROB", rep.frob}};
  Json params = Json::array();
  for (const auto& p : rep.parameters) {
    params.push_back({{"name", p.name},
                      {"truth", p.truth},
                      {"MEAN", p.mean},
                      {"PRB", p.prb},
                      {"SE", p.se},
                      {"SD", p.sd},
                      {"CP", p.cp}});
  }
  j["parameters"] = params;
  return j;
}

/// Writes replicates.csv, report.csv and report.json into `dir` (created if needed).
inline void write_study(const StudyResult& study, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, "io", "cannot create '" + dir.string() + "': " + ec.message());
  detail::write_text(dir / "replicates.csv", replicates_csv(study));
  detail::write_text(dir / "report.csv", report_csv(study.report));
  detail::write_text(dir / "report.json", report_to_json(study.report).dump(2) + "\n");
}

}  // namespace mzip
