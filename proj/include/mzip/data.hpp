#pragma once

// Long-format panel ingestion: one CSV row per (subject, occasion).

#include <Eigen/Core>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mzip/config.hpp"
#include "mzip/error.hpp"

namespace mzip {

enum class Family { zip, zinb };

inline std::string_view to_string(Family f) { return f == Family::zip ? "zip" : "zinb"; }

inline Family parse_family(std::string_view s) {
  if (s == "zip") return Family::zip;
  if (s == "zinb") return Family::zinb;
  throw Error(Errc::config_error, "data", "family must be 'zip' or 'zinb', got '" + std::string(s) + "'");
}

/// Name of the covariate that is synthesized as a constant 1 when the CSV
/// does not carry a column of that name.
inline constexpr std::string_view kIntercept = "intercept";

struct Observation {
  std::int64_t y = 0;
  double offset = 1.0;
  double time = 0.0;
  Eigen::VectorXd x1;  // zero-model covariates
  Eigen::VectorXd x2;  // mean-model covariates
};

struct Subject {
  std::string id;
  Eigen::VectorXd h1;  // log sigma1 covariates
  Eigen::VectorXd h2;  // log sigma2 covariates
  Eigen::VectorXd w;   // Fisher-z correlation covariates
  std::vector<Observation> obs;
};

/// Dimensions of the parameter blocks (gamma, alpha, zeta1, zeta2, delta[, log nu]).
struct BlockSizes {
  Eigen::Index p1 = 0, p2 = 0, a = 0, b = 0, c = 0;
  bool has_nu = false;

  Eigen::Index gamma_offset() const { return 0; }
  Eigen::Index alpha_offset() const { return p1; }
  Eigen::Index zeta1_offset() const { return p1 + p2; }
  Eigen::Index zeta2_offset() const { return p1 + p2 + a; }
  Eigen::Index delta_offset() const { return p1 + p2 + a + b; }
  Eigen::Index nu_offset() const { return p1 + p2 + a + b + c; }
  Eigen::Index size() const { return nu_offset() + (has_nu ? 1 : 0); }

  friend bool operator==(const BlockSizes&, const BlockSizes&) = default;
};

struct ColumnNames {
  std::vector<std::string> zero, mean, sigma1, sigma2, rho;
  friend bool operator==(const ColumnNames&, const ColumnNames&) = default;
};

struct ModelSpec {
  Family family = Family::zip;
  ColumnNames covariates;
  int quadrature_points = 20;
  int max_iter = 200;
  double grad_tol = 1e-5;
  double loglik_rel_tol = 1e-9;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 = hardware concurrency

  BlockSizes sizes() const {
    return {static_cast<Eigen::Index>(covariates.zero.size()),
            static_cast<Eigen::Index>(covariates.mean.size()),
            static_cast<Eigen::Index>(covariates.sigma1.size()),
            static_cast<Eigen::Index>(covariates.sigma2.size()),
            static_cast<Eigen::Index>(covariates.rho.size()),
            family == Family::zinb};
  }

  static ModelSpec from_config(const KeyValueConfig& cfg) {
    ModelSpec spec;
    spec.family = parse_family(cfg.get_string("family", "zip"));
    spec.covariates.zero = cfg.get_list("zero_covariates");
    spec.covariates.mean = cfg.get_list("mean_covariates");
    spec.covariates.sigma1 = cfg.get_list("sigma1_covariates");
    spec.covariates.sigma2 = cfg.get_list("sigma2_covariates");
    spec.covariates.rho = cfg.get_list("rho_covariates");
    const std::vector<std::string> intercept_only{std::string(kIntercept)};
    if (spec.covariates.zero.empty()) spec.covariates.zero = intercept_only;
    if (spec.covariates.mean.empty()) spec.covariates.mean = intercept_only;
    if (spec.covariates.sigma1.empty()) spec.covariates.sigma1 = intercept_only;
    if (spec.covariates.sigma2.empty()) spec.covariates.sigma2 = intercept_only;
    if (spec.covariates.rho.empty()) spec.covariates.rho = intercept_only;
    spec.quadrature_points = static_cast<int>(cfg.get_int("quadrature_points", 20));
    spec.max_iter = static_cast<int>(cfg.get_int("max_iter", 200));
    spec.grad_tol = cfg.get_double("grad_tol", 1e-5);
    spec.loglik_rel_tol = cfg.get_double("loglik_rel_tol", 1e-9);
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    if (spec.quadrature_points < 2) {
      throw Error(Errc::config_error, "data", "quadrature_points must be >= 2");
    }
    if (spec.max_iter < 0) throw Error(Errc::config_error, "data", "max_iter must be >= 0");
    if (!(spec.grad_tol > 0.0)) throw Error(Errc::config_error, "data", "grad_tol must be > 0");
    return spec;
  }
};

struct Dataset {
  std::vector<Subject> subjects;
  ColumnNames columns;
  Family family = Family::zip;

  std::size_t n_obs() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.obs.size();
    return n;
  }
};

namespace detail {

// Splits one CSV record. Double-quoted fields may contain commas; "" escapes a quote.
inline std::vector<std::string> csv_fields(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  return out + "\"";
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses long-format CSV text. Rows are grouped by `subject` in order of
/// first appearance; row order within a subject is preserved.
inline Dataset parse_dataset(std::string_view csv_text, const ModelSpec& spec) {
  const auto lines = detail::lines_of(csv_text);
  std::size_t header_line = 0;
  while (header_line < lines.size() && detail::trim(lines[header_line]).empty()) ++header_line;
  if (header_line == lines.size()) {
    throw Error(Errc::empty_dataset, "data", "CSV has no header row");
  }
  const auto header = detail::csv_fields(lines[header_line]);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) col.emplace(header[j], j);

  auto require = [&](const std::string& name) {
    const auto it = col.find(name);
    if (it == col.end()) throw Error(Errc::missing_column, "data", "column '" + name + "' not found in header");
    return it->second;
  };
  const std::size_t subject_col = require("subject");
  const std::size_t y_col = require("y");
  constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  const std::size_t offset_col = col.count("offset") ? col.at("offset") : kAbsent;
  const std::size_t time_col = col.count("time") ? col.at("time") : kAbsent;

  // Column index per covariate, nullopt = synthesized intercept.
  auto resolve = [&](const std::vector<std::string>& names) {
    std::vector<std::optional<std::size_t>> idx;
    for (const auto& n : names) {
      const auto it = col.find(n);
      if (it != col.end()) {
        idx.emplace_back(it->second);
      } else if (n == kIntercept) {
        idx.emplace_back(std::nullopt);
      } else {
        throw Error(Errc::missing_column, "data", "covariate column '" + n + "' not found in header");
      }
    }
    return idx;
  };
  const auto zero_idx = resolve(spec.covariates.zero);
  const auto mean_idx = resolve(spec.covariates.mean);
  const auto s1_idx = resolve(spec.covariates.sigma1);
  const auto s2_idx = resolve(spec.covariates.sigma2);
  const auto rho_idx = resolve(spec.covariates.rho);

  Dataset ds;
  ds.family = spec.family;
  ds.columns = spec.covariates;
  std::unordered_map<std::string, std::size_t> subject_pos;

  for (std::size_t li = header_line + 1; li < lines.size(); ++li) {
    if (detail::trim(lines[li]).empty()) continue;
    const std::size_t row = li + 1;  // 1-based file line
    const auto fields = detail::csv_fields(lines[li]);
    if (fields.size() != header.size()) {
      throw Error(Errc::parse_error, "data",
                  "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    auto number = [&](std::size_t j) {
      const auto v = detail::parse_double(fields[j]);
      if (!v || !std::isfinite(*v)) {
        throw Error(Errc::parse_error, "data",
                    "row " + std::to_string(row) + ", column '" + header[j] + "': not a finite number");
      }
      return *v;
    };
    auto gather = [&](const std::vector<std::optional<std::size_t>>& idx) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) v[static_cast<Eigen::Index>(k)] = idx[k] ? number(*idx[k]) : 1.0;
      return v;
    };

    Observation o;
    {
      const auto yv = detail::parse_double(fields[y_col]);
      if (!yv || !std::isfinite(*yv) || *yv < 0.0 || std::floor(*yv) != *yv || *yv > 9.0e15) {
        throw Error(Errc::non_integer_count, "data",
                    "row " + std::to_string(row) + ", column 'y': '" + fields[y_col] +
                        "' is not a nonnegative integer");
      }
      o.y = static_cast<std::int64_t>(*yv);
    }
    if (offset_col != kAbsent) {
      o.offset = number(offset_col);
      if (!(o.offset > 0.0)) {
        throw Error(Errc::non_positive_offset, "data",
                    "row " + std::to_string(row) + ", column 'offset': must be > 0");
      }
    }
    o.x1 = gather(zero_idx);
    o.x2 = gather(mean_idx);

    const std::string& id = fields[subject_col];
    auto [it, inserted] = subject_pos.emplace(id, ds.subjects.size());
    if (inserted) {
      Subject s;
      s.id = id;
      s.h1 = gather(s1_idx);
      s.h2 = gather(s2_idx);
      s.w = gather(rho_idx);
      ds.subjects.push_back(std::move(s));
    } else {
      const Subject& s = ds.subjects[it->second];
      if (gather(s1_idx) != s.h1 || gather(s2_idx) != s.h2 || gather(rho_idx) != s.w) {
        throw Error(Errc::inconsistent_covariate, "data",
                    "row " + std::to_string(row) + ": subject '" + id +
                        "' has subject-level covariates that differ from its first row");
      }
    }
    Subject& s = ds.subjects[it->second];
    o.time = time_col != kAbsent ? number(time_col) : static_cast<double>(s.obs.size() + 1);
    s.obs.push_back(std::move(o));
  }
  if (ds.subjects.empty()) throw Error(Errc::empty_dataset, "data", "CSV contains no data rows");
  return ds;
}

/// Checks type invariants and block dimensions. Returns non-fatal warnings.
inline std::vector<std::string> validate(const Dataset& ds, const ModelSpec& spec) {
  const BlockSizes sz = spec.sizes();
  if (ds.subjects.empty()) throw Error(Errc::empty_dataset, "data", "dataset has no subjects");
  auto check_dim = [](Eigen::Index got, Eigen::Index want, const char* block, const std::string& where) {
    if (got != want) {
      throw Error(Errc::dimension_mismatch, "data",
                  std::string(block) + ": " + where + " has length " + std::to_string(got) +
                      ", model expects " + std::to_string(want));
    }
  };
  std::vector<std::string> warnings;
  for (const auto& s : ds.subjects) {
    if (s.obs.empty()) throw Error(Errc::empty_dataset, "data", "subject '" + s.id + "' has no observations");
    const std::string where = "subject '" + s.id + "'";
    check_dim(s.h1.size(), sz.a, "sigma1 block", where);
    check_dim(s.h2.size(), sz.b, "sigma2 block", where);
    check_dim(s.w.size(), sz.c, "rho block", where);
    if (!s.h1.allFinite() || !s.h2.allFinite() || !s.w.allFinite()) {
      throw Error(Errc::domain_error, "data", where + ": non-finite subject covariate");
    }
    std::map<double, int> times;
    for (const auto& o : s.obs) {
      check_dim(o.x1.size(), sz.p1, "zero block", where);
      check_dim(o.x2.size(), sz.p2, "mean block", where);
      if (o.y < 0) throw Error(Errc::non_integer_count, "data", where + ": negative count");
      if (!(o.offset > 0.0) || !std::isfinite(o.offset)) {
        throw Error(Errc::non_positive_offset, "data", where + ": offset must be positive and finite");
      }
      if (!o.x1.allFinite() || !o.x2.allFinite()) {
        throw Error(Errc::domain_error, "data", where + ": non-finite covariate");
      }
      if (++times[o.time] == 2) {
        warnings.push_back("DuplicateTime: " + where + " repeats time " + detail::format_double(o.time));
      }
    }
  }
  return warnings;
}

/// Writes the dataset back to long-format CSV. Numbers use the shortest
/// representation that round-trips exactly.
inline std::string serialize_dataset(const Dataset& ds) {
  struct Source {
    int block;  // 0 zero, 1 mean, 2 sigma1, 3 sigma2, 4 rho
    Eigen::Index index;
  };
  std::vector<std::string> names;
  std::map<std::string, Source> source;
  const std::vector<std::string>* blocks[] = {&ds.columns.zero, &ds.columns.mean, &ds.columns.sigma1,
                                              &ds.columns.sigma2, &ds.columns.rho};
  for (int b = 0; b < 5; ++b) {
    for (std::size_t k = 0; k < blocks[b]->size(); ++k) {
      const auto& n = (*blocks[b])[k];
      // A covariate named like a leading column is read back from that column.
      if (n == "subject" || n == "y" || n == "offset" || n == "time") continue;
      if (source.emplace(n, Source{b, static_cast<Eigen::Index>(k)}).second) names.push_back(n);
    }
  }
  std::string out = "subject,y,offset,time";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (const auto& s : ds.subjects) {
    for (const auto& o : s.obs) {
      out += detail::csv_quote(s.id) + "," + std::to_string(o.y) + "," + detail::format_double(o.offset) + "," +
             detail::format_double(o.time);
      for (const auto& n : names) {
        const Source src = source.at(n);
        const Eigen::VectorXd* v = nullptr;
        switch (src.block) {
          case 0: v = &o.x1; break;
          case 1: v = &o.x2; break;
          case 2: v = &s.h1; break;
          case 3: v = &s.h2; break;
          default: v = &s.w; break;
        }
        out += "," + detail::format_double((*v)[src.index]);
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace mzip
