#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mzip {

enum class Errc {
  missing_column,
  non_integer_count,
  non_positive_offset,
  empty_dataset,
  inconsistent_covariate,
  dimension_mismatch,
  domain_error,
  empty_input,
  factorization_failure,
  non_finite_likelihood,
  degenerate_data,
  singular_information,
  negative_statistic,
  singular_truth,
  all_replicates_failed,
  config_error,
  parse_error,
  io_error,
};

inline constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::missing_column: return "MissingColumn";
    case Errc::non_integer_count: return "NonIntegerCount";
    case Errc::non_positive_offset: return "NonPositiveOffset";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::inconsistent_covariate: return "InconsistentCovariate";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::domain_error: return "DomainError";
    case Errc::empty_input: return "EmptyInput";
    case Errc::factorization_failure: return "FactorizationFailure";
    case Errc::non_finite_likelihood: return "NonFiniteLikelihood";
    case Errc::degenerate_data: return "DegenerateData";
    case Errc::singular_information: return "SingularInformation";
    case Errc::negative_statistic: return "NegativeStatistic";
    case Errc::singular_truth: return "SingularTruth";
    case Errc::all_replicates_failed: return "AllReplicatesFailed";
    case Errc::config_error: return "ConfigError";
    case Errc::parse_error: return "ParseError";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

/// Library exception. `module()` names the subsystem that raised it so the
/// command-line front end can print "module: Kind: detail".
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string module, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        module_(std::move(module)) {}

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  Errc code_;
  std::string module_;
};

}  // namespace mzip
