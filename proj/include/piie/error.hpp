#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace piie {

enum class ErrorCode {
  syntax,
  duplicate_term,
  unknown_token,
  unknown_column,
  missing_column,
  unparseable_file,
  non_binary_exposure,
  empty_dataset,
  constant_exposure,
  singular_design,
  degenerate_outcome,
  degenerate_density,
  unsupported_model,
  positivity,
  dimension_mismatch,
  invalid_argument,
  resample_failure,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code so the
// CLI can map it to an exit status and an error JSON object.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class FormulaError : public Error {
 public:
  FormulaError(ErrorCode code, std::size_t offset, const std::string& message)
      : Error(code, message + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace piie
