#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace drustat {

enum class Errc {
  mismatched_length,
  omega_below_one,
  no_treated,
  nonfinite_value,
  out_of_bounds,
  invalid_input,
  k_out_of_range,
  separation_or_singular,
  one_class,
  all_qhat_zero,
  too_few_treated,
  k_too_large,
  invalid_density,
  eps_gt_delta,
  no_sign_change,
  degenerate_moment,
  io_error,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::mismatched_length: return "MISMATCHED_LENGTH";
    case Errc::omega_below_one: return "OMEGA_BELOW_ONE";
    case Errc::no_treated: return "NO_TREATED";
    case Errc::nonfinite_value: return "NONFINITE_VALUE";
    case Errc::out_of_bounds: return "OUT_OF_BOUNDS";
    case Errc::invalid_input: return "INVALID_INPUT";
    case Errc::k_out_of_range: return "K_OUT_OF_RANGE";
    case Errc::separation_or_singular: return "SEPARATION_OR_SINGULAR";
    case Errc::one_class: return "ONE_CLASS";
    case Errc::all_qhat_zero: return "ALL_QHAT_ZERO";
    case Errc::too_few_treated: return "TOO_FEW_TREATED";
    case Errc::k_too_large: return "K_TOO_LARGE";
    case Errc::invalid_density: return "INVALID_DENSITY";
    case Errc::eps_gt_delta: return "EPS_GT_DELTA";
    case Errc::no_sign_change: return "NO_SIGN_CHANGE";
    case Errc::degenerate_moment: return "DEGENERATE_MOMENT";
    case Errc::io_error: return "IO_ERROR";
  }
  return "UNKNOWN";
}

// Input problems (bad data, bad arguments) vs. failures of a computation on
// otherwise valid input. The CLI maps these to exit codes 2 and 3.
constexpr bool is_input_error(Errc code) {
  switch (code) {
    case Errc::mismatched_length:
    case Errc::omega_below_one:
    case Errc::no_treated:
    case Errc::nonfinite_value:
    case Errc::out_of_bounds:
    case Errc::invalid_input:
    case Errc::k_out_of_range:
    case Errc::eps_gt_delta:
    case Errc::io_error:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::optional<std::size_t> row = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), row_(row) {}

  Errc code() const noexcept { return code_; }
  /// Zero-based observation index the error refers to, when there is one.
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  Errc code_;
  std::optional<std::size_t> row_;
};

}  // namespace drustat
