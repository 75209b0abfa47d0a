#pragma once

#include <stdexcept>
#include <string>

namespace dopplervel {

// Invalid parameters throw std::invalid_argument with the offending quantity named.

/// A least-squares or maximum-likelihood fit failed (degenerate data or no convergence).
struct fit_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Scenario file rejected: parse failure, unknown/missing key, or out-of-range value.
/// what() names the offending key path, e.g. "drive.duration_s".
struct scenario_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace dopplervel
