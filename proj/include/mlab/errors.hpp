#pragma once

#include <stdexcept>
#include <string>

namespace mlab {

// Bad user-supplied configuration (thresholds, ranges, unknown names).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exact enumeration would exceed the configured budget.
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller violated an API precondition (programming error, not input error).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace mlab
