#pragma once

#include <stdexcept>
#include <string>

namespace relay_steer {

// Error taxonomy shared by the library and the CLI. The exit_code is what the
// command-line tool returns when the error reaches the top level:
//   2 = usage error, 3 = model-hypothesis violation, 4 = numerical failure.
struct RelayError : std::runtime_error {
  int exit_code;
  RelayError(int code, const std::string& msg)
      : std::runtime_error(msg), exit_code(code) {}
};

struct UsageError : RelayError {
  explicit UsageError(const std::string& msg) : RelayError(2, msg) {}
};

// A structural assumption of the model fails (e.g. gamma_lower_bound(B) = 0,
// sigma(y) != 0, a rank condition not met).
struct HypothesisError : RelayError {
  explicit HypothesisError(const std::string& msg) : RelayError(3, msg) {}
};

// A computation cannot be completed reliably (divergence, ill-conditioning,
// truncation budget exceeded).
struct NumericalError : RelayError {
  explicit NumericalError(const std::string& msg) : RelayError(4, msg) {}
};

}  // namespace relay_steer
