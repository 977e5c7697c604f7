#pragma once

#include <stdexcept>
#include <string>

namespace enkbf {

// Invalid or inconsistent run configuration. CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// A numerical condition that makes continuing meaningless (non-PD solve,
// covariance losing positive semi-definiteness). CLI maps this to exit code 3.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace enkbf
