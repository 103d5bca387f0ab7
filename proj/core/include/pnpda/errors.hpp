#pragma once

#include <stdexcept>
#include <string>

namespace pnpda {

// Thrown when a matrix expected to be positive definite is not.
struct CholeskyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewMembers : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A state vector picked up a NaN/Inf component (integration blow-up).
struct NonFiniteState : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MisalignedTimes : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegeneratePlan : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotPsd : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalUnderflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed configuration or file content.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pnpda
