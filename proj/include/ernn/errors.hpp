#pragma once

#include <stdexcept>
#include <string>

namespace ernn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transform length is zero or not a power of two.
class InvalidLengthError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Block size does not evenly partition a matrix dimension.
class PartitionError : public Error {
 public:
  using Error::Error;
};

/// Half spectrum violates real-input symmetry.
class MalformedSpectrumError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training objective left the finite range.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_finite_objective)
      : Error(what), last_finite_objective_(last_finite_objective) {}

  double last_finite_objective() const noexcept { return last_finite_objective_; }

 private:
  double last_finite_objective_;
};

/// No block size satisfies the storage budget.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Serialized model is truncated, has a bad magic, or fails its checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ernn
