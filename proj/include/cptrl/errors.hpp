#pragma once

#include <stdexcept>
#include <string>

namespace cptrl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Construction-time invariant violations (bad spec parameters, invalid
// probability vectors, non-monotone curves, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad arguments to an otherwise valid operation (empty sample list, a >= b, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Operation not defined for the given kind (e.g. entropy of a continuous
// policy, piecewise-affine phi on a smooth weight).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Enumeration / unwinding size caps exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// File ingestion problems (CSV shape, bad values).
class IngestError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration problems (missing/ill-typed fields).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training aborted (non-finite parameters or gradients).
class TrainError : public Error {
 public:
  TrainError(const std::string& what, int iteration)
      : Error(what), iteration(iteration) {}
  int iteration;
};

}  // namespace cptrl
