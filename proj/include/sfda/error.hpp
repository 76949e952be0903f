#pragma once

#include <stdexcept>
#include <string>

namespace sfda {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// ConfigError -> 2, InvalidData/FormatError/IoError -> 3, VerificationFailure -> 4.

// Caller passed arguments that violate a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data is malformed (non-finite samples, unnormalized distributions,
// unlabeled clips where labels are required, ...).
class InvalidData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary container could not be decoded (bad magic, version, CRC).
class FormatError : public InvalidData {
 public:
  using InvalidData::InvalidData;
};

class IoError : public InvalidData {
 public:
  using InvalidData::InvalidData;
};

// Operation invoked in the wrong lifecycle state (double backward,
// optimizer step without gradients).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite value produced by a differentiable op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VerificationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sfda
