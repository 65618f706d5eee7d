#pragma once

#include <stdexcept>
#include <string>

namespace actta {

// Shape or dimension mismatch at an operation boundary.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Math domain violation: log of a non-positive value, division by zero,
// non-finite results where the caller guaranteed finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API contract violation: non-scalar loss in backward, empty parameter
// selection, invalid step size, and similar programming errors.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem-level failure: file cannot be opened or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed persisted data. `kind()` distinguishes header problems from
// truncation from internal inconsistency so tests can assert the category.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { kBadHeader, kTruncated, kInconsistent };

  FormatError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Configuration validation failure. `field()` names the offending entry
// (dotted path, e.g. "dataset.n_classes").
class ValidationError : public std::runtime_error {
 public:
  ValidationError(const std::string& field, const std::string& msg)
      : std::runtime_error(field + ": " + msg), field_(field) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace actta
