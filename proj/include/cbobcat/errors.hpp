#pragma once

#include <stdexcept>
#include <string>

namespace cbobcat {

/// Bad input supplied by the caller (out-of-range ids, invalid ratios, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed text input; the message names the offending line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data violates a structural invariant (duplicates, too few records, ...).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked on an object whose state does not permit it.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Mathematical domain violation, e.g. log of a non-positive value.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite value produced during computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric is undefined for the given input (e.g. AUC with one class).
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cbobcat
