#pragma once

#include <stdexcept>
#include <string>

namespace heteroqa {

/// Malformed input data: bad JSON, missing fields, duplicate ids, broken invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or failed numerical checks.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration keys/values or command-line usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace heteroqa
