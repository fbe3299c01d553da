#ifndef SEMFLOW_ERRORS_HPP
#define SEMFLOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace semflow {

/// Malformed or unreadable input: bad magic, truncated payload, parse failure.
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible dimensions between otherwise valid operands.
class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace semflow

#endif  // SEMFLOW_ERRORS_HPP
