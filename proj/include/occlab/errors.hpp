#pragma once

#include <stdexcept>
#include <string>

namespace occlab {

/// Caller passed something outside an operation's domain (bad token, shape
/// mismatch, invalid position).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration violates a documented invariant.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The requested quantity does not exist for these inputs (e.g. the optimum of
/// a degenerate parabola, a correlation of a constant series).
class UndefinedError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace occlab
