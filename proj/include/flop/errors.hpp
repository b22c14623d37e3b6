#pragma once

#include <stdexcept>
#include <string>

namespace flop {

/// Shapes that do not fit an operation, or sizes that disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an operation (e.g. log of x <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A forward pass produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the differentiation tape (double backward, non-scalar loss...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed configuration, checkpoint, or corpus input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flop
