#pragma once

#include <stdexcept>
#include <string>

namespace trmf {

/// Input or configuration that violates a documented precondition.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure of a block subproblem (singular or underdetermined system).
class NumericalError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// File system failure; the message carries the offending path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace trmf
