#pragma once

#include <stdexcept>
#include <string>

namespace favae {

// Shape or rank violation in an op's inputs.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Caller broke an operation's precondition (non-scalar loss, missing grad, bad argument).
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

// NaN/Inf produced or detected, or a gradient check failed.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed command line or configuration.
class UsageError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace favae
