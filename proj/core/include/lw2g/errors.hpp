#pragma once

#include <stdexcept>
#include <string>

namespace lw2g {

/// Thrown when a caller violates a documented precondition (shape, range, ordering).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when the numerics cannot produce a meaningful result
/// (all-zero representation matrix, vanishing gradient).
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a file or trace row cannot be parsed.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ContractError(message);
    }
}

}  // namespace lw2g
