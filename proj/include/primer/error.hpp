#pragma once

#include <stdexcept>
#include <string>

namespace primer {

/// Raised when a caller breaks an API precondition (programming error).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// Raised for bad external input: malformed files, oversized sequences, empty task lists.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw ContractViolation(msg);
    }
}

inline void require_input(bool cond, const std::string& msg) {
    if (!cond) {
        throw InputError(msg);
    }
}

}  // namespace detail
}  // namespace primer
