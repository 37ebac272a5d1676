#pragma once

#include <stdexcept>
#include <string>

namespace kanalysis {

/// Raised for malformed or inconsistent user input (files, flags, shapes).
/// The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine fails on otherwise valid input
/// (eigensolver non-convergence and the like).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace kanalysis
