#pragma once

#include <stdexcept>
#include <string>

namespace delaynet {

/// Violation of a mathematical precondition (disconnected graph, negative
/// delay, mismatched dimensions).
struct domain_error : std::runtime_error {
    explicit domain_error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file or JSON document.
struct schema_error : std::runtime_error {
    explicit schema_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure at run time (divergence, no convergence).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace delaynet
