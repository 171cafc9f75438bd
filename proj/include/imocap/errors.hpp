#pragma once

#include <stdexcept>
#include <string>

namespace imocap {

/// Wrong sizes or out-of-range arguments.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed or schema-violating input data (files, grids, configs).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Point set too degenerate for an alignment (collinear, coincident...).
struct DegeneracyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A point landed at or behind the camera plane.
struct CheiralityError : std::runtime_error {
    CheiralityError(const std::string& what, long column)
        : std::runtime_error(what), column(column) {}
    long column;
};

/// Too few weighted observations to constrain an estimate.
struct InsufficientConstraintsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace imocap
