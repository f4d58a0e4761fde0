#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmamba {

// Error taxonomy. Each class maps to one CLI exit-code family.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor extents, invalid axes.
struct ShapeError : Error {
    using Error::Error;
};

// Argument outside its documented domain (odd channel count, delta <= 0, ...).
struct ValueError : Error {
    using Error::Error;
};

// Non-finite values detected, failed gradient checks.
struct NumericalError : Error {
    using Error::Error;
};

// Filesystem-level failures (cannot open/read/write).
struct IoError : Error {
    using Error::Error;
};

// File content violates a binary format contract (magic, version).
struct FormatError : Error {
    using Error::Error;
};

// File ended before the declared payload was read.
struct TruncationError : FormatError {
    using FormatError::FormatError;
};

// Stored tensor extents disagree with the expected shape.
struct ExtentError : FormatError {
    using FormatError::FormatError;
};

using Shape = std::vector<int64_t>;

inline std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

// When enabled, forward ops verify their outputs are finite and throw
// NumericalError otherwise. Off by default; tests and debugging turn it on.
void set_debug_checks(bool enabled);
bool debug_checks();

}  // namespace dmamba
