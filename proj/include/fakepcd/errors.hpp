#pragma once

#include <stdexcept>
#include <string>

namespace fakepcd {

// Malformed input files: bad magic, unparsable line, count mismatch.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-formed data that violates an invariant (NaN coordinate, empty cloud).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite activations, diverging optimization.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent run/scenario configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failures; message carries the offending path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace fakepcd
