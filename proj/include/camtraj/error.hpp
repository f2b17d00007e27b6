#pragma once

#include <stdexcept>
#include <string>

namespace camtraj {

// Base class for all library errors; subtypes let callers map failures to
// exit categories without string matching.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInputError : Error {
    explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct MissingGravityError : Error {
    explicit MissingGravityError(const std::string& msg) : Error(msg) {}
};

// File parsing / serialization problems (bad magic, truncation, manifest
// disagreement, malformed records).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Configuration schema violations; message lists the offending paths.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Embedding service failures (non-200, wrong dimensionality, timeout).
struct ServiceError : Error {
    explicit ServiceError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered during training, step overflow and similar.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace camtraj
