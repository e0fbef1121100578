#pragma once

#include <stdexcept>
#include <string>

namespace ectlab {

// Argument outside the mathematical domain of an operation (sigma <= 0, empty mask, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// Configuration problem. `path` is the dotted field path, e.g. "data.n_min".
struct ConfigError : std::runtime_error {
    ConfigError(std::string path, const std::string& message)
        : std::runtime_error(path + ": " + message), path(std::move(path)) {}
    std::string path;
};

struct IoError : std::runtime_error {
    IoError(std::string path, const std::string& message)
        : std::runtime_error(path + ": " + message), path(std::move(path)) {}
    std::string path;
};

}  // namespace ectlab
