#pragma once

#include <stdexcept>
#include <string>

namespace wavenet {

/// Input value outside the mathematical domain of an operation.
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor or kernel shapes do not line up.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Data content violates a contract (class out of range, too short, ...).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operation called in the wrong order or on stale internal state.
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file does not match the expected on-disk format.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file is structurally valid but fails an integrity check.
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem-level failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace wavenet
