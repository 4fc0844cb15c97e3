#pragma once

#include <stdexcept>
#include <string>

namespace vlp {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes do not conform to an op's algebra.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Math op evaluated outside its domain (log of non-positive, divide by zero, tau <= 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration field or unknown key.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File read/write failure, corrupt or truncated artifact.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace vlp
