#pragma once

#include <stdexcept>
#include <string>

namespace uraenas {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or axes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Caller supplied a value outside the documented domain.
class InputError : public Error {
public:
    using Error::Error;
};

/// API misuse: wrong call order, empty selections, non-scalar losses.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent configuration. `pointer()` is a JSON pointer when
/// the problem came from a config document.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::string pointer = {})
        : Error(pointer.empty() ? what : pointer + ": " + what), pointer_(std::move(pointer)) {}
    const std::string& pointer() const noexcept { return pointer_; }

private:
    std::string pointer_;
};

/// Malformed file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// File system failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// A documented invariant was violated at runtime.
class InvariantError : public Error {
public:
    using Error::Error;
};

/// Non-finite gradients, divergence and similar optimisation failures.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace uraenas
