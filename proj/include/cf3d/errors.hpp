#pragma once

#include <stdexcept>
#include <string>

namespace cf3d {

/// Base class for every error raised by the library. The CLI maps the
/// concrete type onto its process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller misuse: bad arguments, bad configuration, out-of-range inputs. Exit 2.
class UsageError : public Error { using Error::Error; };
class ConfigError : public UsageError { using UsageError::UsageError; };
class RangeError : public UsageError { using UsageError::UsageError; };
class ShapeError : public UsageError { using UsageError::UsageError; };

// Data problems: unreadable or corrupt files, invalid scenes. Exit 3.
class DataError : public Error { using Error::Error; };
class FormatError : public DataError { using DataError::DataError; };
class GenerationError : public DataError { using DataError::DataError; };

// Numerical breakdown: singular systems, non-finite losses. Exit 4.
class NumericError : public Error { using Error::Error; };
class DegenerateChannelError : public NumericError { using NumericError::NumericError; };

}  // namespace cf3d
