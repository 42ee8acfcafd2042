#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vlgcbm {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structural problems in on-disk artifacts. `code` identifies the failure
/// class so callers (and tests) can distinguish e.g. a bad magic from a
/// truncated payload without parsing the message.
class FormatError : public Error {
public:
    enum class Code {
        Io,
        BadMagic,
        BadVersion,
        MalformedHeader,
        MalformedRecord,
        TruncatedPayload,
        TrailingBytes,
        DimMismatch,
        DuplicateId,
        InvariantViolation,
    };

    FormatError(Code code, const std::string& msg, std::size_t line = 0)
        : Error(msg), code(code), line(line) {}

    Code code;
    std::size_t line;  // 1-based line number where applicable, 0 otherwise
};

/// Semantic problems in otherwise well-formed data (unresolved ids,
/// unknown concepts, length mismatches between aligned inputs).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration; `field` names the offending config entry.
class ConfigError : public Error {
public:
    ConfigError(std::string field_name, const std::string& msg)
        : Error(msg), field(std::move(field_name)) {}

    std::string field;
};

/// Numerical failures: non-finite losses, solver non-convergence.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace vlgcbm
