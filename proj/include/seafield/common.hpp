#ifndef SEAFIELD_COMMON_HPP
#define SEAFIELD_COMMON_HPP

#include <stdexcept>
#include <string>

namespace seafield {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shape or index mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent dataset files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid or unknown configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input that makes an operation ill-defined (e.g. zero-variance series).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Metric evaluated outside its domain (e.g. MAPE with zero targets).
class MetricDomainError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

namespace detail {
[[noreturn]] inline void fail_check(const char* expr, const std::string& msg) {
    throw Error(std::string("check failed: ") + expr + (msg.empty() ? "" : (" — " + msg)));
}
} // namespace detail

} // namespace seafield

#define SF_CHECK(expr, msg)                                        \
    do {                                                           \
        if (!(expr)) ::seafield::detail::fail_check(#expr, (msg)); \
    } while (0)

#endif // SEAFIELD_COMMON_HPP
