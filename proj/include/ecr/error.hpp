#pragma once

#include <stdexcept>
#include <string>

namespace ecr {

/// Failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
    validation,         // bad parameters or malformed input
    numerical,          // quadrature / root finding / factorization failure
    parse,              // unreadable rows in an input file
    non_monotone_dates, // dates out of order in a price file
    non_positive_price, // zero or negative price in a price file
    io,                 // file could not be opened or written
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::validation, what);
}

}  // namespace ecr
