#pragma once

#include <stdexcept>
#include <string>

namespace sparsealloc {

// Broad failure classes; the CLI maps them to exit codes 1, 2 and 3.
enum class ErrorKind { Usage, Io, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

enum class BudgetFault { ExceedsDomain, Infeasible };

class BudgetError : public Error {
public:
    BudgetError(BudgetFault fault, const std::string& what)
        : Error(ErrorKind::Usage, what), fault_(fault) {}

    BudgetFault fault() const noexcept { return fault_; }

private:
    BudgetFault fault_;
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Degenerate inputs or parameters: constant rows, zero decoder rows.
class DegenerateError : public NumericError {
public:
    explicit DegenerateError(const std::string& what) : NumericError(what) {}
};

class InsufficientDataError : public NumericError {
public:
    explicit InsufficientDataError(const std::string& what) : NumericError(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

enum class FormatFault { BadMagic, VersionMismatch, Truncated, BadHeader, NonFinite };

class FormatError : public IoError {
public:
    FormatError(FormatFault fault, const std::string& what) : IoError(what), fault_(fault) {}

    FormatFault fault() const noexcept { return fault_; }

private:
    FormatFault fault_;
};

inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Usage: return 1;
    case ErrorKind::Io: return 2;
    case ErrorKind::Numeric: return 3;
    }
    return 1;
}

}  // namespace sparsealloc
