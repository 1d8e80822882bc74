#pragma once

#include <stdexcept>
#include <string>

namespace fairdiff {

/// Process exit codes shared by every command-line entry point.
enum class ExitCode : int {
    kOk = 0,
    kIo = 1,
    kInvalidInput = 2,
    kQuality = 3,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::kInvalidInput; }
};

class IoError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

// Input-class errors. All map to exit code 2.
class ShapeError : public Error {
public:
    using Error::Error;
};

class SpecError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t column)
        : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
          line_(line),
          column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// Raised when a trained component misses its deployment floor.
class QualityError : public Error {
public:
    QualityError(const std::string& what, double measured) : Error(what), measured_(measured) {}
    ExitCode exit_code() const noexcept override { return ExitCode::kQuality; }
    double measured() const noexcept { return measured_; }

private:
    double measured_;
};

}  // namespace fairdiff
