#pragma once

#include <stdexcept>
#include <string>

namespace dyneq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An exit-time map reorders or stalls users on an interval that carries mass.
class FifoViolation : public Error {
public:
    using Error::Error;
};

class ModelParameterError : public Error {
public:
    using Error::Error;
};

/// Network loading did not drain within the finiteness budget.
class NonTermination : public Error {
public:
    using Error::Error;
};

class NoRoute : public Error {
public:
    using Error::Error;
};

class InstanceTooLarge : public Error {
public:
    using Error::Error;
};

class DegenerateDemand : public Error {
public:
    using Error::Error;
};

/// Input violates a documented invariant; the message names the invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed scenario text. Carries the line (0 if unknown) and field path.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::string field)
        : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}

    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    static std::string format(const std::string& what, std::size_t line, const std::string& field) {
        std::string msg = "parse error";
        if (line > 0) msg += " at line " + std::to_string(line);
        if (!field.empty()) msg += " in '" + field + "'";
        return msg + ": " + what;
    }

    std::size_t line_;
    std::string field_;
};

}  // namespace dyneq
