#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace arbcost {

/// Base of every library error. `name()` is the machine-readable error kind
/// that the CLI prints on stderr.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& message)
        : std::runtime_error(message), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

#define ARBCOST_DEFINE_ERROR(Type)                                              \
    class Type : public Error {                                                 \
    public:                                                                     \
        explicit Type(const std::string& message) : Error(#Type, message) {}    \
    };

ARBCOST_DEFINE_ERROR(InvalidParams)
ARBCOST_DEFINE_ERROR(DegenerateSpread)
ARBCOST_DEFINE_ERROR(NegativePriceStep)
ARBCOST_DEFINE_ERROR(SingularHedge)
ARBCOST_DEFINE_ERROR(PriceOutOfBounds)
ARBCOST_DEFINE_ERROR(NoConvergence)
ARBCOST_DEFINE_ERROR(InsufficientQuotes)
ARBCOST_DEFINE_ERROR(ZeroDrift)
ARBCOST_DEFINE_ERROR(EmptySurface)
ARBCOST_DEFINE_ERROR(DuplicateDate)
ARBCOST_DEFINE_ERROR(EmptyChain)
ARBCOST_DEFINE_ERROR(InsufficientData)
ARBCOST_DEFINE_ERROR(EmptyDateIntersection)
ARBCOST_DEFINE_ERROR(ConfigError)

#undef ARBCOST_DEFINE_ERROR

/// Raised when q_up falls outside (0, 1). Carries the largest step that
/// keeps the probability admissible for the same parameters.
class ProbabilityOutOfRange : public Error {
public:
    ProbabilityOutOfRange(const std::string& message, double max_dt)
        : Error("ProbabilityOutOfRange", message), max_dt_(max_dt) {}

    double max_dt() const noexcept { return max_dt_; }

private:
    double max_dt_;
};

/// Malformed tabular input. Rows are 1-based data rows (header excluded).
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t row, std::string column)
        : Error("ParseError", message), row_(row), column_(std::move(column)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

class NonPositivePrice : public Error {
public:
    NonPositivePrice(const std::string& message, std::size_t row)
        : Error("NonPositivePrice", message), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

}  // namespace arbcost
