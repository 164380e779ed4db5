#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shadow_att {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- data ----------------------------------------------------------------

class DataError : public Error {
public:
    using Error::Error;
};

class MissingColumn : public DataError {
public:
    explicit MissingColumn(std::string column)
        : DataError("missing column '" + column + "'"), column_(std::move(column)) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

/// A cell in the t or y column holds something other than 0 or 1.
/// Rows are 1-based data rows (the header is not counted).
class NonBinaryValue : public DataError {
public:
    NonBinaryValue(std::size_t row, std::string column)
        : DataError("non-binary value at row " + std::to_string(row) + ", column '" + column + "'"),
          row_(row), column_(std::move(column)) {}
    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

class ParseError : public DataError {
public:
    ParseError(std::size_t row, std::string column, const std::string& detail = "unparseable value")
        : DataError(detail + " at row " + std::to_string(row) + ", column '" + column + "'"),
          row_(row), column_(std::move(column)) {}
    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

// ---- numerics ------------------------------------------------------------

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t expected, std::size_t got, const std::string& what = "vector")
        : Error(what + ": expected dimension " + std::to_string(expected) + ", got " +
                std::to_string(got)) {}
};

/// The propensity saturated (pi too close to 1) so 1/(1 - pi) is unusable.
class NumericalBlowup : public Error {
public:
    using Error::Error;
};

class DegenerateDesign : public Error {
public:
    using Error::Error;
};

class EmptyTrainingSet : public Error {
public:
    using Error::Error;
};

class PreconditionFailure : public Error {
public:
    using Error::Error;
};

class NonConvergence : public Error {
public:
    NonConvergence(const std::string& msg, double residual) : Error(msg), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class SingularJacobian : public Error {
public:
    using Error::Error;
};

class SingularM : public Error {
public:
    using Error::Error;
};

class DegenerateDenominator : public Error {
public:
    using Error::Error;
};

class NoTreatedUnits : public Error {
public:
    using Error::Error;
};

class MissingH : public Error {
public:
    MissingH() : Error("score context has no efficient-influence weight vector H") {}
};

class InfeasibleStratification : public Error {
public:
    using Error::Error;
};

class PipelineFailure : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace shadow_att
