#pragma once

#include <stdexcept>
#include <string>

namespace spod {

/// Broad failure classes. The CLI maps them onto exit codes: validation-like
/// failures exit with 1, numerical failures with 2.
enum class ErrorKind {
    dimension,
    config,
    validation,
    empty_class,
    capacity,
    metric,
    io,
    numerical,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    bool is_numerical() const noexcept { return kind_ == ErrorKind::numerical; }

private:
    ErrorKind kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(ErrorKind::validation, w) {}
};

struct EmptyClassError : Error {
    explicit EmptyClassError(const std::string& w) : Error(ErrorKind::empty_class, w) {}
};

struct CapacityError : Error {
    explicit CapacityError(const std::string& w) : Error(ErrorKind::capacity, w) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& w) : Error(ErrorKind::metric, w) {}
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& w) : Error(ErrorKind::numerical, w) {}
};

struct TrainingDivergedError : NumericalError {
    TrainingDivergedError(std::size_t at_epoch, const std::string& detail)
        : NumericalError("training diverged at epoch " + std::to_string(at_epoch) + ": " + detail),
          epoch(at_epoch) {}
    std::size_t epoch;
};

struct DegenerateFitError : NumericalError {
    explicit DegenerateFitError(const std::string& w) : NumericalError(w) {}
};

struct ZeroGradientError : NumericalError {
    explicit ZeroGradientError(const std::string& w) : NumericalError(w) {}
};

struct GapCollapsedError : NumericalError {
    explicit GapCollapsedError(const std::string& w) : NumericalError(w) {}
};

}  // namespace spod
