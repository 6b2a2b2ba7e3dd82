#pragma once

#include <stdexcept>
#include <string>

namespace p2dnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A ParameterSet field violates its invariant. `field()` names it.
class ParameterError : public Error {
public:
    ParameterError(std::string field, const std::string& what)
        : Error("parameter '" + field + "': " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Newton iteration did not converge even at the smallest sub-step.
class SolverError : public Error {
public:
    SolverError(const std::string& what, double residual, double time)
        : Error(what), residual_(residual), time_(time) {}
    double residual() const noexcept { return residual_; }
    double time() const noexcept { return time_; }

private:
    double residual_;
    double time_;
};

/// A concentration left its physical range.
class PhysicalityError : public Error {
public:
    using Error::Error;
};

/// Malformed file content. `offset()` is the byte position of the problem.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Manifest and payload disagree.
class IntegrityError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class OptimizerError : public Error {
public:
    using Error::Error;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class EstimationError : public Error {
public:
    using Error::Error;
};

} // namespace p2dnet
