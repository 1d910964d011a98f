#pragma once

#include <stdexcept>
#include <string>

namespace pso {

// Every failure raised by the library derives from Error and carries a short
// machine-readable kind tag that the CLI prints on its single error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// An argument lies outside the mathematical domain of the operation
/// (timestep out of range, unknown condition id, ...).
class InputDomainError : public Error {
public:
    explicit InputDomainError(const std::string& m) : Error("input_domain", m) {}
};

/// A caller broke an API precondition (shape mismatch, wrong pair provenance,
/// empty batch, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& m) : Error("contract", m) {}
};

class NumericError : public Error {
public:
    NumericError(const std::string& m, double value) : Error("numeric", m), value_(value) {}
    double value() const noexcept { return value_; }

private:
    double value_;
};

/// A training loop produced a non-finite loss.
class TrainingFailure : public Error {
public:
    TrainingFailure(const std::string& m, long step) : Error("training_failure", m), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class LoadError : public Error {
public:
    explicit LoadError(const std::string& m) : Error("load", m) {}
};

class CompatibilityError : public Error {
public:
    explicit CompatibilityError(const std::string& m) : Error("compatibility", m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

} // namespace pso
