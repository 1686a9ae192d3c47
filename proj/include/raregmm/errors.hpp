#pragma once

#include <stdexcept>
#include <string>

namespace rgmm {

// Base of every error raised by the library. Each subclass maps onto one CLI
// exit code (see cli.hpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class SymmetryError : public DomainError {
public:
    using DomainError::DomainError;
};

class SingularCovarianceError : public Error {
public:
    SingularCovarianceError(const std::string& what, int pivot)
        : Error(what + " (non-positive pivot at index " + std::to_string(pivot) + ")"), pivot_(pivot) {}

    int pivot() const noexcept { return pivot_; }

private:
    int pivot_;
};

class NumericalFailure : public Error {
public:
    explicit NumericalFailure(const std::string& what, int coordinate = -1)
        : Error(what), coordinate_(coordinate) {}

    // Packed-theta coordinate that triggered the failure, -1 when not applicable.
    int coordinate() const noexcept { return coordinate_; }

private:
    int coordinate_;
};

class EmptyComponentError : public NumericalFailure {
public:
    explicit EmptyComponentError(const std::string& what) : NumericalFailure(what) {}
};

// Raised when 2*Sigma1^{-1} - Sigma0^{-1} is not positive definite, so the
// integrals of phi1^2/phi0 appearing in the limit matrices diverge.
class DivergingIntegralError : public Error {
public:
    using Error::Error;
};

class InitError : public Error {
public:
    using Error::Error;
};

class EvalError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace rgmm
