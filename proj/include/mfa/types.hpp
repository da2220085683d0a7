#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace mfa {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One sample per row; rows are contiguous so batches can be sliced cheaply.
using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Posterior component weights, N x K, rows sum to one.
using Responsibilities = Matrix;

inline constexpr double kLog2Pi = 1.83787706640934548356065947281123527;

// Lower bound on every noise variance of a covariance-form component.
inline constexpr double kPsiFloor = 1e-6;

// Lower bound on every diagonal precision entry of a precision-form component.
inline constexpr double kPrecisionFloor = 1e-6;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class SingularMatrixError : public Error {
public:
    using Error::Error;
};

class NotPositiveDefiniteError : public Error {
public:
    using Error::Error;
};

// M_k = I - Gamma^T E^-1 Gamma has a non-positive eigenvalue.
class IndefinitePrecisionError : public NotPositiveDefiniteError {
public:
    using NotPositiveDefiniteError::NotPositiveDefiniteError;
};

// Every component assigns zero density to some data point.
class DegenerateDataError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

// File missing or unreadable/unwritable.
class IoError : public Error {
public:
    using Error::Error;
};

class InvalidModelError : public Error {
public:
    using Error::Error;
};

} // namespace mfa
