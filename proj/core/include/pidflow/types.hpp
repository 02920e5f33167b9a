#pragma once

#include <Eigen/Dense>

namespace pidflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Row-major single-precision matrix, the in-memory form of stored activations.
using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLn2 = 0.69314718055994530941723212145817656807550013436;

inline double nats_to_bits(double nats) { return nats / kLn2; }
inline double bits_to_nats(double bits) { return bits * kLn2; }

}  // namespace pidflow
