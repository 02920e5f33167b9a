#pragma once

#include <optional>
#include <span>
#include <string>

#include "pidflow/store.hpp"
#include "pidflow/types.hpp"

namespace pidflow {

/// Collapses an m x d token region to one d-vector.
/// mean: row average; max: coordinate-wise max; attention: weight-normalized
/// convex combination (weights must be non-negative with positive sum).
Vector pool_region(const Matrix& tokens, PoolingRule rule, std::span<const double> weights = {});

/// Pools every sample of a token-granularity layer into an n x d matrix.
Matrix pool_layer(const LayerBlock& block, bool vision, PoolingRule rule);

struct PcaBasis {
    Vector mean;            // d
    Matrix components;      // d' x d, orthonormal rows
    Vector eigenvalues;     // d', descending
    double retained_fraction = 0.0;
    double target_fraction = 0.95;
    int d_prime = 0;
    bool capped = false;    // cap (or fixed dimension) cut below the retain rule
    int dropped_degenerate = 0;

    int input_dim() const { return static_cast<int>(mean.size()); }
};

struct PcaOptions {
    double retain = 0.95;
    std::optional<int> cap;
    // Forces d' (clamped to the non-degenerate rank); used by the d' sweep.
    std::optional<int> fixed_dim;
};

/// Eigenvalues below this (relative to max(1, largest)) are dropped before the retain rule.
inline constexpr double kDegenerateEigenvalue = 1e-12;

PcaBasis fit_pca(const Matrix& data, const PcaOptions& options);
PcaBasis fit_pca(const Matrix& data, double retain = 0.95, std::optional<int> cap = std::nullopt);

/// Projects centered rows onto the basis: (x - mean) * components^T.
Matrix apply_pca(const PcaBasis& basis, const Matrix& data);

std::string pca_to_json(const PcaBasis& basis);
PcaBasis pca_from_json(const std::string& text);

}  // namespace pidflow
