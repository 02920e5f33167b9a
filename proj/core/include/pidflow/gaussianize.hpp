#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "pidflow/flow.hpp"
#include "pidflow/types.hpp"

namespace pidflow {

/// Hyperparameter presets. `paper` pins 8 blocks x 256 hidden, lr 1e-4,
/// batch 128, 10k steps; `test` is the desk-scale variant.
enum class Profile { paper, test };

std::string_view to_string(Profile p);
Profile parse_profile(std::string_view s);

struct FlowSettings {
    TrainConfig train;
    int num_blocks = 8;
    int hidden_dim = 256;
};

FlowSettings profile_settings(Profile p);

struct TrainResult {
    FlowModel model;
    std::vector<std::string> warnings;
};

/// Fits a flow to `data` (n x D) by maximum likelihood under a standard normal
/// base. Columns are standardized internally and the shift/scale is stored in
/// the model. Deterministic given config.seed. The returned model never has a
/// higher full-data NLL than the identity initialization.
TrainResult train_flow(const Matrix& data, const TrainConfig& config, const FlowArchitecture& arch);

struct GaussFitReport {
    std::vector<double> skewness;
    std::vector<double> excess_kurtosis;
    double max_abs_skew = 0.0;
    double max_abs_kurtosis = 0.0;
    std::vector<int> flagged;  // coordinates beyond either threshold
    double skew_threshold = 0.5;
    double kurtosis_threshold = 1.0;
    std::vector<double> nll_curve;
};

/// Per-coordinate sample skewness and excess kurtosis (population moments).
GaussFitReport gaussianity_diagnostics(const Matrix& data, double skew_threshold = 0.5,
                                       double kurtosis_threshold = 1.0);

/// Diagnostics of flow outputs, carrying a subsample of the training curve.
GaussFitReport gaussianity_diagnostics(const FlowModel& model, const Matrix& latents,
                                       double skew_threshold = 0.5, double kurtosis_threshold = 1.0);

/// Centered moving average with edge truncation.
std::vector<double> moving_average(std::span<const double> xs, int window);

}  // namespace pidflow
