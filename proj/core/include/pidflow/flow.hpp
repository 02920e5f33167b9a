#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "pidflow/types.hpp"

namespace pidflow {

/// Optimizer settings for one flow. The optimizer is always Adam.
struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 128;
    int steps = 10000;
    double weight_decay = 1e-5;
    double grad_clip = 1.0;
    std::uint64_t seed = 42;

    bool operator==(const TrainConfig&) const = default;
};

/// Shape of a flow. Coordinates [0, coupled_dims) are mixed among themselves by
/// affine couplings; the remaining coordinates (the target) only ever see
/// per-coordinate maps, so the flow is block-diagonal across that boundary.
struct FlowArchitecture {
    int input_dim = 2;
    int coupled_dims = 1;
    int num_blocks = 8;
    int hidden_dim = 256;

    bool operator==(const FlowArchitecture&) const = default;
};

/// Scale/shift network of one coupling: Linear -> ReLU -> Linear.
struct CouplingLayer {
    std::vector<int> cond;   // conditioning coordinates
    std::vector<int> trans;  // transformed coordinates
    Matrix w1;               // H x |cond|
    Vector b1;               // H
    Matrix w2;               // 2|trans| x H  (rows: log-scale raw, then shift)
    Vector b2;               // 2|trans|

    bool operator==(const CouplingLayer&) const = default;
};

/// One block: optional coupling, per-coordinate sinh-arcsinh map, then
/// normalization with running statistics.
struct FlowBlock {
    std::optional<CouplingLayer> coupling;
    Vector log_delta;  // D, sinh-arcsinh tail weight (log)
    Vector epsilon;    // D, sinh-arcsinh skew
    Vector log_gamma;  // D
    Vector beta;       // D
    Vector running_mean;
    Vector running_var;

    bool operator==(const FlowBlock&) const = default;
};

/// Bound on the coupling log-scale: log s = kScaleBound * tanh(raw / kScaleBound).
inline constexpr double kScaleBound = 4.0;
/// Variance floor used by normalization in training mode.
inline constexpr double kNormEpsilon = 1e-5;

struct FlowModel {
    FlowArchitecture arch;
    // Input standardization u = (x - shift) / scale, part of the bijection.
    Vector shift;
    Vector scale;
    std::vector<FlowBlock> blocks;
    TrainConfig train_config;
    double initial_nll = 0.0;  // nats per sample
    double final_nll = 0.0;
    bool reverted_to_initial = false;
    std::vector<double> nll_curve;  // minibatch loss per step

    int input_dim() const { return arch.input_dim; }

    /// Identity flow: shift 0, scale 1, zero output weights, unit running stats.
    static FlowModel identity(const FlowArchitecture& arch, std::uint64_t seed);

    bool operator==(const FlowModel&) const = default;
};

enum class Direction { forward, inverse };

struct FlowOutput {
    Matrix values;
    Vector log_det;  // log |det J| of the requested direction, per row
};

/// Applies the flow in evaluation mode (frozen running statistics).
FlowOutput flow_transform(const FlowModel& model, const Matrix& data, Direction direction);

/// Mean negative log-likelihood (nats per sample) of data under the flow with a
/// standard normal base, including the standardization Jacobian.
double flow_nll(const FlowModel& model, const Matrix& data);

/// Training-mode minibatch objective on already standardized rows, with
/// gradients accumulated into `grad` (same shapes as the model) when given.
/// Normalization layers use batch statistics and fold them into `model`'s
/// running averages when `momentum` > 0.
double flow_batch_loss(FlowModel& model, const Matrix& standardized, FlowModel* grad, double momentum = 0.0);

/// Replaces every block's running statistics with exact full-data statistics
/// of its input, computed block by block in evaluation mode.
void freeze_normalization(FlowModel& model, const Matrix& data);

/// Zero-valued model with the same parameter shapes (gradient buffer).
FlowModel zeros_like(const FlowModel& model);

/// Visits every trainable parameter array in declaration order.
template <typename Model, typename Fn>
void for_each_parameter(Model& model, Fn&& fn)
{
    for (auto& b : model.blocks) {
        if (b.coupling) {
            fn(b.coupling->w1.data(), b.coupling->w1.size());
            fn(b.coupling->b1.data(), b.coupling->b1.size());
            fn(b.coupling->w2.data(), b.coupling->w2.size());
            fn(b.coupling->b2.data(), b.coupling->b2.size());
        }
        fn(b.log_delta.data(), b.log_delta.size());
        fn(b.epsilon.data(), b.epsilon.size());
        fn(b.log_gamma.data(), b.log_gamma.size());
        fn(b.beta.data(), b.beta.size());
    }
}

/// Binary form: "PIDF", u32 version, dims, then f64 LE parameter blocks.
void save_flow(const FlowModel& model, const std::filesystem::path& path);
FlowModel load_flow(const std::filesystem::path& path);
std::vector<char> encode_flow(const FlowModel& model);
FlowModel decode_flow(const std::vector<char>& bytes);

}  // namespace pidflow
