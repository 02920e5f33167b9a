#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidflow/discrete_pid.hpp"
#include "pidflow/pid.hpp"
#include "pidflow/store.hpp"

namespace pidflow {

/// Gaussian generator over (X_V, X_L, Y) with scalar Y; `cov` is ordered V, L, Y.
struct GaussianLayerSpec {
    int d_v = 1;
    int d_l = 1;
    Matrix cov;
    int n = 1000;
    std::uint64_t seed = 42;
};

struct GaussianSample {
    Matrix x_v;  // n x d_v
    Matrix x_l;  // n x d_l
    Vector y;    // n
};

void validate(const GaussianLayerSpec& spec);

GaussianSample gen_gaussian_layer(const GaussianLayerSpec& spec);

/// The generator covariance rearranged to (Q = language, I = vision, Y).
JointGaussian true_joint(const GaussianLayerSpec& spec);

/// Exact MMI decomposition of the generator covariance.
InfoState ground_truth_pid(const GaussianLayerSpec& spec);

/// Target PID components at one layer, bits.
struct PidProfile {
    double r = 0.0;
    double u_v = 0.0;
    double u_l = 0.0;
    double s = 0.0;

    bool operator==(const PidProfile&) const = default;
};

/// Unit-variance scalar triplet: a = corr(V, Y), b = corr(L, Y), c = corr(V, L).
struct ScalarTriplet {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
};

/// Solves for a scalar triplet whose MMI decomposition equals `profile`.
/// Throws ValidationError for profiles the MMI rule cannot produce.
ScalarTriplet solve_triplet(const PidProfile& profile);

/// 3 x 3 covariance (V, L, Y) of a triplet.
Matrix triplet_covariance(const ScalarTriplet& t);

enum class Regime { transduction, persistent_synergy, redundancy_dominant };

std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);

struct RegimeScript {
    Regime regime = Regime::transduction;
    int layers = 32;
    int samples = 2000;
    int hidden_dim = 16;
    double noise_std = 0.03;  // off-signal noise in the embedding dimensions
    std::string model_id = "synth";
    std::string task_id;
    Condition condition = Condition::normal;
    std::vector<PidProfile> profile;  // one entry per layer

    bool operator==(const RegimeScript&) const = default;
};

void validate(const RegimeScript& script);
RegimeScript regime_script_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RegimeScript& script);
RegimeScript load_regime_script(const std::filesystem::path& path);

/// Built-in scripts, identical to the files shipped under fixtures/regimes.
RegimeScript canonical_script(Regime regime);

/// Pooled-granularity store realizing the script layer by layer. Y is drawn
/// once and shared by all layers; each layer's scalar signals are embedded
/// along a random direction of the hidden space plus small isotropic noise.
ActivationStore gen_regime_dataset(const RegimeScript& script, std::uint64_t seed);

enum class DiscreteSystem { xor_gate, and_gate, copy, unique1 };

std::string_view to_string(DiscreteSystem s);
DiscreteSystem parse_discrete_system(std::string_view s);

/// Uniform-input gates over binary sources. copy: X1 = X2 = Y, one fair bit;
/// unique1: Y = X1 with X2 independent.
JointPmf<Rational> gen_discrete_system(DiscreteSystem system);

}  // namespace pidflow
