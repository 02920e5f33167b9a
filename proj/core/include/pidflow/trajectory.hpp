#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidflow/pid.hpp"
#include "pidflow/store.hpp"

namespace pidflow {

enum class Component { r, u_v, u_l, s, i_tot };

inline constexpr std::array<Component, 5> kAllComponents = {Component::r, Component::u_v, Component::u_l,
                                                            Component::s, Component::i_tot};
inline constexpr std::array<Component, 4> kPidComponents = {Component::r, Component::u_v, Component::u_l,
                                                            Component::s};

/// Column names used in CSV output: R, U_V, U_L, S, I_tot.
std::string_view to_string(Component c);
Component parse_component(std::string_view s);
double component_value(const InfoState& s, Component c);

struct TrajectoryMeta {
    std::string model_id;
    std::string task_id;
    std::optional<Condition> condition;
    std::optional<int> d_prime_override;  // fixed d' when set, else the retain rule
    std::vector<int> d_prime_language;    // per layer, as fitted
    std::vector<int> d_prime_vision;
    std::uint64_t seed = 42;
    std::string profile;
};

struct Trajectory {
    std::vector<InfoState> states;  // layers 0..L
    TrajectoryMeta meta;

    int num_layers() const { return static_cast<int>(states.size()); }
    int last_layer() const { return num_layers() - 1; }
    const InfoState& final_state() const { return states.back(); }
    std::vector<double> series(Component c) const;
};

struct ThresholdConfig {
    double tau_s = 0.5;   // bits
    double gamma = 0.15;  // synergy share
    double eta = 0.45;    // language-unique share
    double rho = 1.5;     // redundancy margin
    int ell0 = 0;
    double peak_window_fraction = 0.5;
    int smoothing_window = 3;

    bool operator==(const ThresholdConfig&) const = default;
};

void validate(const ThresholdConfig& cfg);

/// Detector constants; recorded alongside every result.
struct DetectorParams {
    int smoothing_window = 3;
    double prominence_fraction = 0.10;  // local maxima below this share of the range are ignored
    double surge_fraction = 0.25;       // onset when a forward difference exceeds this share of the largest
    int trough_margin_low = 2;          // trough searched over [2, L - 3]
    int trough_margin_high = 3;
};

struct TurningPoints {
    std::optional<int> uv_peak;
    std::optional<int> ul_trough;
    std::optional<int> ul_surge_onset;
    bool order_violated = false;
    DetectorParams detector_params;
};

enum class Mechanism { persistent_synergy, modal_transduction, redundancy_dominant, none };

std::string_view to_string(Mechanism m);
Mechanism parse_mechanism(std::string_view s);

/// Inequality values behind each definition, evaluated at the final layer.
struct MechanismEvidence {
    double synergy_final = 0.0;
    double synergy_share = 0.0;
    double ul_share = 0.0;
    int uv_maxima = 0;  // prominent local maxima of the smoothed U_V series
    std::optional<int> uv_peak;
    double peak_limit = 0.0;  // peak_window_fraction * L
    double redundancy_final = 0.0;
    double redundancy_ell0 = 0.0;
    double redundancy_share = 0.0;
    double max_other = 0.0;  // max{U_V, U_L, S} at L
    bool synergy_fired = false;
    bool transduction_fired = false;
    bool redundancy_fired = false;
};

struct MechanismReport {
    std::vector<Mechanism> fired;
    Mechanism primary_label = Mechanism::none;
    bool ambiguous = false;
    MechanismEvidence evidence;
    ThresholdConfig thresholds;
    TurningPoints turning_points;
};

/// Sorts by layer and checks contiguity from 0 and per-state invariants.
Trajectory assemble_trajectory(std::vector<InfoState> states, TrajectoryMeta meta = {});

TurningPoints detect_turning_points(const Trajectory& traj, const ThresholdConfig& cfg = {});

MechanismReport classify_mechanism(const Trajectory& traj, const ThresholdConfig& cfg = {});

/// Threshold value lists; an empty list keeps the base value.
struct SweepGrid {
    std::vector<double> tau_s;
    std::vector<double> gamma;
    std::vector<double> eta;
    std::vector<double> rho;
};

struct SweepPoint {
    ThresholdConfig thresholds;
    Mechanism label = Mechanism::none;
};

struct SweepReport {
    std::vector<SweepPoint> points;
    Mechanism default_label = Mechanism::none;
    double stability = 0.0;  // share of points agreeing with default_label
};

SweepReport threshold_sweep(const Trajectory& traj, const SweepGrid& grid, const ThresholdConfig& base = {});

/// Prominent local maxima (index of each plateau start) of a series.
std::vector<int> prominent_maxima(const std::vector<double>& xs, double prominence_fraction);

// Serialization.
std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(const std::string& text);
/// trajectory.json: meta, states, turning points and mechanism report.
nlohmann::json trajectory_to_json(const Trajectory& traj, const MechanismReport& report);
/// Reads states and meta back from trajectory.json.
Trajectory trajectory_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrajectoryMeta& meta);
nlohmann::json to_json(const TurningPoints& tp);
nlohmann::json to_json(const MechanismReport& report);
nlohmann::json to_json(const ThresholdConfig& cfg);
nlohmann::json to_json(const SweepReport& sweep);
/// Overrides fields of `base` present in `j`; unknown keys are rejected.
ThresholdConfig thresholds_from_json(const nlohmann::json& j, const ThresholdConfig& base = {});

/// Loads a trajectory from a .csv or .json file.
Trajectory load_trajectory(const std::string& path);

}  // namespace pidflow
