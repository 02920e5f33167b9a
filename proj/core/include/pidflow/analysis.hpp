#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidflow/stats.hpp"
#include "pidflow/trajectory.hpp"

namespace pidflow {

inline constexpr const char* kNmaeFormula = "mean_l |a_l - b_l| / (mean_l |a_l| + 1e-12)";

struct ComparisonReport {
    // Indexed like kPidComponents; NaN marks an undefined r (constant series).
    std::array<double, 4> pearson{};
    std::array<double, 4> nmae{};
    double mean_r = 0.0;  // over defined components
    int defined_r = 0;
    // b minus a, per landmark; absent when either side lacks it.
    std::optional<int> uv_peak_offset;
    std::optional<int> ul_trough_offset;
    std::optional<int> ul_surge_onset_offset;
    std::string nmae_formula = kNmaeFormula;
};

double nmae(std::span<const double> a, std::span<const double> b);

ComparisonReport compare_trajectories(const Trajectory& a, const Trajectory& b, const ThresholdConfig& cfg = {});

/// Relative deltas below this base magnitude (bits) are not computed.
inline constexpr double kDeltaBaseFloor = 1e-6;

enum class DeltaFlag { ok, degenerate, undefined_base };

std::string_view to_string(DeltaFlag f);

struct Delta {
    double value = 0.0;  // percent; NaN when undefined_base
    DeltaFlag flag = DeltaFlag::ok;

    bool defined() const { return flag == DeltaFlag::ok; }
};

/// (ko - base) / base * 100 with the degenerate-base policy.
Delta relative_delta(double base, double ko);

struct DepScore {
    double value = 0.0;  // percent
    int terms = 0;       // defined terms among dU_V, dS, dI_tot
    bool partial = false;
};

enum class Verdict { confirmed, refuted, degenerate };

std::string_view to_string(Verdict v);

struct Predictions {
    Verdict p1 = Verdict::degenerate;  // dU_V > 0
    Verdict p2 = Verdict::degenerate;  // dS > 0
    Verdict p3 = Verdict::degenerate;  // dI_tot > 0
};

/// Per-component statistics attached to a knockout report.
struct ComponentStats {
    std::optional<PairedEffect> over_layers;  // paired t / Cohen's d of ko vs base across layers
    std::optional<Interval> final_delta_ci;   // bootstrap CI of the final-layer delta (percent)
};

struct KnockoutReport {
    TrajectoryMeta base_meta;
    TrajectoryMeta knockout_meta;
    // Indexed like kAllComponents.
    std::vector<std::array<Delta, 5>> per_layer;
    std::array<Delta, 5> final_layer{};
    std::optional<DepScore> dep;  // absent when no term is defined
    Predictions predictions;
    std::array<ComponentStats, 5> stats{};
    int bootstrap_resamples = 0;
    std::string source_set = "image tokens";
    std::string target_set = "question tokens";

    const Delta& final_delta(Component c) const;
};

/// Pairs baseline and knockout trajectories and computes all deltas, the
/// dependence score, prediction verdicts and layer-wise paired effects.
KnockoutReport knockout_deltas(const Trajectory& base, const Trajectory& ko);

/// Mean of the defined terms among dU_V, dS, dI_tot at the final layer.
DepScore dependence_score(const KnockoutReport& report);
DepScore dependence_score(const Delta& d_uv, const Delta& d_s, const Delta& d_tot);

Predictions evaluate_predictions(const KnockoutReport& report);

nlohmann::json to_json(const ComparisonReport& r);
nlohmann::json to_json(const KnockoutReport& r);
/// Flat table: layer,component,base,knockout,delta_pct,flag (final row per component repeated as layer "final").
std::string knockout_report_csv(const KnockoutReport& r, const Trajectory& base, const Trajectory& ko);

/// Console summary line set in the column order R, U_L, U_V, S, Total, U_L-share.
std::string final_layer_summary(const Trajectory& traj);

}  // namespace pidflow
