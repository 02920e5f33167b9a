#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pidflow/store.hpp"
#include "pidflow/trajectory.hpp"

namespace pidflow::test {

/// Directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "pidflow");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::filesystem::path fixture_path(const std::string& relative);

/// Trajectory from per-layer component series; i_tot is the component sum.
Trajectory make_trajectory(const std::vector<double>& r, const std::vector<double>& u_v,
                           const std::vector<double>& u_l, const std::vector<double>& s,
                           TrajectoryMeta meta = {});

/// Final-layer components of the six tasks (bits) with the printed U_L share (%).
struct FinalLayerRow {
    std::string task;
    double r, u_l, u_v, s;
    double ul_share_pct;
};
const std::vector<FinalLayerRow>& final_layer_shares();

/// Reported landmarks per task; trough -1 when the task has none.
struct LandmarkRow {
    std::string task;
    int uv_peak;
    int ul_trough;
    int ul_surge_onset;
};
const std::vector<LandmarkRow>& transduction_landmarks();

/// Per-task Pearson r between two models, indexed R, U_L, U_V, S, plus the printed mean.
struct CorrelationRow {
    std::string task;
    std::array<double, 4> r;
    double mean;
};
const std::vector<CorrelationRow>& cross_model_correlations();
/// Printed column averages (R, U_L, U_V, S) and grand mean.
inline constexpr std::array<double, 4> kCorrelationColumnAverages = {0.976, 0.982, 0.961, 0.927};
inline constexpr double kCorrelationGrandMean = 0.962;

/// Final-layer components under normal and knockout attention, with printed deltas (%).
struct KnockoutRow {
    std::string task;
    std::array<double, 5> base;  // R, U_L, U_V, S, Total
    std::array<double, 5> ko;
    double d_total_pct;
    double d_uv_pct;
    double d_s_pct;
};
const std::vector<KnockoutRow>& knockout_totals();

/// 32-layer trajectory shaped like a transduction run: U_V peaks at `uv_peak`
/// and decays, U_L dips to `ul_trough` (or stays flat when negative), rises
/// slowly and surges from `onset`; the final layer equals `fin`.
Trajectory landmark_trajectory(const FinalLayerRow& fin, const LandmarkRow& marks, int layers = 32);

/// Series y with Pearson(x, y) = r to rounding, shifted to be non-negative.
std::vector<double> series_with_correlation(const std::vector<double>& x, double r, std::uint64_t seed);

/// Little-endian store writer built directly from the documented layout,
/// sharing no code with the library's writer.
void write_store_bytes(const ActivationStore& store, const std::filesystem::path& dir);

/// Reads a whole file as bytes.
std::vector<char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes);

/// Small random store (pooled or token granularity).
ActivationStore random_store(Granularity g, int layers, int n, int d, std::uint64_t seed,
                             TargetKind kind = TargetKind::scalar_logit);

}  // namespace pidflow::test
