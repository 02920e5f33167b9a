#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidflow/analysis.hpp"
#include "pidflow/gaussianize.hpp"
#include "pidflow/pid.hpp"
#include "pidflow/preprocess.hpp"
#include "pidflow/store.hpp"
#include "pidflow/trajectory.hpp"

namespace pidflow {

inline constexpr const char* kPidflowVersion = "0.1.0";

/// Everything needed to turn one layer's activations into an InfoState.
struct EstimatorSettings {
    PcaOptions pca;
    FlowSettings flow = profile_settings(Profile::test);
    double ridge = 1e-6;
    std::uint64_t base_seed = 42;
};

struct LayerEstimate {
    InfoState state;
    JointGaussian joint;
    PcaBasis pca_language;
    PcaBasis pca_vision;
    FlowModel flow_language;  // over (language PCA coordinates, y)
    FlowModel flow_vision;    // over (vision PCA coordinates, y)
    Matrix z_q;               // language latents
    Matrix z_i;               // vision latents
    Matrix z_y;               // target latent from the language flow
    double zy_discrepancy = 0.0;  // RMS gap between the two flows' target latents
    GaussFitReport diagnostics;   // over the joint latents
    std::vector<std::string> warnings;
};

/// Optional fixed inputs for a layer: shared PCA bases, pre-trained flows.
struct LayerReuse {
    const PcaBasis* pca_language = nullptr;
    const PcaBasis* pca_vision = nullptr;
    const FlowModel* flow_language = nullptr;
    const FlowModel* flow_vision = nullptr;
};

/// PCA -> per-modality flow Gaussianization of (coordinates, y) -> Gaussian
/// MMI PID for one layer. x_v and x_l are n x d, y has n entries.
LayerEstimate estimate_layer(const Matrix& x_v, const Matrix& x_l, const Vector& y, int layer,
                             const EstimatorSettings& settings, const LayerReuse& reuse = {});

struct PipelineConfig {
    std::filesystem::path baseline_store;
    std::optional<std::filesystem::path> knockout_store;
    std::filesystem::path output_dir;
    Profile profile = Profile::test;
    double retain = 0.95;
    std::optional<int> pca_cap;
    std::vector<int> dprime_overrides;
    TrainConfig train = profile_settings(Profile::test).train;
    int num_blocks = profile_settings(Profile::test).num_blocks;
    int hidden_dim = profile_settings(Profile::test).hidden_dim;
    ThresholdConfig thresholds;
    std::uint64_t base_seed = 42;
    PoolingRule pooling = PoolingRule::mean;  // used for token-granularity stores
    double ridge = 1e-6;
    bool reuse_flows = false;
    int bootstrap_resamples = 1000;
    unsigned threads = 0;  // 0: PIDFLOW_THREADS or hardware concurrency
    bool save_flows = true;
};

/// Config with the hyperparameters of a profile applied.
PipelineConfig default_pipeline_config(Profile profile);

/// Parses a JSON config. Relative paths resolve against `base_dir`. Training
/// overrides are rejected under the paper profile, which pins them.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const PipelineConfig& cfg);

/// One trajectory per condition for one PCA setting.
struct ConditionRun {
    Trajectory trajectory;
    // Absent when the trajectory cannot be classified (too few layers, zero
    // final information); `classification_note` then says why.
    std::optional<MechanismReport> mechanism;
    std::string classification_note;
    std::vector<LayerEstimate> layers;
};

struct SettingRun {
    std::optional<int> fixed_dim;  // d' override, or the retain rule
    ConditionRun baseline;
    std::optional<ConditionRun> knockout;
    std::optional<KnockoutReport> knockout_report;
};

struct PipelineResult {
    std::filesystem::path run_dir;
    SettingRun main;
    std::vector<SettingRun> dprime_runs;
};

/// Runs the full pipeline and writes the run directory.
PipelineResult run_pipeline(const PipelineConfig& config);

enum class ReportFormat { csv, json, plotdata };

std::string_view to_string(ReportFormat f);
ReportFormat parse_report_format(std::string_view s);

/// Writes report/<file> inside a completed run directory and returns its path.
std::filesystem::path write_report(const std::filesystem::path& run_dir, ReportFormat format);

/// File helpers shared by the CLI.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pidflow
