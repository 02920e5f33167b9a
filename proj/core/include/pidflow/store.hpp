#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pidflow/types.hpp"

namespace pidflow {

enum class Condition { normal, knockout };
enum class Granularity { pooled, token };
enum class PoolingRule { mean, max, attention, none };
enum class TargetKind { scalar_logit, discrete_label };

std::string_view to_string(Condition c);
std::string_view to_string(Granularity g);
std::string_view to_string(PoolingRule p);
std::string_view to_string(TargetKind k);

Condition parse_condition(std::string_view s);
Granularity parse_granularity(std::string_view s);
PoolingRule parse_pooling_rule(std::string_view s);
TargetKind parse_target_kind(std::string_view s);

inline constexpr std::uint32_t kStoreFormatVersion = 1;

/// Contents of manifest.json. Layer 0 holds the embeddings, so num_layers = L + 1.
struct Manifest {
    int format_version = 1;
    std::string model_id;
    std::string task_id;
    Condition condition = Condition::normal;
    int num_layers = 0;
    int hidden_dim = 0;
    int num_samples = 0;
    Granularity granularity = Granularity::pooled;
    PoolingRule pooling_rule = PoolingRule::mean;
    TargetKind target_kind = TargetKind::scalar_logit;
    std::uint64_t base_seed = 42;
    std::vector<std::string> layer_files;
    // Free-form note on where hidden states were captured (pre/post norm, ...).
    std::string capture_point;
    // Hash of the ordered sample IDs; baseline and knockout stores must agree.
    std::string sample_hash;
    // Number of label classes for discrete targets, 0 otherwise.
    int num_classes = 0;

    bool operator==(const Manifest&) const = default;
};

/// Token-level record for one sample (token granularity only).
struct TokenSample {
    FloatMatrix vision;    // |V| x d
    FloatMatrix language;  // |L| x d
    std::vector<float> vision_weights;    // empty or |V|
    std::vector<float> language_weights;  // empty or |L|

    bool operator==(const TokenSample&) const = default;
};

struct LayerBlock {
    int layer_index = 0;
    // Pooled granularity: n x d summaries per modality.
    FloatMatrix x_v;
    FloatMatrix x_l;
    // Token granularity: one record per sample.
    std::vector<TokenSample> tokens;
    bool has_vision_weights = false;
    bool has_language_weights = false;

    bool operator==(const LayerBlock&) const = default;
};

struct TargetVector {
    TargetKind kind = TargetKind::scalar_logit;
    std::vector<double> values;         // scalar_logit
    std::vector<std::uint32_t> labels;  // discrete_label

    std::size_t size() const { return kind == TargetKind::scalar_logit ? values.size() : labels.size(); }
    /// Target as doubles regardless of kind.
    std::vector<double> as_doubles() const;

    bool operator==(const TargetVector&) const = default;
};

struct ActivationStore {
    Manifest manifest;
    std::vector<LayerBlock> layers;
    TargetVector targets;

    bool operator==(const ActivationStore&) const = default;
};

enum class ViolationKind {
    missing_file,
    bad_manifest,
    bad_magic,
    bad_version,
    short_read,
    trailing_bytes,
    layer_count_mismatch,
    dimension_mismatch,
    non_finite,
    target_length,
    label_range,
    token_count,
    invariant,
};

std::string_view to_string(ViolationKind k);

struct Violation {
    ViolationKind kind;
    int layer = -1;     // -1 for manifest/target-level problems
    std::string field;  // manifest key, file name, or "targets"
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

/// Invariant check of an in-memory store (no IO).
std::vector<Violation> check_store(const ActivationStore& store);

/// Writes manifest.json, layer_<l>.bin and targets.bin. The directory is
/// assembled under a temporary name and renamed into place.
void write_store(const ActivationStore& store, const std::filesystem::path& dir);

/// Reads and fully validates a store; throws on the first violation.
ActivationStore read_store(const std::filesystem::path& dir);

/// Reads only the manifest.
Manifest read_manifest(const std::filesystem::path& dir);

/// Lists every violation; never throws.
ValidationReport validate_store(const std::filesystem::path& dir);

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(std::string_view text);

/// Canonical layer file name for layer index l.
std::string layer_file_name(int layer);

/// Hex digest over an ordered list of sample identifiers.
std::string sample_ids_hash(std::span<const std::string> ids);

}  // namespace pidflow
