#pragma once

#include <cstdint>
#include <string_view>

namespace pidflow {

enum class Modality { vision, language };

std::string_view to_string(Modality m);

/// SplitMix64 finalizer; a cheap bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

/// Per-job seed: base_seed XOR hash(layer, modality). Lets layer/modality
/// jobs run in any order while drawing from reproducible streams.
std::uint64_t derive_seed(std::uint64_t base_seed, int layer, Modality modality);

/// Generic tagged derivation for other reproducible streams.
std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view tag, std::uint64_t index = 0);

/// Number of worker threads: PIDFLOW_THREADS if set and positive, else hardware concurrency.
unsigned worker_threads();

}  // namespace pidflow
