#include "pidflow/seed.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace pidflow {

std::string_view to_string(Modality m)
{
    return m == Modality::vision ? "vision" : "language";
}

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base_seed, int layer, Modality modality)
{
    const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(layer)) << 8) |
                              (modality == Modality::vision ? 1u : 2u);
    return base_seed ^ mix64(key);
}

std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view tag, std::uint64_t index)
{
    // FNV-1a over the tag, then mixed with the index.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return base_seed ^ mix64(h ^ mix64(index));
}

unsigned worker_threads()
{
    if (const char* env = std::getenv("PIDFLOW_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) {
                return static_cast<unsigned>(v);
            }
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

}  // namespace pidflow
