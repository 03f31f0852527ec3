#ifndef NPNET_RNG_HPP
#define NPNET_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace npnet {

// Seeded random stream with hand-rolled float mapping and Box-Muller
// normals. std::normal_distribution and std::shuffle are
// implementation-defined, so everything downstream of mt19937 is done
// by hand to keep results reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint32_t seed) : gen_(seed) {}

    std::uint32_t next_u32() { return gen_(); }

    // Uniform in [0, 1) with 24 bits of precision.
    float uniform() {
        return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
    }

    // Standard normal via Box-Muller; the sine partner is cached.
    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        float u1 = 1.0f - uniform();  // (0, 1]
        float u2 = uniform();
        float radius = std::sqrt(-2.0f * std::log(u1));
        float angle = 6.28318530717958647692f * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    // Uniform integer in [0, n). Modulo bias is irrelevant here; a fixed
    // mapping from the mt19937 stream is what matters.
    std::uint32_t below(std::uint32_t n) { return gen_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(static_cast<std::uint32_t>(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937 gen_;
    float spare_ = 0.0f;
    bool has_spare_ = false;
};

// Mixes a base seed with a stream index (e.g. epoch number) into a fresh
// 32-bit seed. splitmix64 finalizer.
inline std::uint32_t mix_seed(std::uint32_t seed, std::uint32_t stream) {
    std::uint64_t z = (static_cast<std::uint64_t>(seed) << 32) | stream;
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z = z ^ (z >> 31);
    return static_cast<std::uint32_t>(z);
}

}  // namespace npnet

#endif
