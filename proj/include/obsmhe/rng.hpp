#pragma once

#include <cstdint>

namespace obsmhe {

/// Counter-based 64-bit generator.
///
/// Draw number `counter` of stream `stream` under `seed` is the closed form
///
///     key  = mix64(seed + 0x9E3779B97F4A7C15 * (stream + 1))
///     bits = mix64(key ^ (0xD1B54A32D192ED03 * counter + 0x632BE59BD9B4E019))
///
/// where mix64 is the SplitMix64 finalizer. Uniform reals take the top 53
/// bits of `bits` scaled by 2^-53, so every value lies in [0, 1). No state is
/// carried between draws: any (seed, stream, counter) triple can be evaluated
/// in any order or on any thread.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t bits(std::uint64_t counter) const noexcept;
    double uniform01(std::uint64_t counter) const noexcept;
    /// Uniform on [lo, hi]; returns lo exactly when lo == hi.
    double uniform(std::uint64_t counter, double lo, double hi) const noexcept;

  private:
    std::uint64_t key_;
};

}  // namespace obsmhe
