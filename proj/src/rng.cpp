#include "obsmhe/rng.hpp"

namespace obsmhe {

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
    : key_(mix64(seed + 0x9E3779B97F4A7C15ULL * (stream + 1))) {}

std::uint64_t CounterRng::bits(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ (0xD1B54A32D192ED03ULL * counter + 0x632BE59BD9B4E019ULL));
}

double CounterRng::uniform01(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(std::uint64_t counter, double lo, double hi) const noexcept {
    if (lo == hi) return lo;
    return lo + (hi - lo) * uniform01(counter);
}

}  // namespace obsmhe
