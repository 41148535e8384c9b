#pragma once

#include <cstdint>
#include <random>

namespace rbsched {

using Rng = std::mt19937_64;

// splitmix64 finalizer, used to derive independent stream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ stream) ^ index);
}

// Named stream ids so that environment and scheduler draws never share a generator.
enum class Stream : std::uint64_t {
  Environment = 1,
  Scheduler = 2,
  Exploration = 3,
  Replay = 4,
  Init = 5,
  Eval = 6,
};

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, static_cast<std::uint64_t>(stream), index));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace rbsched
