#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace inna {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256** seeded through splitmix64. Small state, so one engine per
// (draw, household) work item is cheap to create.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

// Deterministic substream keyed by a root seed and two indices. Results do
// not depend on which worker consumes the stream or in what order.
inline Rng substream(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) noexcept {
  std::uint64_t st = root;
  std::uint64_t h = splitmix64(st);
  st = h ^ (a * 0xd6e8feb86659fd93ULL);
  h = splitmix64(st);
  st = h ^ (b * 0xa0761d6478bd642fULL);
  return Rng(splitmix64(st));
}

// Stream tags for the non-household stages of one posterior draw.
namespace stream_tag {
inline constexpr std::uint64_t delta_sq = 0xffffffffffff0001ULL;
inline constexpr std::uint64_t beta = 0xffffffffffff0002ULL;
inline constexpr std::uint64_t chain = 0xffffffffffff0003ULL;
inline constexpr std::uint64_t bootstrap = 0xffffffffffff0004ULL;
inline constexpr std::uint64_t prediction = 0xffffffffffff0005ULL;
inline constexpr std::uint64_t mu = 0xffffffffffff0006ULL;
}  // namespace stream_tag

}  // namespace inna
