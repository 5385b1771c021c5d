#pragma once

// Counter-based random number generation: Philox4x64-10 blocks keyed by
// (seed, stream), mapped to standard normals via Box-Muller. Any normal in the
// sequence is addressable by its global index, which makes every consumer
// reproducible bit-for-bit regardless of scheduling or worker count.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace relay_steer {

namespace philox {

inline constexpr std::uint64_t kM0 = 0xD2E7470EE14C6C93ULL;
inline constexpr std::uint64_t kM1 = 0xCA5A826395121157ULL;
inline constexpr std::uint64_t kW0 = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kW1 = 0xBB67AE8584CAA73BULL;

inline void mul_hilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                     std::uint64_t& lo) {
  const unsigned __int128 p =
      static_cast<unsigned __int128>(a) * static_cast<unsigned __int128>(b);
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

// One 10-round Philox4x64 block. counter = (c0,c1,c2,c3), key = (k0,k1).
inline std::array<std::uint64_t, 4> block(std::array<std::uint64_t, 4> x,
                                          std::uint64_t k0, std::uint64_t k1) {
  for (int round = 0; round < 10; ++round) {
    std::uint64_t hi0, lo0, hi1, lo1;
    mul_hilo(x[0], kM0, hi0, lo0);
    mul_hilo(x[2], kM1, hi1, lo1);
    x = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
    k0 += kW0;
    k1 += kW1;
  }
  return x;
}

}  // namespace philox

// Deterministic stream of N(0,1) variates addressed by (seed, stream, index).
// Each Philox block yields four normals via two Box-Muller pairs.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream), cached_block_(~0ULL) {}

  // Normal at global index g (0-based).
  double at(std::uint64_t g) {
    const std::uint64_t blk = g >> 2;
    if (blk != cached_block_) {
      fill_block(blk);
      cached_block_ = blk;
    }
    return normals_[g & 3];
  }

  // Fills out[0..count) with normals at indices [start, start+count).
  void fill(std::uint64_t start, std::uint64_t count, double* out) {
    for (std::uint64_t i = 0; i < count; ++i) out[i] = at(start + i);
  }

  // Raw block access, exposed for known-answer tests.
  std::array<std::uint64_t, 4> raw_block(std::uint64_t counter) const {
    return philox::block({counter, 0, 0, 0}, seed_, stream_);
  }

 private:
  // 53-bit uniform in (0,1): (w >> 11) * 2^-53 + 2^-54, never 0 or 1.
  static double to_uniform(std::uint64_t w) {
    return static_cast<double>(w >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  void fill_block(std::uint64_t blk) {
    const auto words = philox::block({blk, 0, 0, 0}, seed_, stream_);
    const double u0 = to_uniform(words[0]);
    const double u1 = to_uniform(words[1]);
    const double u2 = to_uniform(words[2]);
    const double u3 = to_uniform(words[3]);
    const double r0 = std::sqrt(-2.0 * std::log(u0));
    const double a0 = 2.0 * std::numbers::pi * u1;
    const double r1 = std::sqrt(-2.0 * std::log(u2));
    const double a1 = 2.0 * std::numbers::pi * u3;
    normals_[0] = r0 * std::cos(a0);
    normals_[1] = r0 * std::sin(a0);
    normals_[2] = r1 * std::cos(a1);
    normals_[3] = r1 * std::sin(a1);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t cached_block_;
  std::array<double, 4> normals_{};
};

}  // namespace relay_steer
