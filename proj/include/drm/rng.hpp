#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace drm {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// Output depends only on (key, counter); there is no hidden state.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    const std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
    const std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
    const std::uint32_t hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
    const std::uint32_t hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += W0;
    key[1] += W1;
  }
  return ctr;
}

// What a draw is used for; keeps draws for different purposes in disjoint
// counter ranges.
enum class Stream : std::uint8_t {
  noise = 0,
  hit_time = 1,
  hit_center = 2,
  resample = 3,
  init = 4,
  left_noise = 5,
  right_noise = 6,
  aux = 7,
};

// Random numbers addressed by (master seed, trajectory, stream, channel, step).
// Copyable and stateless; safe to share across threads.
class CounterRng {
public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t seed, std::uint64_t trajectory = 0)
      : seed_(seed), traj_(std::uint32_t(trajectory)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint32_t trajectory() const { return traj_; }
  CounterRng with_trajectory(std::uint64_t t) const { return CounterRng(seed_, t); }

  std::array<std::uint32_t, 4> block(Stream s, std::uint32_t channel, std::uint64_t step) const {
    const std::array<std::uint32_t, 4> ctr{
        std::uint32_t(step), std::uint32_t(step >> 32), traj_,
        (std::uint32_t(s) << 24) | (channel & 0x00FFFFFFu)};
    const std::array<std::uint32_t, 2> key{std::uint32_t(seed_), std::uint32_t(seed_ >> 32)};
    return philox4x32(ctr, key);
  }

  // Two uniforms in the open interval (0, 1).
  std::pair<double, double> uniform2(Stream s, std::uint32_t channel, std::uint64_t step) const {
    const auto b = block(s, channel, step);
    const std::uint64_t a = (std::uint64_t(b[0]) << 32) | b[1];
    const std::uint64_t c = (std::uint64_t(b[2]) << 32) | b[3];
    return {to_open_unit(a), to_open_unit(c)};
  }

  double uniform(Stream s, std::uint32_t channel, std::uint64_t step) const {
    return uniform2(s, channel, step).first;
  }

  // Standard normal pair via Box-Muller.
  std::pair<double, double> normal2(Stream s, std::uint32_t channel, std::uint64_t step) const {
    const auto [u1, u2] = uniform2(s, channel, step);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(th), r * std::sin(th)};
  }

  double normal(Stream s, std::uint32_t channel, std::uint64_t step) const {
    return normal2(s, channel, step).first;
  }

  double exponential(Stream s, std::uint32_t channel, std::uint64_t step, double rate) const {
    return -std::log(uniform(s, channel, step)) / rate;
  }

private:
  static double to_open_unit(std::uint64_t x) {
    return (double(x >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t seed_ = 0;
  std::uint32_t traj_ = 0;
};

}  // namespace drm
