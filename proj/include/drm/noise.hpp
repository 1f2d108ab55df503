#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "drm/errors.hpp"
#include "drm/rng.hpp"
#include "drm/state.hpp"

namespace drm {

enum class NoiseKind { white, colored };

// A discretized noise realization. increments(k, c) is the integrated noise
// over step k on channel c; white increments are N(0, gamma dt).
struct NoisePath {
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
  double dt = 0.0;
  double gamma = 0.0;
  NoiseKind kind = NoiseKind::white;
  std::string correlation;  // description of the colored kernel, empty for white
  RMat increments;          // steps x channels
  // Instantaneous noise values at the end of each step (exponential kernel only).
  RMat values;
  double raw_log_weight = 0.0;
  double cooked_log_weight = 0.0;

  Eigen::Index steps() const { return increments.rows(); }
  Eigen::Index channels() const { return increments.cols(); }
  // B(t_k) = sum of the first k increments.
  RVec integrated(Eigen::Index channel) const {
    RVec b(steps() + 1);
    b[0] = 0.0;
    for (Eigen::Index k = 0; k < steps(); ++k) b[k + 1] = b[k] + increments(k, channel);
    return b;
  }
};

struct WienerSpec {
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
  double dt = 0.01;
  Stream stream = Stream::noise;
};

// Single white increment dB for (step, channel); the same value sample_wiener
// would place at increments(step, channel).
inline double wiener_increment(const CounterRng& rng, Stream s, std::uint64_t step,
                               std::uint32_t channel, double gamma, double dt) {
  return std::sqrt(gamma * dt) * rng.normal(s, channel, step);
}

inline NoisePath sample_wiener(const WienerSpec& spec, Eigen::Index steps, Eigen::Index channels,
                               double gamma) {
  require(steps >= 1, "at least one step required");
  require(channels >= 1, "at least one channel required");
  require(spec.dt > 0 && gamma >= 0, "dt must be positive and gamma nonnegative");
  NoisePath p;
  p.seed = spec.seed;
  p.trajectory = spec.trajectory;
  p.dt = spec.dt;
  p.gamma = gamma;
  p.kind = NoiseKind::white;
  p.increments.resize(steps, channels);
  const CounterRng rng(spec.seed, spec.trajectory);
  for (Eigen::Index k = 0; k < steps; ++k)
    for (Eigen::Index c = 0; c < channels; ++c)
      p.increments(k, c) = wiener_increment(rng, spec.stream, std::uint64_t(k), std::uint32_t(c), gamma, spec.dt);
  return p;
}

}  // namespace drm
