#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "drm/errors.hpp"
#include "drm/grid.hpp"
#include "drm/numerics.hpp"
#include "drm/rng.hpp"
#include "drm/state.hpp"
#include "drm/units.hpp"

namespace drm::qmsl {

struct HittingEvent {
  double time = 0.0;
  double center = 0.0;
  double pre_norm_sq = 0.0;  // P(center), the sampling density at the hit
};

// Multiplies psi by (alpha/pi)^{1/4} exp(-alpha/2 (q - x)^2), distances taken
// on the periodic cell. The result is not renormalized.
inline GridWavefunction localization_operator_apply(GridWavefunction psi, double x, double alpha) {
  require(alpha > 0, "alpha must be positive");
  if (!(x >= psi.x0 && x < psi.x0 + psi.length())) throw InvalidArgument("hit center outside grid");
  const double pref = std::pow(alpha / std::numbers::pi, 0.25);
  for (std::size_t j = 0; j < psi.size(); ++j) {
    const double d = psi.periodic_delta(psi.x(j), x);
    psi.psi[Eigen::Index(j)] *= pref * std::exp(-0.5 * alpha * d * d);
  }
  return psi;
}

// P(x) = ||L_x psi||^2 sampled at the grid points.
struct HittingDensity {
  RVec p;
  double dx = 1.0;
  double x0 = 0.0;

  double integral() const { return p.sum() * dx; }
  double x(std::size_t j) const { return x0 + double(j) * dx; }
  double mass_between(double a, double b) const {
    double m = 0.0;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double xj = x(std::size_t(j));
      if (xj >= a && xj < b) m += p[j];
    }
    return m * dx;
  }
};

inline HittingDensity hitting_density(const GridWavefunction& psi, double alpha) {
  require(alpha > 0, "alpha must be positive");
  if (std::abs(psi.norm_sq() - 1.0) > 1e-8) throw InvalidArgument("unnormalized input");
  const std::size_t n = psi.size();
  // Periodic convolution of |psi|^2 with sqrt(alpha/pi) exp(-alpha d^2).
  Vec kernel(static_cast<Eigen::Index>(n)), dens(static_cast<Eigen::Index>(n));
  const double pref = std::sqrt(alpha / std::numbers::pi);
  for (std::size_t j = 0; j < n; ++j) {
    const long m = j < n / 2 ? long(j) : long(j) - long(n);
    const double d = double(m) * psi.dx;
    kernel[Eigen::Index(j)] = pref * std::exp(-alpha * d * d);
    dens[Eigen::Index(j)] = std::norm(psi.psi[Eigen::Index(j)]);
  }
  const Vec conv = fft_inverse(fft_forward(dens).cwiseProduct(fft_forward(kernel)));
  HittingDensity h;
  h.dx = psi.dx;
  h.x0 = psi.x0;
  h.p.resize(Eigen::Index(n));
  for (std::size_t j = 0; j < n; ++j) h.p[Eigen::Index(j)] = std::max(0.0, conv[Eigen::Index(j)].real() * psi.dx);
  return h;
}

// Inverse-CDF sampling of the hit center with the density linear between grid
// points (including the wrap-around cell). u in (0, 1).
inline double sample_hit_center(const HittingDensity& h, double u) {
  const Eigen::Index n = h.p.size();
  std::vector<double> cdf(std::size_t(n) + 1, 0.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double a = h.p[j], b = h.p[(j + 1) % n];
    cdf[std::size_t(j) + 1] = cdf[std::size_t(j)] + 0.5 * (a + b) * h.dx;
  }
  const double target = u * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  Eigen::Index j = std::clamp<Eigen::Index>(Eigen::Index(it - cdf.begin()) - 1, 0, n - 1);
  const double a = h.p[j], b = h.p[(j + 1) % n];
  const double r = target - cdf[std::size_t(j)];
  // Solve a s + (b - a) s^2 / (2 dx) = r for s in [0, dx].
  double s;
  const double slope = (b - a) / h.dx;
  if (std::abs(slope) * h.dx < 1e-12 * std::max(a, 1e-300)) {
    s = a > 0 ? r / a : 0.5 * h.dx;
  } else {
    const double disc = std::max(0.0, a * a + 2.0 * slope * r);
    s = (std::sqrt(disc) - a) / slope;
  }
  s = std::clamp(s, 0.0, h.dx);
  double x = h.x0 + double(j) * h.dx + s;
  const double L = double(n) * h.dx;
  if (x >= h.x0 + L) x -= L;
  return x;
}

struct TrajectoryOptions {
  double max_dt = 0.01;  // sub-step for non-free Hamiltonians
  EvolveOptions evolve;
};

struct Trajectory {
  GridWavefunction final_state;
  std::vector<HittingEvent> events;
};

// One QMSL trajectory: Poisson(lambda) hits, Schrodinger motion in between.
inline Trajectory run_qmsl_trajectory(const GridWavefunction& psi0, const HamiltonianSpec& H, double lambda,
                                      double alpha, double t_end, const CounterRng& rng,
                                      const TrajectoryOptions& opt = {}) {
  require(lambda >= 0 && alpha > 0 && t_end >= 0, "invalid QMSL trajectory parameters");
  if (std::abs(psi0.norm_sq() - 1.0) > 1e-8) throw InvalidArgument("unnormalized input");
  Trajectory tr;
  GridWavefunction psi = psi0;
  double t = 0.0;
  std::uint64_t hit = 0;
  while (lambda > 0) {
    const double next = t + rng.exponential(Stream::hit_time, 0, hit, lambda);
    if (next > t_end) break;
    psi = evolve_for(std::move(psi), H, next - t, opt.max_dt, opt.evolve);
    t = next;
    const HittingDensity dens = hitting_density(psi, alpha);
    const double x = sample_hit_center(dens, rng.uniform(Stream::hit_center, 0, hit));
    GridWavefunction hitpsi = localization_operator_apply(psi, x, alpha);
    const double w = hitpsi.norm_sq();
    tr.events.push_back({t, x, w});
    psi = normalize(std::move(hitpsi));
    ++hit;
  }
  psi = evolve_for(std::move(psi), H, t_end - t, opt.max_dt, opt.evolve);
  tr.final_state = std::move(psi);
  return tr;
}

// int_0^t exp(-alpha/4 (q - k tau/m)^2) dtau by adaptive Simpson.
inline double decay_integral(double k, double q, double t, double alpha, double mass, double tol = 1e-10) {
  if (t <= 0) return 0.0;
  const double v = k / mass;
  auto f = [&](double tau) {
    const double u = q - v * tau;
    return std::exp(-0.25 * alpha * u * u);
  };
  // Split where the Gaussian peaks so the recursion sees the bump.
  if (v != 0.0) {
    const double tp = q / v;
    if (tp > 0 && tp < t) return num::adaptive_simpson(f, 0.0, tp, 0.5 * tol) + num::adaptive_simpson(f, tp, t, 0.5 * tol);
  }
  return num::adaptive_simpson(f, 0.0, t, tol);
}

// Same integral in closed form via erf.
inline double decay_integral_closed(double k, double q, double t, double alpha, double mass) {
  const double v = k / mass;
  const double s = 0.5 * std::sqrt(alpha);
  if (std::abs(v * t * s) < 1e-8) return t * std::exp(-s * s * q * q);
  return std::sqrt(std::numbers::pi) / (2.0 * s * v) * (std::erf(s * q) - std::erf(s * (q - v * t)));
}

inline double F_kernel(double k, double q, double t, double lambda, double alpha, double mass) {
  return std::exp(-lambda * t + lambda * decay_integral(k, q, t, alpha, mass));
}

// Master-equation solution for a free particle via the F(k, q, t) representation:
// rho(q', q'', t) = (1/2pi) int dk int dy e^{-iky} F(k, q' - q'', t) rho_Sch(q' + y, q'' + y, t).
inline DensityMatrix evolve_free_master(const DensityMatrix& rho0, double lambda, double alpha, double mass,
                                        double t, const HamiltonianSpec& H = HamiltonianSpec::free()) {
  if (H.kind != HamiltonianSpec::Kind::free) throw InvalidArgument("non-free Hamiltonian");
  require(rho0.rep == Representation::grid_kernel, "kernel representation required");
  require(lambda >= 0 && alpha > 0 && mass > 0 && t >= 0, "invalid master-equation parameters");
  const Eigen::Index n = rho0.dim();
  require(n >= 8 && is_power_of_two(std::size_t(n)), "grid size must be a power of two and at least 8");
  const Mat sch = free_kernel_evolve(rho0.rho, rho0.dx, mass, t);
  if (lambda == 0.0 || t == 0.0) return DensityMatrix(sch, Representation::grid_kernel, rho0.dx, rho0.x0);
  const RVec k = wave_numbers(std::size_t(n), rho0.dx);
  Mat out(n, n);
  Vec f(n);
  for (Eigen::Index d = -n / 2; d < n / 2; ++d) {
    const double q = double(d) * rho0.dx;
    for (Eigen::Index j = 0; j < n; ++j) f[j] = sch(((j + d) % n + n) % n, j);
    Vec fh = fft_forward(f);
    for (Eigen::Index m = 0; m < n; ++m) {
      // The Nyquist bin stands for both +k and -k; averaging keeps the result Hermitian.
      if (m == n / 2)
        fh[m] *= 0.5 * (F_kernel(k[m], q, t, lambda, alpha, mass) + F_kernel(-k[m], q, t, lambda, alpha, mass));
      else
        fh[m] *= F_kernel(k[m], q, t, lambda, alpha, mass);
    }
    const Vec g = fft_inverse(fh);
    for (Eigen::Index j = 0; j < n; ++j) out(((j + d) % n + n) % n, j) = g[j];
  }
  return DensityMatrix(out, Representation::grid_kernel, rho0.dx, rho0.x0);
}

// Ensemble moments: positions/momenta of the master evolution.
struct Moments {
  double mean_q = 0, mean_p = 0;
  double var_q = 0, cov_qp = 0, var_p = 0;
};

inline Moments free_particle_moments(double lambda, double alpha, double mass, double t, const Moments& sch,
                                     double hbar = 1.0) {
  require(t >= 0 && mass > 0, "invalid arguments");
  const double c = alpha * lambda * hbar * hbar;
  Moments m = sch;
  m.var_q += c * t * t * t / (6.0 * mass * mass);
  m.cov_qp += c * t * t / (4.0 * mass);
  m.var_p += c * t / 2.0;
  return m;
}

struct CharacteristicTimes {
  double T1 = 0, T2 = 0;
};

inline CharacteristicTimes characteristic_times(double lambda, double alpha, double mass, double dq, double dp,
                                                double hbar = 1.0) {
  require(dq > 0 && dp > 0, "spreads must be positive");
  const double c = alpha * lambda * hbar * hbar;
  return {std::cbrt(6.0 * mass * mass * dq * dq / c), 2.0 * dp * dp / c};
}

// h(x, y) = (1/x) int_{-y}^{x-y} exp(-z^2) dz by quadrature.
inline double h_mean(double x, double y) {
  require(x > 0, "h(x, y) needs x > 0");
  return num::adaptive_simpson([](double z) { return std::exp(-z * z); }, -y, x - y, 1e-14) / x;
}

struct Lifetime {
  double beta = 0;
  double tau = std::numeric_limits<double>::infinity();
};

// beta = 1 - sqrt(pi) erf(u)/u, u = sqrt(alpha) q / 2. The bound F < exp(-lambda beta t)
// is informative only for beta > 0; otherwise tau is reported as infinite.
inline Lifetime offdiag_lifetime(double q, double lambda, double alpha) {
  if (!(q > 0)) throw InvalidArgument("separation must be positive");
  require(lambda > 0 && alpha > 0, "lambda and alpha must be positive");
  const double u = 0.5 * std::sqrt(alpha) * q;
  Lifetime l;
  l.beta = 1.0 - std::sqrt(std::numbers::pi) * std::erf(u) / u;
  if (l.beta > 0) l.tau = 1.0 / (lambda * l.beta);
  return l;
}

inline double offdiag_beta_quadrature(double q, double alpha) {
  const double y = 0.5 * std::sqrt(alpha) * q;
  return 1.0 - 2.0 * h_mean(2.0 * y, y);
}

inline double com_amplified_rate(double lambda_micro, double n) {
  require(n >= 1, "particle count must be at least one");
  return n * lambda_micro;
}

// Two distinguishable particles on an n x n grid, each hit at rate lambda,
// no Hamiltonian. Returns the center-of-mass kernel rho_R(s, s') at time t,
// indexed by s = j1 + j2 (so R = x0 + s dx / 2), with the relative
// coordinate traced out.
inline Mat two_particle_com_kernel(const Vec& psi12, std::size_t n, double dx, double lambda, double alpha,
                                   double t) {
  require(psi12.size() == Eigen::Index(n * n), "two-particle amplitude size mismatch");
  const Eigen::Index ns = Eigen::Index(2 * n - 1);
  Mat out = Mat::Zero(ns, ns);
  auto damp = [&](long d) {
    const double x = double(d) * dx;
    return std::exp(-lambda * t * (1.0 - std::exp(-0.25 * alpha * x * x)));
  };
  // rho(j1 j2; k1 k2) contributes to (j1+j2, k1+k2) when j1 - j2 = k1 - k2.
  for (std::size_t j1 = 0; j1 < n; ++j1)
    for (std::size_t j2 = 0; j2 < n; ++j2)
      for (std::size_t k1 = 0; k1 < n; ++k1) {
        const long k2l = long(k1) - long(j1) + long(j2);
        if (k2l < 0 || k2l >= long(n)) continue;
        const std::size_t k2 = std::size_t(k2l);
        const cplx a = psi12[Eigen::Index(j1 * n + j2)];
        const cplx b = psi12[Eigen::Index(k1 * n + k2)];
        out(Eigen::Index(j1 + j2), Eigen::Index(k1 + k2)) +=
            a * std::conj(b) * damp(long(j1) - long(k1)) * damp(long(j2) - long(k2)) * dx;
      }
  return out;
}

// dE/dt = lambda alpha hbar^2 / (4 m).
inline double energy_increase_rate(double lambda, double alpha, double mass, double hbar = 1.0) {
  require(mass > 0, "mass must be positive");
  return lambda * alpha * hbar * hbar / (4.0 * mass);
}

}  // namespace drm::qmsl
