#pragma once

#include <unsupported/Eigen/FFT>
#include <cmath>
#include <numbers>

#include "drm/errors.hpp"
#include "drm/state.hpp"

namespace drm {

// Angular wave numbers of the FFT bins for an n-point grid of spacing dx.
inline RVec wave_numbers(std::size_t n, double dx) {
  RVec k(static_cast<Eigen::Index>(n));
  const double dk = 2.0 * std::numbers::pi / (double(n) * dx);
  for (std::size_t j = 0; j < n; ++j) {
    const long m = j < n / 2 ? long(j) : long(j) - long(n);
    k[Eigen::Index(j)] = dk * double(m);
  }
  return k;
}

inline Vec fft_forward(const Vec& v) {
  Eigen::FFT<double> fft;
  Vec out;
  fft.fwd(out, v);
  return out;
}

inline Vec fft_inverse(const Vec& v) {
  Eigen::FFT<double> fft;
  Vec out;
  fft.inv(out, v);
  return out;
}

struct GridMoments {
  double mean_q = 0, mean_p = 0;
  double mean_q2 = 0, mean_p2 = 0, mean_qp_sym = 0;
  double var_q() const { return mean_q2 - mean_q * mean_q; }
  double var_p() const { return mean_p2 - mean_p * mean_p; }
  double cov_qp() const { return mean_qp_sym - mean_q * mean_p; }
};

// First and second moments of position and momentum (hbar = 1). Position is
// measured on the unfolded grid coordinate x_j.
inline GridMoments grid_moments(const GridWavefunction& g) {
  const std::size_t n = g.size();
  const RVec k = wave_numbers(n, g.dx);
  const Vec phat = fft_forward(g.psi);
  const Vec dpsi = fft_inverse(phat.cwiseProduct(I * k.cast<cplx>()));  // d psi/dx
  GridMoments m;
  const double norm = g.norm_sq();
  double pn = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto J = Eigen::Index(j);
    const double x = g.x(j);
    const double rho = std::norm(g.psi[J]);
    m.mean_q += x * rho;
    m.mean_q2 += x * x * rho;
    // <p> = sum conj(psi) (-i dpsi)
    m.mean_p += (std::conj(g.psi[J]) * (-I) * dpsi[J]).real();
    // <(qp + pq)/2> = Re sum conj(psi) x (-i dpsi)
    m.mean_qp_sym += (std::conj(g.psi[J]) * x * (-I) * dpsi[J]).real();
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double kk = k[Eigen::Index(j)];
    pn += std::norm(phat[Eigen::Index(j)]);
    m.mean_p2 += kk * kk * std::norm(phat[Eigen::Index(j)]);
  }
  m.mean_q *= g.dx / norm;
  m.mean_q2 *= g.dx / norm;
  m.mean_p *= g.dx / norm;
  m.mean_qp_sym *= g.dx / norm;
  m.mean_p2 /= pn;
  return m;
}

struct EvolveOptions {
  double leakage_threshold = 1e-12;
};

inline void check_leakage(const GridWavefunction& g, double threshold) {
  const double edge = std::max(std::abs(g.psi[0]), std::abs(g.psi[g.psi.size() - 1])) * std::sqrt(g.dx);
  const double scale = std::sqrt(g.norm_sq());
  if (edge > threshold * scale)
    throw NumericalError("grid leakage: boundary amplitude " + std::to_string(edge / scale) +
                         " exceeds threshold " + std::to_string(threshold));
}

// One Strang step exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2). For a free particle
// the kinetic factor is exact on the periodic grid, so any dt is allowed.
inline GridWavefunction split_step_evolve(GridWavefunction psi, const HamiltonianSpec& H, double dt,
                                          const EvolveOptions& opt = {}) {
  require(dt >= 0, "time step must be nonnegative");
  if (H.kind == HamiltonianSpec::Kind::matrix) throw InvalidArgument("incompatible Hamiltonian");
  if (dt == 0.0 || H.kind == HamiltonianSpec::Kind::none) return psi;
  const std::size_t n = psi.size();
  const double m = psi.mass;
  Vec half_v;
  if (H.kind == HamiltonianSpec::Kind::harmonic) {
    half_v.resize(Eigen::Index(n));
    for (std::size_t j = 0; j < n; ++j) {
      const double u = psi.x(j) - H.center;
      half_v[Eigen::Index(j)] = std::exp(-I * (0.25 * m * H.omega * H.omega * u * u * dt));
    }
    psi.psi = psi.psi.cwiseProduct(half_v);
  }
  const RVec k = wave_numbers(n, psi.dx);
  Vec phat = fft_forward(psi.psi);
  for (std::size_t j = 0; j < n; ++j) {
    const double kk = k[Eigen::Index(j)];
    phat[Eigen::Index(j)] *= std::exp(-I * (kk * kk / (2.0 * m) * dt));
  }
  psi.psi = fft_inverse(phat);
  if (H.kind == HamiltonianSpec::Kind::harmonic) psi.psi = psi.psi.cwiseProduct(half_v);
  check_leakage(psi, opt.leakage_threshold);
  return psi;
}

// Evolves for total time t in steps no longer than max_dt.
inline GridWavefunction evolve_for(GridWavefunction psi, const HamiltonianSpec& H, double t,
                                   double max_dt, const EvolveOptions& opt = {}) {
  require(t >= 0, "evolution time must be nonnegative");
  if (t == 0.0 || H.kind == HamiltonianSpec::Kind::none) return psi;
  if (H.kind == HamiltonianSpec::Kind::free) return split_step_evolve(std::move(psi), H, t, opt);
  const long steps = std::max(1L, long(std::ceil(t / max_dt)));
  const double h = t / double(steps);
  for (long s = 0; s < steps; ++s) psi = split_step_evolve(std::move(psi), H, h, opt);
  return psi;
}

// Free Schrodinger evolution of a grid kernel: rho -> U rho U^dagger.
inline Mat free_kernel_evolve(const Mat& rho, double dx, double mass, double t) {
  const Eigen::Index n = rho.rows();
  const RVec k = wave_numbers(std::size_t(n), dx);
  Vec phase(n);
  for (Eigen::Index j = 0; j < n; ++j) phase[j] = std::exp(-I * (k[j] * k[j] / (2.0 * mass) * t));
  Mat tmp(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Vec col = rho.col(c);
    tmp.col(c) = fft_inverse(fft_forward(col).cwiseProduct(phase));
  }
  // rho U^dagger: apply U to conj rows, i.e. to columns of tmp^dagger.
  Mat out(n, n);
  const Mat tadj = tmp.adjoint();
  for (Eigen::Index c = 0; c < n; ++c) {
    const Vec col = tadj.col(c);
    out.col(c) = fft_inverse(fft_forward(col).cwiseProduct(phase));
  }
  return out.adjoint();
}

}  // namespace drm
