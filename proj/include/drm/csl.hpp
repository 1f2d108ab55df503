#pragma once

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/numerics.hpp"
#include "drm/rng.hpp"
#include "drm/state.hpp"
#include "drm/units.hpp"

namespace drm::csl {

enum class Form { linear, nonlinear };
enum class Calculus { ito, stratonovich };

struct CslStepper {
  ProjectorFamily family;
  Form form = Form::nonlinear;
  Calculus calculus = Calculus::ito;
  double gamma = 1.0;
  double dt = 1e-3;

  double stability_number() const {
    const double a = family.max_abs_eigenvalue();
    return gamma * a * a * dt;
  }
  void validate() const {
    require(gamma >= 0 && dt > 0, "gamma must be nonnegative and dt positive");
    if (stability_number() > 0.01)
      throw NumericalError("stability criterion gamma max|a|^2 dt <= 0.01 violated (value " +
                           std::to_string(stability_number()) + ")");
  }
};

// State of a linear trajectory: the direction is kept normalized and the
// squared norm of the linearly evolved vector is exp(log_weight).
struct WeightedState {
  Vec psi;
  double log_weight = 0.0;
};

namespace detail {

inline Vec apply_A(const ProjectorFamily& f, Eigen::Index c, const Vec& psi) {
  if (f.is_diagonal()) return f.diagonals().row(c).transpose().cast<cplx>().cwiseProduct(psi);
  return f.op(c) * psi;
}

inline Vec apply_A2(const ProjectorFamily& f, Eigen::Index c, const Vec& psi) {
  if (f.is_diagonal()) {
    const RVec d = f.diagonals().row(c).transpose();
    return d.cwiseProduct(d).cast<cplx>().cwiseProduct(psi);
  }
  return f.op_sq(c) * psi;
}

inline Vec apply_H(const Mat* H, const Vec& psi) {
  if (!H || H->size() == 0) return Vec::Zero(psi.size());
  return (*H) * psi;
}

// sum_c (A_c - R_c) dB_c psi and sum_c (A_c - R_c)^2 psi.
struct Centered {
  Vec noise, sq;
};

inline Centered centered_terms(const ProjectorFamily& f, const Vec& psi, const RVec& dB, bool with_sq,
                               RVec* Rout = nullptr, RVec* Q2out = nullptr) {
  const double n2 = psi.squaredNorm();
  Centered out{Vec::Zero(psi.size()), Vec::Zero(psi.size())};
  for (Eigen::Index c = 0; c < f.channels(); ++c) {
    const Vec Ap = apply_A(f, c, psi);
    const double R = psi.dot(Ap).real() / n2;
    const Vec Cp = Ap - R * psi;  // (A - R) psi
    out.noise += dB[c] * Cp;
    if (with_sq) out.sq += apply_A(f, c, Cp) - R * Cp;
    if (Rout) (*Rout)[c] = R;
    if (Q2out) (*Q2out)[c] = Ap.squaredNorm() / n2;
  }
  return out;
}

inline void renormalize(WeightedState& s) {
  const double n2 = s.psi.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw NumericalError("state norm collapsed to zero or overflowed");
  s.log_weight += std::log(n2);
  s.psi /= std::sqrt(n2);
}

}  // namespace detail

// Linear equation. Ito: d psi = [-iH dt + sum A dB - (gamma/2) sum A^2 dt] psi.
// Stratonovich: d psi/dt = [-iH + A V - gamma A^2] psi, integrated by Heun.
inline WeightedState step_linear(WeightedState s, const Mat* H, const CslStepper& st, const RVec& dB) {
  st.validate();
  const ProjectorFamily& f = st.family;
  require(dB.size() == f.channels(), "one noise increment per channel required");
  require(s.psi.size() == f.dim(), "state dimension does not match projector family");
  const double dt = st.dt, g = st.gamma;
  auto drift = [&](const Vec& p, double coef) {
    Vec d = -I * detail::apply_H(H, p);
    for (Eigen::Index c = 0; c < f.channels(); ++c) d -= coef * g * detail::apply_A2(f, c, p);
    return d;
  };
  auto diffusion = [&](const Vec& p) {
    Vec d = Vec::Zero(p.size());
    for (Eigen::Index c = 0; c < f.channels(); ++c) d += dB[c] * detail::apply_A(f, c, p);
    return d;
  };
  if (st.calculus == Calculus::ito) {
    s.psi = s.psi + drift(s.psi, 0.5) * dt + diffusion(s.psi);
  } else {
    const Vec f0 = drift(s.psi, 1.0), g0 = diffusion(s.psi);
    const Vec pred = s.psi + f0 * dt + g0;
    s.psi = s.psi + 0.5 * (f0 + drift(pred, 1.0)) * dt + 0.5 * (g0 + diffusion(pred));
  }
  detail::renormalize(s);
  return s;
}

// Nonlinear norm-preserving equation with R = <A>.
// Ito: d phi = [-iH dt - (gamma/2)(A - R)^2 dt + (A - R) dB] phi.
// Stratonovich: d phi/dt = [-iH + (A - R)V - gamma (A - R)^2 + gamma (Q^2 - R^2)] phi.
inline Vec step_nonlinear(const Vec& phi, const Mat* H, const CslStepper& st, const RVec& dB) {
  st.validate();
  const ProjectorFamily& f = st.family;
  require(dB.size() == f.channels(), "one noise increment per channel required");
  require(phi.size() == f.dim(), "state dimension does not match projector family");
  if (std::abs(phi.squaredNorm() - 1.0) > 1e-8) throw InvalidArgument("unnormalized input");
  const double dt = st.dt, g = st.gamma;
  Vec out;
  if (st.calculus == Calculus::ito) {
    const auto ct = detail::centered_terms(f, phi, dB, true);
    out = phi - I * detail::apply_H(H, phi) * dt - 0.5 * g * ct.sq * dt + ct.noise;
  } else {
    auto parts = [&](const Vec& p, Vec& drift, Vec& noise) {
      RVec R(f.channels()), Q2(f.channels());
      const auto ct = detail::centered_terms(f, p, dB, true, &R, &Q2);
      drift = -I * detail::apply_H(H, p) - g * ct.sq;
      for (Eigen::Index c = 0; c < f.channels(); ++c) drift += g * (Q2[c] - R[c] * R[c]) * p;
      noise = ct.noise;
    };
    Vec d0, n0, d1, n1;
    parts(phi, d0, n0);
    const Vec pred = phi + d0 * dt + n0;
    parts(pred, d1, n1);
    out = phi + 0.5 * (d0 + d1) * dt + 0.5 * (n0 + n1);
  }
  const double n2 = out.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw NumericalError("state norm collapsed to zero or overflowed");
  return out / std::sqrt(n2);
}

// Multinomial resampling proportional to exp(log_weight). Weights more than
// `cull_nats` below the maximum are treated as zero; `culled` reports how many.
struct ResampleResult {
  std::vector<std::size_t> index;
  std::size_t culled = 0;
};

inline ResampleResult cooked_resample(const std::vector<double>& log_weights, std::size_t count,
                                      const CounterRng& rng, std::uint64_t round = 0,
                                      double cull_nats = 40.0) {
  require(!log_weights.empty(), "no trajectories to resample");
  double mx = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) mx = std::max(mx, w);
  if (!std::isfinite(mx)) throw InvalidArgument("all weights are zero");
  std::vector<double> cdf(log_weights.size());
  ResampleResult r;
  double acc = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    double w = 0.0;
    if (log_weights[i] >= mx - cull_nats) w = std::exp(log_weights[i] - mx);
    else ++r.culled;
    acc += w;
    cdf[i] = acc;
  }
  r.index.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double u = rng.uniform(Stream::resample, std::uint32_t(round), k) * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    r.index[k] = std::min<std::size_t>(std::size_t(it - cdf.begin()), cdf.size() - 1);
  }
  return r;
}

inline std::vector<double> linear_weights(const std::vector<double>& log_weights) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) mx = std::max(mx, w);
  std::vector<double> out(log_weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(log_weights[i] - mx);
  return out;
}

// dz_sigma = 2 z_sigma sum_tau z_tau (a_sigma - a_tau) . dB. Negative
// components produced by a finite step are clipped and the simplex restored.
inline RVec z_dynamics_step(const RVec& z, const ProjectorFamily& f, const RVec& dB) {
  require(z.size() == f.components(), "z has the wrong length");
  require(dB.size() == f.channels(), "one noise increment per channel required");
  if (z.minCoeff() < -1e-12 || std::abs(z.sum() - 1.0) > 1e-9) throw InvalidArgument("invalid simplex input");
  const RMat& a = f.eigenvalues();
  const RVec abar = a * z;  // per channel sum_tau z_tau a_tau
  RVec out = z;
  for (Eigen::Index s = 0; s < z.size(); ++s) out[s] += 2.0 * z[s] * (a.col(s) - abar).dot(dB);
  if (out.minCoeff() < 0.0) {
    out = out.cwiseMax(0.0);
    out /= out.sum();
  }
  return out;
}

// Cooked density of B(t) for the two-level linear equation with H = 0.
struct TwoLevelDensity {
  double w_alpha = 0.5, w_beta = 0.5;
  double a = 1.0, b = -1.0;
  double gamma = 1.0, f = 1.0;  // f = t for white noise

  double mean_alpha() const { return 2.0 * gamma * a * f; }
  double mean_beta() const { return 2.0 * gamma * b * f; }
  double variance() const { return gamma * f; }
  double pdf(double x) const {
    return w_alpha * num::gaussian_pdf(x, mean_alpha(), variance()) +
           w_beta * num::gaussian_pdf(x, mean_beta(), variance());
  }
  double cdf(double x) const {
    const double s = std::sqrt(variance());
    return w_alpha * num::normal_cdf((x - mean_alpha()) / s) + w_beta * num::normal_cdf((x - mean_beta()) / s);
  }
};

inline TwoLevelDensity two_level_analytic(double w_alpha, double w_beta, double a, double b, double gamma,
                                          double t) {
  require(w_alpha >= 0 && w_beta >= 0 && std::abs(w_alpha + w_beta - 1.0) <= 1e-12, "weights must sum to one");
  require(gamma > 0 && t > 0, "gamma and t must be positive");
  return {w_alpha, w_beta, a, b, gamma, t};
}

// Exact Lindblad evolution d rho/dt = -i[H, rho] + gamma sum A rho A - gamma/2 sum {A^2, rho}.
inline DensityMatrix lindblad_evolve(const DensityMatrix& rho0, const Mat* H, const ProjectorFamily& f,
                                     double gamma, double t) {
  require(rho0.rep == Representation::finite, "finite-dimensional density matrix required");
  require(rho0.dim() == f.dim(), "density matrix dimension does not match projector family");
  if (rho0.hermiticity_error() > 1e-10) throw InvalidArgument("non-Hermitian input");
  require(t >= 0 && gamma >= 0, "t and gamma must be nonnegative");
  const Eigen::Index d = rho0.dim();
  const bool hamiltonian = H && H->size() > 0 && H->cwiseAbs().maxCoeff() > 0.0;
  if (!hamiltonian && f.is_diagonal()) {
    Mat out = rho0.rho;
    const RMat& dg = f.diagonals();
    for (Eigen::Index k = 0; k < d; ++k)
      for (Eigen::Index l = 0; l < d; ++l) {
        const double s = (dg.col(k) - dg.col(l)).squaredNorm();
        out(k, l) *= std::exp(-0.5 * gamma * s * t);
      }
    return DensityMatrix(out);
  }
  const Mat Id = Mat::Identity(d, d);
  Mat L = Mat::Zero(d * d, d * d);
  if (hamiltonian) L += -I * (Eigen::kroneckerProduct(Id, *H).eval() - Eigen::kroneckerProduct(H->transpose(), Id).eval());
  for (Eigen::Index c = 0; c < f.channels(); ++c) {
    const Mat& A = f.op(c);
    const Mat& A2 = f.op_sq(c);
    L += gamma * Eigen::kroneckerProduct(A.transpose(), A).eval();
    L -= 0.5 * gamma * (Eigen::kroneckerProduct(Id, A2).eval() + Eigen::kroneckerProduct(A2.transpose(), Id).eval());
  }
  const Mat prop = (L * t).exp();
  const Vec v = Eigen::Map<const Vec>(rho0.rho.data(), d * d);
  const Vec w = prop * v;
  Mat out = Eigen::Map<const Mat>(w.data(), d, d);
  out = 0.5 * (out + out.adjoint());
  return DensityMatrix(out);
}

// log of exp(-(lambda/2) sum (n - m)^2 t), safe for astronomically large exponents.
inline double discrete_decay_exponent(const std::vector<double>& n, const std::vector<double>& m, double lambda,
                                      double t) {
  if (n.size() != m.size()) throw InvalidArgument("occupation tuples have different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) s += (n[i] - m[i]) * (n[i] - m[i]);
  return -0.5 * lambda * s * t;
}

inline double discrete_decay_factor(const std::vector<double>& n, const std::vector<double>& m, double lambda,
                                    double t) {
  return std::exp(discrete_decay_exponent(n, m, lambda, t));
}

// Occupation basis for a small cell model. Each configuration lists the
// occupation of every (species, cell) channel.
struct CellModel {
  std::size_t cells = 0;
  std::size_t species = 1;
  std::vector<std::vector<int>> configurations;  // [config][species * cells + cell]
  double lambda_eff = 1.0;                        // gamma (alpha/4pi)^{3/2}

  void validate() const {
    require(cells >= 1 && species >= 1, "cell model needs cells and species");
    require(configurations.size() >= 2, "cell model needs at least two configurations");
    for (const auto& c : configurations) {
      require(c.size() == cells * species, "configuration length must equal species x cells");
      for (int v : c) require(v >= 0, "occupation numbers must be nonnegative");
    }
    require(lambda_eff > 0, "cell rate must be positive");
  }

  ProjectorFamily family() const {
    validate();
    RMat d(Eigen::Index(cells * species), Eigen::Index(configurations.size()));
    for (std::size_t k = 0; k < configurations.size(); ++k)
      for (std::size_t c = 0; c < cells * species; ++c) d(Eigen::Index(c), Eigen::Index(k)) = configurations[k][c];
    return ProjectorFamily::from_channel_diagonals(d);
  }

  // The noise coupling equals the cell rate: gamma_noise = lambda_eff.
  CslStepper stepper(double dt, Form form = Form::nonlinear, Calculus calc = Calculus::ito) const {
    return CslStepper{family(), form, calc, lambda_eff, dt};
  }
};

// Gamma = gamma D0 n_out (sharp scanning, homogeneous body).
inline double macro_reduction_rate(double gamma, double D0, double n_out) {
  require(gamma > 0 && D0 > 0 && n_out >= 0, "invalid reduction-rate arguments");
  return gamma * D0 * n_out;
}

// Smeared profile of a uniform 1D slab [-L/2, L/2] of density D0 under a
// Gaussian of variance 1/alpha.
inline double smeared_slab(double x, double D0, double L, double alpha) {
  const double s = std::sqrt(alpha);
  return D0 * (num::normal_cdf(s * (x + 0.5 * L)) - num::normal_cdf(s * (x - 0.5 * L)));
}

// Gamma(Delta) = (gamma/2) int [F(x) - F(x - Delta)]^2 dx for the smeared slab.
inline double slab_reduction_rate(double gamma, double D0, double L, double alpha, double delta) {
  const double w = 10.0 / std::sqrt(alpha);
  auto f = [&](double x) {
    const double d = smeared_slab(x, D0, L, alpha) - smeared_slab(x - delta, D0, L, alpha);
    return d * d;
  };
  const double lo = -0.5 * L - w, hi = 0.5 * L + delta + w;
  // Integrate edge by edge; the integrand is flat elsewhere.
  std::vector<double> cuts{lo, -0.5 * L + w, -0.5 * L + delta - w, -0.5 * L + delta + w, 0.5 * L - w,
                           0.5 * L + w,  0.5 * L + delta - w, hi};
  std::sort(cuts.begin(), cuts.end());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    acc += num::adaptive_simpson(f, cuts[i], cuts[i + 1], 1e-12 * D0 * D0 * std::max(L, 1.0 / std::sqrt(alpha)));
  return 0.5 * gamma * acc;
}

// delta_i = sqrt(alpha/pi) D0^2 S_i, momentum diffusion (1/2) gamma delta_i hbar^2.
inline double delta_closed(double alpha, double D0, double S) {
  return std::sqrt(alpha / std::numbers::pi) * D0 * D0 * S;
}

inline double momentum_diffusion(double gamma, double alpha, double D0, double S, double hbar = 1.0) {
  require(gamma > 0 && alpha > 0 && D0 > 0 && S >= 0, "invalid momentum-diffusion arguments");
  return 0.5 * gamma * delta_closed(alpha, D0, S) * hbar * hbar;
}

// delta_axis = int (dF/dy_axis)^2 d^3y for a smeared rectangular block with
// edges L[0..2], by one-dimensional quadratures of the separable profile.
inline double delta_rectangular_quadrature(double alpha, double D0, const std::array<double, 3>& L, int axis) {
  const double s = std::sqrt(alpha);
  auto prof = [&](double y, double len) { return num::normal_cdf(s * (y + 0.5 * len)) - num::normal_cdf(s * (y - 0.5 * len)); };
  auto dprof = [&](double y, double len) {
    return s * (num::normal_pdf(s * (y + 0.5 * len)) - num::normal_pdf(s * (y - 0.5 * len)));
  };
  double result = D0 * D0;
  for (int a = 0; a < 3; ++a) {
    const double len = L[std::size_t(a)];
    const double w = 12.0 / s;
    const double tol = 1e-13 * std::max(len, 1.0 / s) * (a == axis ? alpha : 1.0);
    auto g = [&](double y) {
      const double v = a == axis ? dprof(y, len) : prof(y, len);
      return v * v;
    };
    double acc = 0.0;
    const std::vector<double> cuts{-0.5 * len - w, -0.5 * len + w, 0.5 * len - w, 0.5 * len + w};
    if (cuts[1] < cuts[2]) {
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i) acc += num::adaptive_simpson(g, cuts[i], cuts[i + 1], tol);
    } else {
      acc = num::adaptive_simpson(g, cuts.front(), cuts.back(), tol);
    }
    result *= acc;
  }
  return result;
}

// Eigenvalues scaled by m_k / m0 per channel (mass-density coupling).
inline ProjectorFamily mass_weighted_family(const ProjectorFamily& base, const std::vector<double>& channel_mass,
                                            double m0) {
  require(m0 > 0, "reference mass must be positive");
  require(Eigen::Index(channel_mass.size()) == base.channels(), "one mass per channel required");
  RVec s(base.channels());
  for (Eigen::Index c = 0; c < base.channels(); ++c) {
    require(channel_mass[std::size_t(c)] > 0, "masses must be positive");
    s[c] = channel_mass[std::size_t(c)] / m0;
  }
  return base.scaled(s);
}

// Off-diagonal decay rate (gamma/2) sum_c (a_c,sigma - a_c,tau)^2 between two
// components of a family.
inline double offdiag_rate(const ProjectorFamily& f, double gamma, Eigen::Index s, Eigen::Index t) {
  return 0.5 * gamma * (f.eigenvalues().col(s) - f.eigenvalues().col(t)).squaredNorm();
}

// Hermitian (phase) noise: i d psi/dt = sum P_i V_i psi, solved exactly per step
// as psi -> sum_i exp(-i dB_i) P_i psi for a diagonal partition.
inline Vec hermitian_noise_step(const Vec& psi, const std::vector<int>& cell_of, const RVec& dB) {
  require(Eigen::Index(cell_of.size()) == psi.size(), "partition size mismatch");
  Vec out = psi;
  for (Eigen::Index k = 0; k < psi.size(); ++k) {
    const int c = cell_of[std::size_t(k)];
    require(c >= 0 && c < dB.size(), "partition label out of range");
    out[k] *= std::exp(-I * dB[c]);
  }
  return out;
}

// Collapse criterion: the index sigma with z_sigma >= 1 - tol, or -1.
inline int collapsed_to(const RVec& z, double tol = 1e-6) {
  for (Eigen::Index s = 0; s < z.size(); ++s)
    if (z[s] >= 1.0 - tol) return int(s);
  return -1;
}

// Per-trajectory record for CSV export.
struct TrajectorySummary {
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
  int outcome = -1;  // -1: not collapsed by t_end
  double collapse_time = std::numeric_limits<double>::quiet_NaN();
  double log_weight = 0.0;
};

// Runs the nonlinear equation until collapse or `steps` steps. Noise for step k,
// channel c is rng(seed, trajectory).normal(stream, c, k).
inline std::pair<Vec, TrajectorySummary> run_nonlinear(const Vec& psi0, const Mat* H, const CslStepper& st,
                                                       long steps, std::uint64_t seed, std::uint64_t traj,
                                                       Stream stream = Stream::noise, double tol = 1e-6) {
  st.validate();
  const CounterRng rng(seed, traj);
  Vec psi = psi0;
  RVec dB(st.family.channels());
  TrajectorySummary sum{seed, traj};
  const double sd = std::sqrt(st.gamma * st.dt);
  for (long k = 0; k < steps; ++k) {
    for (Eigen::Index c = 0; c < dB.size(); ++c) dB[c] = sd * rng.normal(stream, std::uint32_t(c), std::uint64_t(k));
    psi = step_nonlinear(psi, H, st, dB);
    const bool no_h = !H || H->size() == 0;
    if (no_h) {
      const int o = collapsed_to(st.family.weights(psi), tol);
      if (o >= 0) {
        sum.outcome = o;
        sum.collapse_time = double(k + 1) * st.dt;
        return {psi, sum};
      }
    }
  }
  sum.outcome = collapsed_to(st.family.weights(psi), tol);
  if (sum.outcome >= 0) sum.collapse_time = double(steps) * st.dt;
  return {psi, sum};
}

struct SmcOptions {
  std::size_t trajectories = 1000;
  long steps = 1000;
  std::uint64_t seed = 0;
  double ess_fraction = 0.5;  // resample when ESS < fraction * N
  double cull_nats = 40.0;
  Stream stream = Stream::noise;
  // With H = 0 a member whose largest z exceeds 1 - freeze_tol is frozen: its
  // direction no longer moves and its future weight factor has mean one, so
  // stepping it further only adds weight variance. Negative disables freezing.
  double freeze_tol = 1e-6;
};

struct SmcResult {
  std::vector<WeightedState> members;  // log_weight relative; equal after a final resample
  std::size_t resamples = 0;
  std::size_t culled = 0;
};

// Linear-equation ensemble with cooked weights kept by sequential resampling.
// Slot i always draws its noise from trajectory index i, so copies made by
// resampling decorrelate immediately.
inline SmcResult run_linear_ensemble(const Vec& psi0, const Mat* H, const CslStepper& st, const SmcOptions& opt,
                                     bool final_resample = true) {
  st.validate();
  require(opt.trajectories >= 1 && opt.steps >= 0, "invalid ensemble size");
  const std::size_t n = opt.trajectories;
  SmcResult r;
  r.members.assign(n, WeightedState{psi0 / psi0.norm(), 0.0});
  const double sd = std::sqrt(st.gamma * st.dt);
  RVec dB(st.family.channels());
  std::vector<double> lw(n);
  const CounterRng rs(opt.seed, 0);
  const bool can_freeze = opt.freeze_tol >= 0 && (!H || H->size() == 0);
  std::vector<char> frozen(n, 0);
  for (long k = 0; k < opt.steps; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (frozen[i]) continue;
      const CounterRng rng(opt.seed, i);
      for (Eigen::Index c = 0; c < dB.size(); ++c)
        dB[c] = sd * rng.normal(opt.stream, std::uint32_t(c), std::uint64_t(k));
      r.members[i] = step_linear(std::move(r.members[i]), H, st, dB);
      lw[i] = r.members[i].log_weight;
      if (can_freeze && collapsed_to(st.family.weights(r.members[i].psi), opt.freeze_tol) >= 0) frozen[i] = 1;
    }
    const bool last = k + 1 == opt.steps;
    if (num::effective_sample_size(linear_weights(lw)) < opt.ess_fraction * double(n) || (last && final_resample)) {
      const auto res = cooked_resample(lw, n, rs, std::uint64_t(r.resamples), opt.cull_nats);
      std::vector<WeightedState> next(n);
      std::vector<char> fr(n);
      for (std::size_t i = 0; i < n; ++i) {
        next[i] = WeightedState{r.members[res.index[i]].psi, 0.0};
        fr[i] = frozen[res.index[i]];
        lw[i] = 0.0;
      }
      r.members = std::move(next);
      frozen = std::move(fr);
      r.culled += res.culled;
      ++r.resamples;
    }
  }
  return r;
}

// Linear equation sampled under the proposal dB = dW + 2 gamma <A> dt, with
// <A> taken in the current linear state. The cooked weight of a path is
// ||psi||^2 dP_raw/dQ, so log_weight accumulates log||psi||^2 minus
// sum (2 R dB - 2 gamma R^2 dt) per channel. In continuous time the two cancel;
// the residual measures the discretization and is kept, not assumed zero.
inline SmcResult run_linear_guided(const Vec& psi0, const Mat* H, const CslStepper& st, const SmcOptions& opt,
                                   bool final_resample = true) {
  st.validate();
  require(opt.trajectories >= 1 && opt.steps >= 0, "invalid ensemble size");
  const std::size_t n = opt.trajectories;
  const double sd = std::sqrt(st.gamma * st.dt);
  SmcResult r;
  r.members.assign(n, WeightedState{psi0 / psi0.norm(), 0.0});
  std::vector<double> lw(n);
  RVec dB(st.family.channels());
  for (std::size_t i = 0; i < n; ++i) {
    const CounterRng rng(opt.seed, i);
    WeightedState& m = r.members[i];
    double log_q = 0.0;
    for (long k = 0; k < opt.steps; ++k) {
      for (Eigen::Index c = 0; c < dB.size(); ++c) {
        const double R = m.psi.dot(detail::apply_A(st.family, c, m.psi)).real();
        const double dW = sd * rng.normal(opt.stream, std::uint32_t(c), std::uint64_t(k));
        dB[c] = dW + 2.0 * st.gamma * R * st.dt;
        log_q += 2.0 * R * dB[c] - 2.0 * st.gamma * R * R * st.dt;
      }
      m = step_linear(std::move(m), H, st, dB);
    }
    m.log_weight -= log_q;
    lw[i] = m.log_weight;
  }
  if (final_resample) {
    const auto res = cooked_resample(lw, n, CounterRng(opt.seed, 0), 0, opt.cull_nats);
    std::vector<WeightedState> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = WeightedState{r.members[res.index[i]].psi, 0.0};
    r.members = std::move(next);
    r.culled = res.culled;
    r.resamples = 1;
  }
  return r;
}

inline DensityMatrix ensemble_density(const std::vector<WeightedState>& members) {
  require(!members.empty(), "empty ensemble");
  std::vector<double> lw;
  for (const auto& m : members) lw.push_back(m.log_weight);
  const auto w = linear_weights(lw);
  double tot = 0.0;
  for (double x : w) tot += x;
  const Eigen::Index d = members.front().psi.size();
  Mat rho = Mat::Zero(d, d);
  for (std::size_t i = 0; i < members.size(); ++i) {
    const Vec p = members[i].psi / members[i].psi.norm();
    rho += (w[i] / tot) * p * p.adjoint();
  }
  return DensityMatrix(rho);
}

}  // namespace drm::csl
