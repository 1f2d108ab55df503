#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drm/csl.hpp"
#include "drm/errors.hpp"
#include "drm/noise.hpp"
#include "drm/numerics.hpp"
#include "drm/rng.hpp"
#include "drm/state.hpp"
#include "drm/units.hpp"

namespace drm::analysis {

// ---------------------------------------------------------------- mass density

struct MassProfile {
  std::vector<double> mean;      // M_i
  std::vector<double> variance;  // V_i
  double cell_volume = 1.0;

  void validate() const {
    require(mean.size() == variance.size(), "mean and variance lengths differ");
    for (std::size_t i = 0; i < mean.size(); ++i)
      require(variance[i] >= -1e-12 * mean[i] * mean[i], "negative mass variance");
  }
};

// Superposition of occupation configurations. occupations[k] lists, for
// configuration k, n(species, cell) flattened as species * cells + cell.
inline MassProfile mass_profile(const Vec& amplitudes, const std::vector<std::vector<double>>& occupations,
                                const std::vector<double>& species_mass, std::size_t cells,
                                double cell_volume = 1.0) {
  require(Eigen::Index(occupations.size()) == amplitudes.size(), "one configuration per amplitude required");
  require(cells >= 1, "at least one cell required");
  if (species_mass.empty()) throw InvalidArgument("missing mass assignment");
  const std::size_t species = species_mass.size();
  const double n2 = amplitudes.squaredNorm();
  require(std::abs(n2 - 1.0) <= 1e-10, "state must be normalized");
  MassProfile p;
  p.cell_volume = cell_volume;
  p.mean.assign(cells, 0.0);
  p.variance.assign(cells, 0.0);
  std::vector<std::vector<double>> mass(occupations.size(), std::vector<double>(cells, 0.0));
  for (std::size_t k = 0; k < occupations.size(); ++k) {
    if (occupations[k].size() != species * cells) throw InvalidArgument("missing mass assignment");
    const double w = std::norm(amplitudes[Eigen::Index(k)]);
    for (std::size_t c = 0; c < cells; ++c) {
      for (std::size_t s = 0; s < species; ++s) mass[k][c] += species_mass[s] * occupations[k][s * cells + c];
      p.mean[c] += w * mass[k][c];
    }
  }
  // Central second moment: exact zero for a definite cell, no cancellation.
  for (std::size_t k = 0; k < occupations.size(); ++k) {
    const double w = std::norm(amplitudes[Eigen::Index(k)]);
    for (std::size_t c = 0; c < cells; ++c) p.variance[c] += w * (mass[k][c] - p.mean[c]) * (mass[k][c] - p.mean[c]);
  }
  return p;
}

// Product state of independent particles; prob[k][c] is the probability of
// particle k being in cell c.
inline MassProfile mass_profile_product(const std::vector<std::vector<double>>& prob,
                                        const std::vector<double>& particle_mass, double cell_volume = 1.0) {
  if (particle_mass.size() != prob.size()) throw InvalidArgument("missing mass assignment");
  require(!prob.empty(), "no particles");
  const std::size_t cells = prob.front().size();
  MassProfile p;
  p.cell_volume = cell_volume;
  p.mean.assign(cells, 0.0);
  p.variance.assign(cells, 0.0);
  for (std::size_t k = 0; k < prob.size(); ++k) {
    require(prob[k].size() == cells, "particles must share the cell list");
    for (std::size_t c = 0; c < cells; ++c) {
      const double q = prob[k][c], m = particle_mass[k];
      p.mean[c] += m * q;
      p.variance[c] += m * m * q * (1.0 - q);
    }
  }
  return p;
}

// Same as mass_profile_product for n identical particles with equal cell
// probabilities, without materializing them.
inline MassProfile mass_profile_identical(double n, const std::vector<double>& prob, double m0) {
  MassProfile p;
  for (double q : prob) {
    p.mean.push_back(n * m0 * q);
    p.variance.push_back(n * m0 * m0 * q * (1.0 - q));
  }
  return p;
}

struct Accessibility {
  std::vector<std::optional<double>> ratio;  // empty when M_i = 0
  double threshold = 1e-2;
  bool accessible(std::size_t i) const { return ratio[i].has_value() && *ratio[i] <= threshold; }
};

// R_i = sqrt(V_i) / M_i.
inline Accessibility accessibility_ratio(const MassProfile& p, double threshold = 1e-2) {
  p.validate();
  Accessibility a;
  a.threshold = threshold;
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    if (p.mean[i] > 0.0) a.ratio.push_back(std::sqrt(std::max(0.0, p.variance[i])) / p.mean[i]);
    else a.ratio.emplace_back();
  }
  return a;
}

// ---------------------------------------------------------------- tails

struct TailMagnitude {
  double log_bound = 0.0;          // log(alpha_B beta_B)
  double log_residual_mass = 0.0;  // log_bound + log(total mass)
};

inline TailMagnitude tail_magnitude(double lambda_eff, double t, const std::vector<double>& n, double particle_mass) {
  require(lambda_eff >= 0 && t >= 0 && particle_mass > 0, "invalid tail-magnitude arguments");
  double s = 0.0, total = 0.0;
  for (double x : n) {
    s += x * x;
    total += x;
  }
  TailMagnitude r;
  r.log_bound = -lambda_eff * t * s;
  r.log_residual_mass = total > 0 ? r.log_bound + std::log(total * particle_mass) : -std::numeric_limits<double>::infinity();
  return r;
}

// K cells each holding n particles.
inline TailMagnitude tail_magnitude_uniform(double lambda_eff, double t, double cells, double n, double particle_mass) {
  TailMagnitude r;
  r.log_bound = -lambda_eff * t * cells * n * n;
  r.log_residual_mass = n > 0 ? r.log_bound + std::log(cells * n * particle_mass) : -std::numeric_limits<double>::infinity();
  return r;
}

// ---------------------------------------------------------------- Gisin check

using Ensemble = std::vector<std::pair<Vec, double>>;
// Maps (initial state, trajectory index) to a normalized final state drawn
// from the cooked distribution.
using TrajectoryMap = std::function<Vec(const Vec&, std::uint64_t)>;

inline Mat ensemble_rho(const Ensemble& e) {
  if (e.empty()) throw InvalidArgument("empty ensemble");
  const Eigen::Index d = e.front().first.size();
  Mat rho = Mat::Zero(d, d);
  double ws = 0.0;
  for (const auto& [v, w] : e) {
    require(v.size() == d, "ensemble members have different dimensions");
    require(w >= 0, "ensemble weights must be nonnegative");
    const Vec u = v / v.norm();
    rho += w * u * u.adjoint();
    ws += w;
  }
  require(std::abs(ws - 1.0) <= 1e-9, "ensemble weights must sum to one");
  return rho;
}

struct GisinReport {
  double distance = 0.0;  // Frobenius distance of the two evolved estimates
  double band = 0.0;      // 3 sigma Monte Carlo band
  double sigma = 0.0;
  bool pass = false;
  Mat rho_a, rho_b;
};

namespace detail {
struct EnsembleEstimate {
  Mat rho;
  double var = 0.0;  // E ||rho_hat - rho||_F^2
};

inline EnsembleEstimate evolve_ensemble(const Ensemble& e, const TrajectoryMap& dyn, std::size_t trajectories,
                                        std::uint64_t offset) {
  const Eigen::Index d = e.front().first.size();
  EnsembleEstimate out{Mat::Zero(d, d), 0.0};
  std::uint64_t idx = offset;
  for (const auto& [v, w] : e) {
    if (w == 0.0) continue;
    const std::size_t n = std::max<std::size_t>(2, std::size_t(std::llround(w * double(trajectories))));
    Mat acc = Mat::Zero(d, d);
    for (std::size_t i = 0; i < n; ++i) {
      Vec u = dyn(v / v.norm(), idx++);
      u /= u.norm();
      acc += u * u.adjoint();
    }
    acc /= double(n);
    // Per-sample squared deviation: Tr P^2 - ||mean||^2 = 1 - purity.
    const double spread = std::max(0.0, 1.0 - acc.squaredNorm()) * double(n) / double(n - 1);
    out.rho += w * acc;
    out.var += w * w * spread / double(n);
  }
  return out;
}
}  // namespace detail

inline GisinReport gisin_check(const Ensemble& a, const Ensemble& b, const TrajectoryMap& dynamics,
                               std::size_t trajectories, double precondition_tol = 1e-10) {
  const Mat ra = ensemble_rho(a), rb = ensemble_rho(b);
  if ((ra - rb).norm() > precondition_tol) throw InvalidArgument("initially inequivalent ensembles");
  // Disjoint trajectory indices keep the two ensembles statistically independent.
  const auto ea = detail::evolve_ensemble(a, dynamics, trajectories, 0);
  const auto eb = detail::evolve_ensemble(b, dynamics, trajectories, std::uint64_t(1) << 31);
  GisinReport r;
  r.rho_a = ea.rho;
  r.rho_b = eb.rho;
  r.distance = (ea.rho - eb.rho).norm();
  r.sigma = std::sqrt(ea.var + eb.var);
  r.band = 3.0 * r.sigma;
  r.pass = r.distance <= r.band;
  return r;
}

// ---------------------------------------------------------------- EPR

// Singlet (|+-> - |-+>)/sqrt2 in the basis |LR> = |++>, |+->, |-+>, |-->.
inline Vec singlet() {
  Vec s = Vec::Zero(4);
  s[1] = 1.0 / std::numbers::sqrt2;
  s[2] = -1.0 / std::numbers::sqrt2;
  return s;
}

inline ProjectorFamily sigma_z_left() {
  RVec a(4);
  a << 1, 1, -1, -1;
  return ProjectorFamily::from_channel_diagonals(a.transpose());
}

inline ProjectorFamily sigma_z_right() {
  RVec a(4);
  a << 1, -1, 1, -1;
  return ProjectorFamily::from_channel_diagonals(a.transpose());
}

inline ProjectorFamily sigma_z_both() {
  RMat a(2, 4);
  a << 1, 1, -1, -1, 1, -1, 1, -1;
  return ProjectorFamily::from_channel_diagonals(a);
}

struct EprNonlinearOptions {
  std::uint64_t seed = 1;
  std::size_t trajectories = 6000;
  double gamma = 1.0;
  double t_phase = 8.0;  // duration of each apparatus interaction
  double dt = 0.004;
  std::size_t min_class = 500;
};

struct EprNonlinearResult {
  std::size_t trajectories = 0;
  std::size_t class_size = 0;         // left-noise paths giving +1 on the singlet alone
  double class_frequency = 0.0;
  double p_minus_off = 0.0;           // p(-1 | class, g_R = 0)
  double p_minus_on = 0.0;            // p(-1 | class, g_R != 0)
  double p_minus_on_stderr = 0.0;
  double gap() const { return p_minus_on - p_minus_off; }
};

namespace detail {
// Runs one apparatus phase with the nonlinear equation; returns the final state.
inline Vec run_phase(Vec psi, const csl::CslStepper& st, long steps, const CounterRng& rng, Stream stream) {
  RVec dB(1);
  const double sd = std::sqrt(st.gamma * st.dt);
  for (long k = 0; k < steps; ++k) {
    dB[0] = sd * rng.normal(stream, 0, std::uint64_t(k));
    psi = csl::step_nonlinear(psi, nullptr, st, dB);
  }
  return psi;
}

inline int left_outcome(const Vec& psi) {
  const double up = std::norm(psi[0]) + std::norm(psi[1]);
  return up >= 0.5 ? +1 : -1;
}
}  // namespace detail

// R is measured on [0, T], then L on [T, 2T]. The left noise on [T, 2T] is the
// same path whether or not R was switched on.
inline EprNonlinearResult epr_nonlinear_experiment(const EprNonlinearOptions& o) {
  const csl::CslStepper left{sigma_z_left(), csl::Form::nonlinear, csl::Calculus::ito, o.gamma, o.dt};
  const csl::CslStepper right{sigma_z_right(), csl::Form::nonlinear, csl::Calculus::ito, o.gamma, o.dt};
  left.validate();
  const long steps = std::max(1L, long(std::llround(o.t_phase / o.dt)));
  EprNonlinearResult r;
  r.trajectories = o.trajectories;
  std::size_t minus_off = 0, minus_on = 0;
  for (std::size_t i = 0; i < o.trajectories; ++i) {
    const CounterRng rng(o.seed, i);
    const Vec off = detail::run_phase(singlet(), left, steps, rng, Stream::left_noise);
    if (detail::left_outcome(off) != +1) continue;
    ++r.class_size;
    // Replaying with g_R = 0 is deterministic; recorded for the table.
    if (detail::left_outcome(detail::run_phase(singlet(), left, steps, rng, Stream::left_noise)) == -1) ++minus_off;
    const Vec after_r = detail::run_phase(singlet(), right, steps, rng, Stream::right_noise);
    if (detail::left_outcome(detail::run_phase(after_r, left, steps, rng, Stream::left_noise)) == -1) ++minus_on;
  }
  r.class_frequency = double(r.class_size) / double(o.trajectories);
  if (r.class_size < o.min_class)
    throw StatisticalError("insufficient conditioning samples: " + std::to_string(r.class_size) + " < " +
                           std::to_string(o.min_class));
  const double n = double(r.class_size);
  r.p_minus_off = double(minus_off) / n;
  r.p_minus_on = double(minus_on) / n;
  r.p_minus_on_stderr = std::sqrt(std::max(r.p_minus_on * (1.0 - r.p_minus_on), 0.25 / n) / n);
  return r;
}

struct EprLinearOptions {
  std::uint64_t seed = 1;
  std::size_t trajectories = 2000;
  double gamma = 1.0;
  double t_end = 10.0;
  double dt = 0.005;
};

struct EprLinearResult {
  std::vector<double> bl_on, bl_off;  // cooked samples of B_L(t)
  double ks = 0.0;
  double ks_critical = 0.0;
  bool pass = false;
};

// Cooked samples of B(t) for a diagonal family via the norm-preserving
// equation: B = W + 2 gamma int <A> dt has the cooked law when W is Wiener.
inline RMat cooked_noise_samples(const Vec& psi0, const ProjectorFamily& f, double gamma, double t_end, double dt,
                                 std::size_t n, std::uint64_t seed, Stream stream = Stream::noise) {
  const csl::CslStepper st{f, csl::Form::nonlinear, csl::Calculus::ito, gamma, dt};
  st.validate();
  const long steps = std::max(1L, long(std::llround(t_end / dt)));
  const double sd = std::sqrt(gamma * dt);
  RMat out(static_cast<Eigen::Index>(n), f.channels());
  RVec dW(f.channels());
  for (std::size_t i = 0; i < n; ++i) {
    const CounterRng rng(seed, i);
    Vec psi = psi0 / psi0.norm();
    RVec B = RVec::Zero(f.channels());
    for (long k = 0; k < steps; ++k) {
      const RVec z = f.weights(psi);
      const RVec mean_a = f.eigenvalues() * z;
      for (Eigen::Index c = 0; c < dW.size(); ++c) dW[c] = sd * rng.normal(stream, std::uint32_t(c), std::uint64_t(k));
      B += dW + 2.0 * gamma * mean_a * dt;
      psi = csl::step_nonlinear(psi, nullptr, st, dW);
    }
    out.row(Eigen::Index(i)) = B.transpose();
  }
  return out;
}

inline EprLinearResult epr_linear_experiment(const EprLinearOptions& o) {
  EprLinearResult r;
  const RMat on = cooked_noise_samples(singlet(), sigma_z_both(), o.gamma, o.t_end, o.dt, o.trajectories, o.seed,
                                       Stream::noise);
  const RMat off = cooked_noise_samples(singlet(), sigma_z_left(), o.gamma, o.t_end, o.dt, o.trajectories,
                                        o.seed ^ 0x9E3779B97F4A7C15ull, Stream::noise);
  for (Eigen::Index i = 0; i < on.rows(); ++i) r.bl_on.push_back(on(i, 0));
  for (Eigen::Index i = 0; i < off.rows(); ++i) r.bl_off.push_back(off(i, 0));
  r.ks = num::ks_two_sample(r.bl_on, r.bl_off);
  r.ks_critical = num::ks_critical_two_sample(double(r.bl_on.size()), double(r.bl_off.size()));
  r.pass = r.ks < r.ks_critical;
  return r;
}

// Left outcome at t -> infinity with both apparatuses on (sign of B_L - B_R)
// and with R off (sign of B_L).
inline int linear_left_outcome_on(double bl, double br) { return bl - br >= 0 ? +1 : -1; }
inline int linear_left_outcome_off(double bl) { return bl >= 0 ? +1 : -1; }

// Cooked mass of the (B_L, B_R) region where the two rules disagree, by
// midpoint enumeration of the cooked density on an n x n grid.
inline double epr_discordant_mass(double gamma, double t, int n = 1200) {
  require(gamma > 0 && t > 0 && n >= 10, "invalid enumeration arguments");
  const double m = 2.0 * gamma * t, s = std::sqrt(gamma * t);
  const double lo = -m - 12.0 * s, hi = m + 12.0 * s;
  const double h = (hi - lo) / n;
  double mass = 0.0;
  for (int i = 0; i < n; ++i) {
    const double bl = lo + (i + 0.5) * h;
    const double pl_p = num::gaussian_pdf(bl, m, s * s), pl_m = num::gaussian_pdf(bl, -m, s * s);
    for (int j = 0; j < n; ++j) {
      const double br = lo + (j + 0.5) * h;
      if (linear_left_outcome_on(bl, br) == linear_left_outcome_off(bl)) continue;
      // Singlet components (+,-) and (-,+), weight 1/2 each.
      mass += 0.5 * (pl_p * num::gaussian_pdf(br, -m, s * s) + pl_m * num::gaussian_pdf(br, m, s * s)) * h * h;
    }
  }
  return mass;
}

// ---------------------------------------------------------------- decoherence

struct DecoherenceSource {
  std::string name;
  double flux = 0.0;           // 1/(cm^2 s)
  double cross_section = 0.0;  // cm^2
  double l_eff = 0.0;          // cm
  double tau_reference = 0.0;  // tabulated electron decoherence time, s
  double delta_reference = 0.0;  // tabulated free-electron rate, 1/(cm^2 s); 0 when absent
  std::string tag;             // provenance of the entry
  bool reference_only = false;
  double rate_override = 0.0;  // Lambda given directly (collapse entries without flux)
};

struct DecoherenceRates {
  double Lambda = 0.0, tau = 0.0, Delta = 0.0;
};

inline DecoherenceRates decoherence_rates(const DecoherenceSource& s) {
  if (!(s.l_eff > 0)) throw InvalidArgument("missing inputs: l_eff");
  double Lambda = s.rate_override;
  if (Lambda == 0.0) {
    if (s.flux < 0 || s.cross_section < 0) throw InvalidArgument("missing inputs: flux or cross section");
    Lambda = s.flux * s.cross_section;
  }
  DecoherenceRates r;
  r.Lambda = Lambda;
  r.tau = Lambda > 0 ? 1.0 / Lambda : std::numeric_limits<double>::infinity();
  r.Delta = Lambda / (s.l_eff * s.l_eff);
  return r;
}

// Tab-separated: name, flux, cross_section, l_eff, rate, tau_ref, delta_ref,
// tag, reference_only. '#' starts a comment line; "-" marks an empty field.
inline std::vector<DecoherenceSource> parse_decoherence_sources(std::istream& in) {
  std::vector<DecoherenceSource> out;
  std::string line;
  int lineno = 0;
  auto num = [&](const std::string& f) { return f == "-" ? 0.0 : std::stod(f); };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 9) throw InvalidArgument("decoherence table line " + std::to_string(lineno) + ": expected 9 fields");
    DecoherenceSource s;
    try {
      s.name = f[0];
      s.flux = num(f[1]);
      s.cross_section = num(f[2]);
      s.l_eff = num(f[3]);
      s.rate_override = num(f[4]);
      s.tau_reference = num(f[5]);
      s.delta_reference = num(f[6]);
    } catch (const std::exception&) {
      throw InvalidArgument("decoherence table line " + std::to_string(lineno) + ": bad number");
    }
    s.tag = f[7];
    s.reference_only = f[8] == "yes";
    out.push_back(s);
  }
  return out;
}

inline std::vector<DecoherenceSource> load_decoherence_sources(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open decoherence table: " + path);
  return parse_decoherence_sources(in);
}

// Gaussian transfer characteristic P(x) = exp(-x^2 / (2 l^2)).
inline std::function<double(double)> gaussian_phat(double l_eff) {
  require(l_eff > 0, "l_eff must be positive");
  return [l_eff](double x) { return std::exp(-0.5 * x * x / (l_eff * l_eff)); };
}

// One step of the scattering master equation (H disregarded) on a grid kernel.
inline Mat scattering_master_step(const Mat& rho, double dx, const std::function<double(double)>& phat,
                                  double Lambda, double dt) {
  require(Lambda >= 0 && dt >= 0 && Lambda * dt <= 1.0, "need 0 <= Lambda dt <= 1");
  if (std::abs(phat(0.0) - 1.0) > 1e-12) throw InvalidArgument("invalid P: P(0) must equal 1");
  const Eigen::Index n = rho.rows();
  Mat out = rho;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = phat(double(i - j) * dx);
      if (std::abs(p) > 1.0 + 1e-12) throw InvalidArgument("invalid P: |P(x)| must not exceed 1");
      out(i, j) *= 1.0 - Lambda * dt * (1.0 - p);
    }
  return out;
}

// l_eff from the near-diagonal damping of rho_t relative to rho_0 after time t:
// -log|ratio| = Lambda t d^2 / (2 l^2) for separations d <= d_max.
inline double fit_l_eff(const Mat& rho0, const Mat& rho_t, double dx, double Lambda, double t, double d_max) {
  std::vector<double> x, y;
  const Eigen::Index n = rho0.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = double(i - j) * dx;
      if (i == j || std::abs(d) > d_max || std::abs(rho0(i, j)) < 1e-300) continue;
      x.push_back(d * d);
      y.push_back(-std::log(std::abs(rho_t(i, j) / rho0(i, j))));
    }
  require(x.size() >= 2, "not enough near-diagonal points to fit");
  const double slope = num::fit_slope_origin(x, y);
  return std::sqrt(Lambda * t / (2.0 * slope));
}

// ---------------------------------------------------------------- excitation

// Q = lambda (1 - 1/sqrt(1 + alpha / 4 kappa^2)).
inline double excitation_rate_qmsl(double lambda, double alpha, double kappa) {
  require(kappa > 0 && lambda >= 0 && alpha >= 0, "invalid excitation arguments");
  const double x = alpha / (4.0 * kappa * kappa);
  // 1 - (1+x)^{-1/2} without cancellation.
  return lambda * -std::expm1(-0.5 * std::log1p(x));
}

inline double excitation_rate_qmsl_small(double lambda, double alpha, double kappa) {
  return lambda * alpha / (8.0 * kappa * kappa);
}

// |<1|q|0>|^2 for the ground state exp(-kappa^2 q^2) of a 1D oscillator.
inline double harmonic_matrix_element_sq(double kappa) {
  require(kappa > 0, "kappa must be positive");
  return 1.0 / (4.0 * kappa * kappa);
}

// sum_j (alpha lambda N_j^2 / 2) |<E|Q_j|B>|^2.
inline double excitation_rate_csl_first_order(double alpha, double lambda, const std::vector<double>& N,
                                              const std::vector<double>& element_sq) {
  require(N.size() == element_sq.size(), "one matrix element per species required");
  double r = 0.0;
  for (std::size_t j = 0; j < N.size(); ++j) r += 0.5 * alpha * lambda * N[j] * N[j] * element_sq[j];
  return r;
}

// Coefficient of the relative coordinate in c1 q1 + c2 q2 for two bound
// particles of masses m1, m2: (c1 m2 - c2 m1) / (m1 + m2). Only this part can
// change the internal state.
inline double two_body_internal_coupling(double c1, double c2, double m1, double m2) {
  require(m1 > 0 && m2 > 0, "masses must be positive");
  return (c1 * m2 - c2 * m1) / (m1 + m2);
}

// ---------------------------------------------------------------- gravity

// Newtonian interaction energy of two uniform spheres (mass M, radius R) with
// centers Delta apart.
inline double sphere_interaction_energy(double M, double R, double Delta, double G = cgs::G) {
  require(M > 0 && R > 0 && Delta >= 0, "invalid sphere arguments");
  const double x = Delta / R;
  if (x >= 2.0) return -G * M * M / Delta;
  const double x2 = x * x, x3 = x2 * x, x5 = x3 * x2;
  return -(G * M * M / R) * (1.2 - 0.5 * x2 + 3.0 * x3 / 16.0 - x5 / 160.0);
}

// Same energy by quadrature: int over sphere A of rho_A Phi_B, with Phi_B the
// potential of the displaced uniform sphere, in (r, cos theta).
inline double sphere_interaction_energy_quadrature(double M, double R, double Delta, double G = cgs::G,
                                                   double tol = 1e-13) {
  const double rho = M / (4.0 / 3.0 * std::numbers::pi * R * R * R);
  auto phi_b = [&](double d) {  // potential at distance d from the center of B
    if (d >= R) return -G * M / d;
    return -G * M * (3.0 * R * R - d * d) / (2.0 * R * R * R);
  };
  auto shell = [&](double r) {
    // Angular integral; split where the distance to B's center crosses R.
    auto f = [&](double u) { return phi_b(std::sqrt(std::max(0.0, r * r + Delta * Delta - 2.0 * r * Delta * u))); };
    double uk = Delta > 0 && r > 0 ? (r * r + Delta * Delta - R * R) / (2.0 * r * Delta) : 2.0;
    double v;
    if (uk > -1.0 && uk < 1.0)
      v = num::adaptive_simpson(f, -1.0, uk, tol * G * M / R) + num::adaptive_simpson(f, uk, 1.0, tol * G * M / R);
    else
      v = num::adaptive_simpson(f, -1.0, 1.0, tol * G * M / R);
    return 2.0 * std::numbers::pi * r * r * v;
  };
  return rho * num::adaptive_simpson(shell, 0.0, R, tol * G * M * R * R);
}

// Reduction rate (U(Delta) - U(0)) / hbar, nonnegative; off-diagonal elements
// decay as exp(-Gamma t).
inline double diosi_rate(double M, double R, double Delta, double hbar = cgs::hbar, double G = cgs::G) {
  require(M > 0 && R > 0 && Delta >= 0 && hbar > 0, "invalid sphere arguments");
  const double x = Delta / R;
  // Difference taken analytically; subtracting the two energies loses ~1e-7 at x = 1e-5.
  const double du = x >= 2.0 ? 1.2 - 1.0 / x : x * x * (0.5 - 3.0 * x / 16.0 + x * x * x / 160.0);
  return G * M * M / R * du / hbar;
}

}  // namespace drm::analysis
