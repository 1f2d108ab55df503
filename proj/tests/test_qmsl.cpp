#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "drm/drm.hpp"

using namespace drm;
using namespace drm::qmsl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GridWavefunction two_packets(std::size_t n, double dx, double x0, double a, double s, double w_left,
                             double mass = 1.0) {
  const auto l = gaussian_packet(n, dx, x0, mass, -a, s);
  const auto r = gaussian_packet(n, dx, x0, mass, a, s);
  GridWavefunction g = l;
  g.psi = std::sqrt(w_left) * l.psi + std::sqrt(1.0 - w_left) * r.psi;
  return normalize(g);
}

double left_mass(const GridWavefunction& g) {
  double m = 0;
  for (std::size_t j = 0; j < g.size(); ++j)
    if (g.x(j) < 0) m += std::norm(g.psi[Eigen::Index(j)]);
  return m * g.dx;
}

// Dense spectral kinetic matrix T = F^-1 diag(k^2/2m) F.
Mat kinetic_matrix(std::size_t n, double dx, double mass) {
  const RVec k = wave_numbers(n, dx);
  Mat T(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < n; ++c) {
    Vec e = Vec::Zero(Eigen::Index(n));
    e[Eigen::Index(c)] = 1.0;
    Vec eh = fft_forward(e);
    for (std::size_t j = 0; j < n; ++j) eh[Eigen::Index(j)] *= k[Eigen::Index(j)] * k[Eigen::Index(j)] / (2.0 * mass);
    T.col(Eigen::Index(c)) = fft_inverse(eh);
  }
  return T;
}

// Independent oracle: RK4 on d rho/dt = -i[T, rho] - lambda (1 - exp(-alpha q^2/4)) rho,
// with q the folded grid separation.
Mat master_rk4(const Mat& rho0, double dx, double mass, double lambda, double alpha, double t, int steps) {
  const Eigen::Index n = rho0.rows();
  const Mat T = kinetic_matrix(std::size_t(n), dx, mass);
  RMat D(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::Index d = ((i - j) % n + n) % n;
      if (d >= n / 2) d -= n;
      const double q = double(d) * dx;
      D(i, j) = lambda * (1.0 - std::exp(-0.25 * alpha * q * q));
    }
  auto rhs = [&](const Mat& r) -> Mat {
    Mat out = -I * (T * r - r * T);
    out.array() -= D.cast<cplx>().array() * r.array();
    return out;
  };
  const double h = t / steps;
  Mat r = rho0;
  for (int s = 0; s < steps; ++s) {
    const Mat k1 = rhs(r);
    const Mat k2 = rhs(r + 0.5 * h * k1);
    const Mat k3 = rhs(r + 0.5 * h * k2);
    const Mat k4 = rhs(r + h * k3);
    r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return r;
}

DensityMatrix pure_kernel(const GridWavefunction& g) {
  return DensityMatrix(g.psi * g.psi.adjoint(), Representation::grid_kernel, g.dx, g.x0);
}

}  // namespace

TEST_CASE("a hit suppresses the far packet by exp(-2 alpha a^2)", "[qmsl][hit]") {
  const double alpha = 2.0, a = 1.5;
  auto psi = two_packets(512, 0.05, -12.8, a, 0.1, 0.5);
  const auto hit = localization_operator_apply(psi, a, alpha);
  // Narrow packets: amplitude ratio at the packet centers.
  const auto jl = std::size_t(std::lround((-a + 12.8) / 0.05));
  const auto jr = std::size_t(std::lround((a + 12.8) / 0.05));
  const double before = std::abs(psi.psi[Eigen::Index(jl)]) / std::abs(psi.psi[Eigen::Index(jr)]);
  const double after = std::abs(hit.psi[Eigen::Index(jl)]) / std::abs(hit.psi[Eigen::Index(jr)]);
  CHECK_THAT(after / before, WithinRel(std::exp(-2.0 * alpha * a * a), 1e-9));
}

TEST_CASE("a hit inside a narrow packet barely changes it", "[qmsl][hit]") {
  const double alpha = 1.0;
  auto psi = gaussian_packet(512, 0.02, -5.12, 1.0, 0.0, 0.05);
  const auto hit = normalize(localization_operator_apply(psi, 0.2, alpha));
  const double fid = std::norm(psi.psi.dot(hit.psi) * psi.dx);
  CHECK(fid > 0.99);
}

TEST_CASE("hit weight at distance a matches the Gaussian convolution", "[qmsl][hit]") {
  // |psi|^2 Gaussian of variance s^2 convolved with sqrt(alpha/pi) exp(-alpha x^2).
  const double alpha = 3.0, s = 0.2;
  auto psi = gaussian_packet(1024, 0.01, -5.12, 1.0, 0.0, s);
  for (double a : {0.0, 0.5, 1.0, 2.0}) {
    const double w = localization_operator_apply(psi, a, alpha).norm_sq();
    const double c = 1.0 + 2.0 * alpha * s * s;
    const double expect = std::sqrt(alpha / std::numbers::pi / c) * std::exp(-alpha * a * a / c);
    CHECK_THAT(w, WithinRel(expect, 1e-9));
  }
}

TEST_CASE("hitting density is normalized and splits evenly between packets", "[qmsl][density]") {
  const double alpha = 4.0;
  auto psi = two_packets(1024, 0.02, -10.24, 3.0, 0.2, 0.5);
  const auto d = hitting_density(psi, alpha);
  CHECK_THAT(d.integral(), WithinAbs(1.0, 1e-10));
  CHECK_THAT(d.mass_between(-10.24, 0.0), WithinAbs(0.5, 1e-8));
  // Single packet: Gaussian density of variance s^2 + 1/(2 alpha).
  auto one = gaussian_packet(1024, 0.02, -10.24, 1.0, 0.0, 0.3);
  const auto d1 = hitting_density(one, alpha);
  const double var = 0.09 + 1.0 / (2.0 * alpha);
  for (std::size_t j = 400; j < 624; j += 37)
    CHECK_THAT(d1.p[Eigen::Index(j)], WithinAbs(num::gaussian_pdf(d1.x(j), 0.0, var), 1e-10));
  GridWavefunction bad = one;
  bad.psi *= 2.0;
  CHECK_THROWS_WITH(hitting_density(bad, alpha), Catch::Matchers::ContainsSubstring("unnormalized input"));
}

TEST_CASE("sampled hit centers follow the hitting density", "[qmsl][density]") {
  auto psi = two_packets(512, 0.04, -10.24, 3.0, 0.3, 0.3);
  const auto d = hitting_density(psi, 2.0);
  const CounterRng rng(5, 0);
  const int n = 20000;
  int left = 0;
  for (int i = 0; i < n; ++i)
    if (sample_hit_center(d, rng.uniform(Stream::hit_center, 0, std::uint64_t(i))) < 0) ++left;
  const double sd = std::sqrt(0.3 * 0.7 / n);
  CHECK(std::abs(double(left) / n - 0.3) < 3 * sd);
}

TEST_CASE("hit times are Poisson with rate lambda", "[qmsl][trajectory]") {
  const double lambda = 3.0, T = 2.0;
  auto psi = gaussian_packet(128, 0.2, -12.8, 1.0, 0.0, 1.0);
  const int n = 4000;
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    const auto tr = run_qmsl_trajectory(psi, HamiltonianSpec::none(), lambda, 1.0, T, CounterRng(9, std::uint64_t(i)));
    sum += double(tr.events.size());
    for (const auto& e : tr.events) REQUIRE(e.time <= T);
  }
  CHECK(std::abs(sum / n - lambda * T) < 3 * std::sqrt(lambda * T / n));
}

TEST_CASE("lambda = 0 reduces to Schrodinger evolution", "[qmsl][trajectory]") {
  auto psi = gaussian_packet(512, 0.1, -25.6, 1.0, -1.0, 0.7, 0.8);
  const auto tr = run_qmsl_trajectory(psi, HamiltonianSpec::free(), 0.0, 1.0, 1.5, CounterRng(1, 0));
  const auto sch = evolve_for(psi, HamiltonianSpec::free(), 1.5, 0.01);
  CHECK(tr.events.empty());
  CHECK((tr.final_state.psi - sch.psi).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("trajectories are reproducible from the seed", "[qmsl][trajectory]") {
  auto psi = two_packets(256, 0.2, -25.6, 3.0, 0.5, 0.5);
  const auto a = run_qmsl_trajectory(psi, HamiltonianSpec::free(), 2.0, 1.0, 1.0, CounterRng(3, 17));
  const auto b = run_qmsl_trajectory(psi, HamiltonianSpec::free(), 2.0, 1.0, 1.0, CounterRng(3, 17));
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) CHECK(a.events[i].center == b.events[i].center);
  CHECK(a.final_state.psi == b.final_state.psi);
}

TEST_CASE("repeated hits select packets with Born frequencies", "[qmsl][trajectory]") {
  auto psi = two_packets(256, 0.1, -12.8, 3.0, 0.4, 0.3);
  const int n = 4000;
  int left = 0;
  for (int i = 0; i < n; ++i) {
    const auto tr = run_qmsl_trajectory(psi, HamiltonianSpec::none(), 1.0, 1.0, 6.0, CounterRng(21, std::uint64_t(i)));
    if (left_mass(tr.final_state) > 0.5) ++left;
  }
  CHECK(std::abs(double(left) / n - 0.3) < 3 * std::sqrt(0.21 / n));
}

TEST_CASE("closed-form decay integral agrees with quadrature", "[qmsl][master]") {
  for (double k : {-3.0, -0.5, 0.0, 0.7, 4.0})
    for (double q : {-2.0, 0.0, 0.3, 1.5})
      CHECK_THAT(decay_integral(k, q, 1.3, 2.0, 0.9), WithinAbs(decay_integral_closed(k, q, 1.3, 2.0, 0.9), 1e-10));
}

TEST_CASE("kernel solution matches direct integration of the master equation", "[qmsl][master]") {
  const std::size_t n = 64;
  const double dx = 0.35, x0 = -11.2, mass = 1.0, lambda = 2.0, alpha = 0.25, t = 0.5;
  const auto psi = two_packets(n, dx, x0, 1.5, 0.6, 0.5, mass);
  const auto rho0 = pure_kernel(psi);
  const auto kernel = evolve_free_master(rho0, lambda, alpha, mass, t);
  const Mat oracle = master_rk4(rho0.rho, dx, mass, lambda, alpha, t, 1000);
  CHECK((kernel.rho - oracle).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THAT(kernel.trace().real(), WithinAbs(1.0, 1e-9));
  CHECK(kernel.hermiticity_error() < 1e-9);  // quadrature tolerance
  // lambda = 0 is plain Schrodinger evolution.
  const auto sch = evolve_free_master(rho0, 0.0, alpha, mass, t);
  const auto psit = evolve_for(psi, HamiltonianSpec::free(), t, 0.01);
  CHECK((sch.rho - psit.psi * psit.psi.adjoint()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_WITH(evolve_free_master(rho0, lambda, alpha, mass, t, HamiltonianSpec::harmonic(1.0)),
                    Catch::Matchers::ContainsSubstring("non-free Hamiltonian"));
}

TEST_CASE("trajectory average reproduces the master-equation kernel", "[qmsl][master]") {
  const std::size_t n = 64;
  const double dx = 0.35, x0 = -11.2, lambda = 2.0, alpha = 0.25, t = 0.5;
  const auto psi = two_packets(n, dx, x0, 1.5, 0.6, 0.5);
  const int trajectories = 10000;
  Mat avg = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  // On 64 points the FFT roundoff floor (~1e-13) is amplified by renormalization
  // after improbable hits, so the monitor is set above that floor.
  TrajectoryOptions opt;
  opt.evolve.leakage_threshold = 1e-7;
  for (int i = 0; i < trajectories; ++i) {
    const auto tr =
        run_qmsl_trajectory(psi, HamiltonianSpec::free(), lambda, alpha, t, CounterRng(77, std::uint64_t(i)), opt);
    avg += tr.final_state.psi * tr.final_state.psi.adjoint();
  }
  avg /= double(trajectories);
  const auto master = evolve_free_master(pure_kernel(psi), lambda, alpha, 1.0, t);
  CHECK(frobenius(avg * dx, master.rho * dx) < 0.05);
}

TEST_CASE("ensemble spreads follow the free-particle moment formulas", "[qmsl][moments]") {
  const double lambda = 2.0, alpha = 1.0, mass = 1.0, t = 2.0, s = 1.0;
  const auto psi = gaussian_packet(512, 0.125, -32.0, mass, 0.0, s);
  const auto m0 = grid_moments(evolve_for(psi, HamiltonianSpec::free(), t, 0.01));
  qmsl::Moments sch{m0.mean_q, m0.mean_p, m0.var_q(), m0.cov_qp(), m0.var_p()};
  const auto expect = free_particle_moments(lambda, alpha, mass, t, sch);
  const int n = 10000;
  double q = 0, q2 = 0, p = 0, p2 = 0, qp = 0;
  for (int i = 0; i < n; ++i) {
    const auto tr = run_qmsl_trajectory(psi, HamiltonianSpec::free(), lambda, alpha, t, CounterRng(13, std::uint64_t(i)));
    const auto m = grid_moments(tr.final_state);
    q += m.mean_q, q2 += m.mean_q2, p += m.mean_p, p2 += m.mean_p2, qp += m.mean_qp_sym;
  }
  q /= n, q2 /= n, p /= n, p2 /= n, qp /= n;
  CHECK_THAT(q2 - q * q, WithinRel(expect.var_q, 0.05));
  CHECK_THAT(p2 - p * p, WithinRel(expect.var_p, 0.05));
  CHECK_THAT(qp - q * p, WithinRel(expect.cov_qp, 0.05));
  // Mean kinetic energy grows at lambda alpha / (4 m).
  const double e0 = (m0.mean_p2) / (2 * mass);
  CHECK_THAT((p2 / (2 * mass) - e0) / t, WithinRel(energy_increase_rate(lambda, alpha, mass), 0.05));
}

TEST_CASE("characteristic times scale as m^{2/3} and give dq0^2 at T1", "[qmsl][moments]") {
  const double lambda = 1e7, alpha = 1e10, m = 1.0, dq = 1e-5, dp = 1e-22;
  const auto t = characteristic_times(lambda, alpha, m, dq, dp, cgs::hbar);
  const auto t4 = characteristic_times(lambda, alpha, 4 * m, dq, dp, cgs::hbar);
  CHECK_THAT(t4.T1 / t.T1, WithinRel(std::pow(4.0, 2.0 / 3.0), 1e-12));
  const auto mom = free_particle_moments(lambda, alpha, m, t.T1, {}, cgs::hbar);
  CHECK_THAT(mom.var_q, WithinRel(dq * dq, 1e-12));
  const auto mom2 = free_particle_moments(lambda, alpha, m, t.T2, {}, cgs::hbar);
  CHECK_THAT(mom2.var_p, WithinRel(dp * dp, 1e-12));
  // Gram-scale object: T1 is of order a century.
  const double years = t.T1 / 3.15576e7;
  CHECK(std::abs(std::log10(years / 100.0)) <= 1.0);
}

TEST_CASE("off-diagonal lifetime", "[qmsl][lifetime]") {
  for (double q : {1e-6, 1e-5, 4e-5, 1e-4})
    CHECK_THAT(offdiag_lifetime(q, 1.0, 1e10).beta, WithinAbs(offdiag_beta_quadrature(q, 1e10), 1e-10));
  // Frozen from an independent scipy evaluation.
  const auto l = offdiag_lifetime(4e-5, 1e7, 1e10);
  CHECK_THAT(l.beta, WithinRel(0.11791860923757846, 1e-12));
  CHECK_THAT(l.tau, WithinRel(8.480425663647656e-07, 1e-12));
  CHECK(std::abs(std::log10(l.tau / 1e-6)) <= 1.0);
  // Small separations give a non-positive beta: no bound, infinite lifetime.
  CHECK(std::isinf(offdiag_lifetime(1e-7, 1e7, 1e10).tau));
  CHECK_THROWS_WITH(offdiag_lifetime(0.0, 1e7, 1e10), Catch::Matchers::ContainsSubstring("separation must be positive"));
  CHECK_THAT(h_mean(1e-8, 0.0), WithinRel(1.0, 1e-8));
}

TEST_CASE("center-of-mass decoherence is amplified by the particle count", "[qmsl][amplification]") {
  const std::size_t n = 32;
  const double dx = 0.5, x0 = -8.0, alpha = 1.0, lambda = 1.0;
  // Rigid pair: both particles left or both right.
  auto l = gaussian_packet(n, dx, x0, 1.0, -4.0, 0.5), r = gaussian_packet(n, dx, x0, 1.0, 4.0, 0.5);
  Vec psi12(Eigen::Index(n * n));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      psi12[Eigen::Index(a * n + b)] = (l.psi[Eigen::Index(a)] * l.psi[Eigen::Index(b)] +
                                        r.psi[Eigen::Index(a)] * r.psi[Eigen::Index(b)]) / std::sqrt(2.0);
  psi12 /= std::sqrt(psi12.squaredNorm() * dx * dx);
  auto offdiag = [&](double t) {
    const Mat k = two_particle_com_kernel(psi12, n, dx, lambda, alpha, t);
    double s = 0;
    for (Eigen::Index i = 0; i < Eigen::Index(n) - 1; ++i)
      for (Eigen::Index j = Eigen::Index(n); j < k.cols(); ++j) s += std::abs(k(i, j));
    return s;
  };
  const double t = 0.5;
  const double rate = -std::log(offdiag(t) / offdiag(0.0)) / t;
  CHECK_THAT(rate, WithinRel(com_amplified_rate(lambda, 2.0), 0.02));
  CHECK_THAT(com_amplified_rate(1e-16, 1e23), WithinRel(1e7, 1e-12));
}

TEST_CASE("energy increase rate for a nucleon is of order 1e-25 eV/s", "[qmsl][energy]") {
  const double rate = energy_increase_rate(1e-16, 1e10, cgs::nucleon_mass, cgs::hbar) / cgs::eV;
  CHECK(std::abs(std::log10(rate / 1e-25)) <= 1.0);
  CHECK_THAT(energy_increase_rate(2.0, 3.0, 1.5), WithinRel(1.0, 1e-15));
}
