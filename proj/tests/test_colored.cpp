#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "drm/drm.hpp"

using namespace drm;
using namespace drm::colored;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

struct RunningStats {
  double s = 0, s2 = 0;
  int n = 0;
  void add(double x) { s += x, s2 += x * x, ++n; }
  double mean() const { return s / n; }
  double standard_error() const { return std::sqrt(std::max(0.0, s2 / n - mean() * mean()) / n); }
};

}  // namespace

TEST_CASE("double integral closed forms agree with quadrature", "[colored][kernel]") {
  for (double tau : {0.1, 0.5, 2.0})
    for (double T : {0.05, 0.3, 1.0, 4.0}) {
      const auto g = CorrelationSpec::gaussian(tau), e = CorrelationSpec::exponential(tau);
      CHECK_THAT(g.f(0.0, T), WithinAbs(double_integral_quadrature(g, 0.0, T), 1e-8));
      CHECK_THAT(e.f(0.0, T), WithinAbs(double_integral_quadrature(e, 0.0, T), 1e-8));
      CHECK_THAT(e.f(0.0, T), WithinRel(T - tau * (1 - std::exp(-T / tau)), 1e-12));
    }
  CHECK(CorrelationSpec::white().f(1.0, 3.5) == 2.5);
  CHECK(std::isinf(CorrelationSpec::gaussian(1.0).f(-std::numeric_limits<double>::infinity(), 0.0)));
  // Kernels have unit integral, so K(s) -> |s|/2 for large |s|.
  CHECK_THAT(CorrelationSpec::gaussian(0.3).K(30.0), WithinRel(15.0, 1e-12));
}

TEST_CASE("rate factors", "[colored][rate]") {
  const auto g = CorrelationSpec::gaussian(0.2);
  const double ninf = -std::numeric_limits<double>::infinity();
  // Stationary Gaussian noise reduces at the white rate.
  CHECK(g.rate_factor(ninf, 0.0) == 1.0);
  CHECK_THAT(g.rate_factor(0.0, 2.0), WithinAbs(1.0, 0.01));
  const auto f = ProjectorFamily::from_diagonal((RVec(2) << 1.0, -1.0).finished());
  CHECK_THAT(colored_damping_rate(f, 0, 1, g, 1.5, ninf, 0.0), WithinRel(csl::offdiag_rate(f, 1.5, 0, 1), 1e-14));
  // Finite difference of f matches the analytic factor.
  const auto e = CorrelationSpec::exponential(0.7);
  for (double t : {0.1, 0.7, 2.0}) {
    const double h = 1e-5;
    CHECK_THAT((e.f(0.0, t + h) - e.f(0.0, t - h)) / (2 * h), WithinAbs(e.rate_factor(0.0, t), 1e-8));
    CHECK_THAT((g.f(0.0, t + h) - g.f(0.0, t - h)) / (2 * h), WithinAbs(g.rate_factor(0.0, t), 1e-8));
  }
}

TEST_CASE("exponential paths have the Ornstein-Uhlenbeck statistics", "[colored][paths]") {
  const double tau = 0.5, gamma = 2.0, dt = 0.05;
  {
    // 200 paths of 500 steps give 1e5 pooled samples for the lag-k autocorrelation.
    const int paths = 200, steps = 500, lags = 10;
    std::vector<double> c(lags + 1, 0.0);
    std::vector<int> cnt(lags + 1, 0);
    for (int i = 0; i < paths; ++i) {
      const auto p = sample_exponential_path(tau, {3, std::uint64_t(i), dt}, steps, 1, gamma);
      for (int k = 0; k <= lags; ++k)
        for (int j = 0; j + k < steps; ++j) {
          c[std::size_t(k)] += p.values(j, 0) * p.values(j + k, 0);
          ++cnt[std::size_t(k)];
        }
    }
    const double c0 = c[0] / cnt[0];
    CHECK_THAT(c0, WithinRel(gamma / (2 * tau), 0.03));
    for (int k = 1; k <= lags; ++k)
      CHECK_THAT(c[std::size_t(k)] / cnt[std::size_t(k)] / c0, WithinRel(std::exp(-k * dt / tau), 0.02));
  }
  // 2 E[x w] / gamma = 1 - exp(-T/tau) and Var x = gamma f(T), checked within 4 standard errors.
  const int n = 40000, steps = 60;
  const std::vector<int> at{10, 30, 60};
  std::vector<RunningStats> xw(at.size()), xx(at.size());
  for (int i = 0; i < n; ++i) {
    const auto p = sample_exponential_path(tau, {5, std::uint64_t(i), dt}, steps, 1, gamma);
    const RVec B = p.integrated(0);
    for (std::size_t j = 0; j < at.size(); ++j) {
      xw[j].add(2 * B[at[j]] * p.values(at[j] - 1, 0) / gamma);
      xx[j].add(B[at[j]] * B[at[j]]);
    }
  }
  const auto e = CorrelationSpec::exponential(tau);
  for (std::size_t j = 0; j < at.size(); ++j) {
    const double T = at[j] * dt;
    CHECK(std::abs(xw[j].mean() - e.rate_factor(0.0, T)) < 4 * xw[j].standard_error());
    CHECK(std::abs(xx[j].mean() - gamma * e.f(0.0, T)) < 4 * xx[j].standard_error());
    CHECK_THAT(e.rate_factor(0.0, T), WithinRel(-std::expm1(-T / tau), 1e-12));
  }
}

TEST_CASE("Cholesky paths reproduce the Gaussian-kernel variance", "[colored][paths]") {
  const auto g = CorrelationSpec::gaussian(0.3);
  const double dt = 0.05, gamma = 1.5;
  const PathFactor F(g, 40, dt);
  const int n = 20000;
  double s10 = 0, s40 = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_colored_path(F, {9, std::uint64_t(i), dt}, 1, gamma);
    const RVec B = p.integrated(0);
    s10 += B[10] * B[10];
    s40 += B[40] * B[40];
  }
  CHECK_THAT(s10 / n, WithinRel(gamma * g.f(0.0, 0.5), 0.03));
  CHECK_THAT(s40 / n, WithinRel(gamma * g.f(0.0, 2.0), 0.03));
  // The factor reproduces the Gram matrix.
  const RMat G = cell_gram(g, 40, dt);
  CHECK((F.L() * F.L().transpose() - G).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("custom kernels", "[colored][custom]") {
  const auto e = CorrelationSpec::exponential(0.4);
  const RMat G = cell_gram(e, 20, 0.1);
  const auto c = CorrelationSpec::custom(G, 0.1);
  CHECK_THAT(c.f(0.0, 1.0), WithinRel(e.f(0.0, 1.0), 1e-12));
  RMat bad = RMat::Identity(3, 3);
  bad(0, 1) = bad(1, 0) = 2.0;
  CHECK_THROWS_WITH(CorrelationSpec::custom(bad, 0.1), Catch::Matchers::ContainsSubstring("kernel is not positive semidefinite"));
  RMat asym = RMat::Identity(3, 3);
  asym(0, 1) = 0.1;
  CHECK_THROWS_AS(CorrelationSpec::custom(asym, 0.1), InvalidArgument);
  const auto p = sample_colored_path(c, 20, 2, 1.0, {1, 0, 0.1});
  CHECK(p.steps() == 20);
  CHECK(p.kind == NoiseKind::colored);
}

TEST_CASE("ensemble damping matches the colored factor", "[colored][damping]") {
  // E_raw[psi_a conj(psi_b)] with psi_s = exp(a_s x - gamma a_s^2 f) and x ~ N(0, gamma f).
  const auto fam = ProjectorFamily::from_diagonal((RVec(2) << 1.0, -0.5).finished());
  const auto e = CorrelationSpec::exponential(0.5);
  const double gamma = 0.8, dt = 0.05;
  const int n = 20000, steps = 20;
  const Vec psi0 = Vec::Constant(2, std::sqrt(0.5));
  cplx off = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_exponential_path(0.5, {4, std::uint64_t(i), dt}, steps, 1, gamma);
    csl::WeightedState s{psi0, 0.0};
    for (int k = 0; k < steps; ++k)
      s = commuting_nonwhite_step(std::move(s), nullptr, fam, p.increments.row(k).transpose(), gamma, e, 0.0, k * dt,
                                  (k + 1) * dt);
    const Vec v = s.psi * std::exp(0.5 * s.log_weight);
    off += v[0] * std::conj(v[1]);
  }
  off /= double(n);
  const double expect = 0.5 * colored_damping_factor(fam, 0, 1, e, gamma, 0.0, steps * dt);
  CHECK_THAT(off.real(), WithinRel(expect, 0.03));
  const auto rho = colored_damp(DensityMatrix(psi0 * psi0.adjoint()), fam, e, gamma, 0.0, steps * dt);
  CHECK_THAT(rho.rho(0, 1).real(), WithinRel(expect, 1e-12));
  CHECK_THAT(rho.rho(0, 0).real(), WithinRel(0.5, 1e-12));
}

TEST_CASE("cooked colored noise has the two-Gaussian density", "[colored][cooking]") {
  const auto fam = ProjectorFamily::from_diagonal((RVec(2) << 1.0, -1.0).finished());
  const auto g = CorrelationSpec::gaussian(0.2);
  const double gamma = 1.0, dt = 0.05, wa = 0.35;
  const int steps = 10, n = 4000;
  const PathFactor F(g, steps, dt);
  Vec psi0(2);
  psi0 << std::sqrt(wa), std::sqrt(1 - wa);
  std::vector<std::pair<double, double>> xw;
  std::vector<double> ws;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_colored_path(F, {12, std::uint64_t(i), dt}, 1, gamma);
    const double x = p.increments.col(0).sum();
    const auto s = commuting_nonwhite_step({psi0, 0.0}, nullptr, fam, RVec::Constant(1, x), gamma, g, 0.0, 0.0, steps * dt);
    xw.push_back({x, std::exp(s.log_weight)});
    ws.push_back(std::exp(s.log_weight));
  }
  const auto dens = colored_cooked_density(wa, 1 - wa, 1.0, -1.0, gamma, g.f(0.0, steps * dt));
  CHECK(num::ks_weighted(xw, [&](double x) { return dens.cdf(x); }) <
        num::ks_critical_one_sample(num::effective_sample_size(ws)));
}

TEST_CASE("commuting step is exact in the white limit", "[colored][white]") {
  const auto fam = ProjectorFamily::from_diagonal((RVec(3) << 0.0, 1.0, -1.0).finished());
  const auto w = CorrelationSpec::white();
  Vec psi0(3);
  psi0 << 0.5, 0.5, std::sqrt(0.5);
  const double gamma = 1.0, T = 0.4;
  // Composition: many small steps equal one step with the summed noise.
  const CounterRng rng(2, 0);
  const int steps = 400;
  const double dt = T / steps;
  csl::WeightedState many{psi0, 0.0};
  double B = 0;
  for (int k = 0; k < steps; ++k) {
    const double dB = wiener_increment(rng, Stream::noise, std::uint64_t(k), 0, gamma, dt);
    B += dB;
    many = commuting_nonwhite_step(std::move(many), nullptr, fam, RVec::Constant(1, dB), gamma, w, 0.0, k * dt, (k + 1) * dt);
  }
  const auto one = commuting_nonwhite_step({psi0, 0.0}, nullptr, fam, RVec::Constant(1, B), gamma, w, 0.0, 0.0, T);
  CHECK((many.psi - one.psi).norm() < 1e-12);
  CHECK_THAT(many.log_weight, WithinAbs(one.log_weight, 1e-10));
  // Shared-noise oracle: psi_k(0) exp(a_k B - gamma a_k^2 t) per eigenvalue.
  Vec exact(3);
  for (int k = 0; k < 3; ++k) {
    const double a = fam.eigenvalues()(0, k);
    exact[k] = psi0[k] * std::exp(a * B - gamma * a * a * T);
  }
  const Vec got = one.psi * std::exp(0.5 * one.log_weight);
  CHECK((got - exact).norm() < 1e-10);
  // The white linear stepper converges to it.
  std::vector<double> err;
  for (int n : {50, 400}) {
    const csl::CslStepper st{fam, csl::Form::linear, csl::Calculus::ito, gamma, T / n};
    csl::WeightedState s{psi0, 0.0};
    for (int k = 0; k < n; ++k) {
      double dB = 0;
      for (int r = 0; r < steps / n; ++r)
        dB += wiener_increment(rng, Stream::noise, std::uint64_t(k * (steps / n) + r), 0, gamma, dt);
      if (steps % n) FAIL("step counts must divide");
      s = csl::step_linear(std::move(s), nullptr, st, RVec::Constant(1, dB));
    }
    err.push_back((s.psi - one.psi).norm());
  }
  CHECK(err[1] <= err[0]);
  CHECK(err[1] < 0.005);
}

TEST_CASE("non-commuting Hamiltonians are rejected", "[colored][capability]") {
  const auto fam = ProjectorFamily::from_diagonal((RVec(2) << 1.0, -1.0).finished());
  Mat H = Mat::Zero(2, 2);
  H(0, 1) = H(1, 0) = 1.0;
  const Vec psi0 = Vec::Constant(2, std::sqrt(0.5));
  CHECK_THROWS_AS(commuting_nonwhite_step({psi0, 0.0}, &H, fam, RVec::Zero(1), 1.0, CorrelationSpec::white(), 0, 0, 0.1),
                  CapabilityError);
  // A commuting Hamiltonian only adds phases.
  Mat D = Mat::Zero(2, 2);
  D(0, 0) = 2.0;
  const auto s = commuting_nonwhite_step({psi0, 0.0}, &D, fam, RVec::Zero(1), 1.0, CorrelationSpec::white(), 0, 0, 0.5);
  CHECK_THAT(std::arg(s.psi[0] / s.psi[1]), WithinAbs(-1.0, 1e-12));
}
