#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "drm/csl.hpp"
#include "drm/errors.hpp"
#include "drm/noise.hpp"
#include "drm/numerics.hpp"
#include "drm/rng.hpp"
#include "drm/state.hpp"

namespace drm::colored {

enum class Kernel { white, gaussian, exponential, custom };

// Stationary correlation D(s) with unit integral, or a custom Gram matrix of
// cell integrals G_ij = int_cell_i int_cell_j D on a fixed grid of step dt.
// Channels are independent and share the kernel.
class CorrelationSpec {
public:
  static CorrelationSpec white() { return CorrelationSpec(Kernel::white, 0.0); }
  static CorrelationSpec gaussian(double tau) {
    require(tau > 0, "correlation time must be positive");
    return CorrelationSpec(Kernel::gaussian, tau);
  }
  static CorrelationSpec exponential(double tau) {
    require(tau > 0, "correlation time must be positive");
    return CorrelationSpec(Kernel::exponential, tau);
  }
  static CorrelationSpec custom(RMat gram, double dt) {
    require(dt > 0, "grid step must be positive");
    require(gram.rows() == gram.cols() && gram.rows() >= 1, "custom Gram matrix must be square");
    if ((gram - gram.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, gram.cwiseAbs().maxCoeff()))
      throw InvalidArgument("custom kernel is not symmetric");
    Eigen::SelfAdjointEigenSolver<RMat> es(gram, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8) throw InvalidArgument("kernel is not positive semidefinite");
    CorrelationSpec s(Kernel::custom, 0.0);
    s.gram_ = std::move(gram);
    s.dt_ = dt;
    return s;
  }

  Kernel kind() const { return kind_; }
  double tau() const { return tau_; }
  double grid_dt() const { return dt_; }
  const RMat& gram() const { return gram_; }

  std::string describe() const {
    switch (kind_) {
      case Kernel::white: return "white";
      case Kernel::gaussian: return "gaussian(tau=" + std::to_string(tau_) + ")";
      case Kernel::exponential: return "exponential(tau=" + std::to_string(tau_) + ")";
      case Kernel::custom: return "custom(n=" + std::to_string(gram_.rows()) + ")";
    }
    return "";
  }

  // D(s); the white kernel has no pointwise value.
  double D(double s) const {
    switch (kind_) {
      case Kernel::gaussian: return std::exp(-0.5 * s * s / (tau_ * tau_)) / (std::sqrt(2.0 * std::numbers::pi) * tau_);
      case Kernel::exponential: return std::exp(-std::abs(s) / tau_) / (2.0 * tau_);
      default: throw InvalidArgument("kernel has no pointwise value");
    }
  }

  // Even second antiderivative with K'' = D and K'(0) = 0.
  double K(double s) const {
    const double a = std::abs(s);
    switch (kind_) {
      case Kernel::white: return 0.5 * a;
      case Kernel::gaussian: return a * (num::normal_cdf(a / tau_) - 0.5) + tau_ * num::normal_pdf(a / tau_);
      case Kernel::exponential: return 0.5 * a + 0.5 * tau_ * std::exp(-a / tau_);
      default: throw InvalidArgument("custom kernel has no closed form");
    }
  }

  // f(t) = int_{t0}^{t} int_{t0}^{t} D. For custom kernels t - t0 must be a
  // whole number of grid steps.
  double f(double t0, double t) const {
    require(t >= t0, "t must not precede t0");
    if (!std::isfinite(t0)) return std::numeric_limits<double>::infinity();
    if (kind_ == Kernel::custom) {
      const double kf = (t - t0) / dt_;
      const auto k = Eigen::Index(std::llround(kf));
      require(std::abs(kf - double(k)) < 1e-9 && k <= gram_.rows(), "time outside the custom kernel grid");
      return k == 0 ? 0.0 : gram_.topLeftCorner(k, k).sum();
    }
    const double T = t - t0;
    if (kind_ == Kernel::exponential) return T - tau_ * (1.0 - std::exp(-T / tau_));  // cancellation-free form
    return 2.0 * (K(T) - K(0.0));
  }

  // df/dt = 2 int_0^{t-t0} D: the instantaneous reduction rate relative to
  // white noise. t0 = -infinity gives the stationary limit.
  double rate_factor(double t0, double t) const {
    switch (kind_) {
      case Kernel::white: return 1.0;
      case Kernel::gaussian:
        return std::isfinite(t0) ? 2.0 * num::normal_cdf((t - t0) / tau_) - 1.0 : 1.0;
      case Kernel::exponential: return std::isfinite(t0) ? -std::expm1(-(t - t0) / tau_) : 1.0;
      case Kernel::custom: {
        const double kf = (t - t0) / dt_;
        const auto k = Eigen::Index(std::llround(kf));
        require(k >= 1 && k <= gram_.rows(), "time outside the custom kernel grid");
        // Discrete derivative of f over the last cell.
        return (gram_.topLeftCorner(k, k).sum() - gram_.topLeftCorner(k - 1, k - 1).sum()) / dt_;
      }
    }
    return 1.0;
  }

  // Covariance of the integrals over two cells of width h whose left edges are
  // `lag` apart (gamma = 1).
  double cell_covariance(double lag, double h) const {
    if (kind_ == Kernel::white) return std::abs(lag) < 0.5 * h ? h : 0.0;
    return K(lag + h) - 2.0 * K(lag) + K(lag - h);
  }

private:
  CorrelationSpec(Kernel k, double tau) : kind_(k), tau_(tau) {}
  Kernel kind_ = Kernel::white;
  double tau_ = 0.0;
  RMat gram_;
  double dt_ = 0.0;
};

// f(t) by nested adaptive quadrature of D over the square [t0, t]^2.
inline double double_integral_quadrature(const CorrelationSpec& spec, double t0, double t, double tol = 1e-12) {
  require(spec.kind() == Kernel::gaussian || spec.kind() == Kernel::exponential,
          "quadrature needs a pointwise kernel");
  auto inner = [&](double s1) {
    auto g = [&](double s2) { return spec.D(s1 - s2); };
    // Split at the peak s2 = s1.
    return num::adaptive_simpson(g, t0, s1, tol * 0.1) + num::adaptive_simpson(g, s1, t, tol * 0.1);
  };
  return num::adaptive_simpson(inner, t0, t, tol);
}

// Cell Gram matrix gamma_free G_ij for n cells of width dt.
inline RMat cell_gram(const CorrelationSpec& spec, Eigen::Index n, double dt) {
  if (spec.kind() == Kernel::custom) {
    require(std::abs(spec.grid_dt() - dt) < 1e-12 * dt && n <= spec.gram().rows(),
            "custom kernel grid does not match the request");
    return spec.gram().topLeftCorner(n, n);
  }
  RVec row(n);
  for (Eigen::Index k = 0; k < n; ++k) row[k] = spec.cell_covariance(double(k) * dt, dt);
  RMat G(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) G(i, j) = row[std::abs(i - j)];
  return G;
}

// Square-root factor of the cell Gram matrix: Cholesky when it succeeds,
// otherwise the symmetric eigen-decomposition (smooth kernels are numerically
// rank deficient). Computed once per (spec, n, dt), shared read-only.
class PathFactor {
public:
  PathFactor(const CorrelationSpec& spec, Eigen::Index steps, double dt) : spec_(spec), dt_(dt) {
    require(steps >= 1 && dt > 0, "invalid path grid");
    const RMat G = cell_gram(spec, steps, dt);
    const double scale = std::max(1e-300, G.diagonal().maxCoeff());
    Eigen::LLT<RMat> llt(G);
    if (llt.info() == Eigen::Success) {
      L_ = llt.matrixL();
      return;
    }
    Eigen::SelfAdjointEigenSolver<RMat> es(G);
    if (es.eigenvalues().minCoeff() < -1e-8 * scale) throw InvalidArgument("kernel is not positive semidefinite");
    L_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  const RMat& L() const { return L_; }
  Eigen::Index steps() const { return L_.rows(); }
  double dt() const { return dt_; }
  const CorrelationSpec& spec() const { return spec_; }

private:
  CorrelationSpec spec_;
  double dt_;
  RMat L_;
};

struct ColoredPathSpec {
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
  double dt = 0.01;
  Stream stream = Stream::noise;
};

namespace detail {
inline NoisePath make_path(const ColoredPathSpec& ps, double gamma, const CorrelationSpec& spec) {
  NoisePath p;
  p.seed = ps.seed;
  p.trajectory = ps.trajectory;
  p.dt = ps.dt;
  p.gamma = gamma;
  p.kind = spec.kind() == Kernel::white ? NoiseKind::white : NoiseKind::colored;
  p.correlation = spec.kind() == Kernel::white ? "" : spec.describe();
  return p;
}
}  // namespace detail

// Exact sampler for the exponential kernel: joint Gaussian update of the
// Ornstein-Uhlenbeck value w and its cell integral, started stationary.
inline NoisePath sample_exponential_path(double tau, const ColoredPathSpec& ps, Eigen::Index steps,
                                         Eigen::Index channels, double gamma) {
  require(tau > 0 && gamma >= 0 && ps.dt > 0, "invalid exponential path parameters");
  require(steps >= 1 && channels >= 1, "at least one step and channel required");
  NoisePath p = detail::make_path(ps, gamma, CorrelationSpec::exponential(tau));
  p.increments.resize(steps, channels);
  p.values.resize(steps, channels);
  const CounterRng rng(ps.seed, ps.trajectory);
  const double h = ps.dt, th = 1.0 / tau;
  const double var_w = gamma / (2.0 * tau);  // stationary variance gamma D(0)
  const double rho = std::exp(-th * h);
  const double em = -std::expm1(-th * h);  // 1 - rho
  const double var_w1 = var_w * (1.0 - rho * rho);
  // 2 th h - 3 + 4 rho - rho^2, evaluated stably for small th h.
  const double x = th * h;
  const double poly = x < 1e-3 ? (2.0 / 3.0) * x * x * x - 0.5 * x * x * x * x : 2.0 * x - 3.0 + 4.0 * rho - rho * rho;
  const double var_i = var_w / (th * th) * poly;
  const double cov = var_w / th * em * em;
  // Conditional on w: (w', I) Gaussian; factor as w' then I | w'.
  const double b = var_w1 > 0 ? cov / var_w1 : 0.0;
  const double var_i_given = std::max(0.0, var_i - b * cov);
  for (Eigen::Index c = 0; c < channels; ++c) {
    double w = std::sqrt(var_w) * rng.normal(Stream::init, std::uint32_t(c), 0);
    for (Eigen::Index k = 0; k < steps; ++k) {
      const auto [z1, z2] = rng.normal2(ps.stream, std::uint32_t(c), std::uint64_t(k));
      const double dw = std::sqrt(var_w1) * z1;
      const double w1 = rho * w + dw;
      const double I = w * tau * em + b * dw + std::sqrt(var_i_given) * z2;
      p.increments(k, c) = I;
      p.values(k, c) = w1;
      w = w1;
    }
  }
  return p;
}

// Cell integrals of a stationary Gaussian path via the shared Cholesky factor.
inline NoisePath sample_colored_path(const PathFactor& factor, const ColoredPathSpec& ps, Eigen::Index channels,
                                     double gamma) {
  require(std::abs(factor.dt() - ps.dt) <= 1e-12 * ps.dt, "path step does not match the factor");
  require(channels >= 1 && gamma >= 0, "invalid path parameters");
  NoisePath p = detail::make_path(ps, gamma, factor.spec());
  const Eigen::Index n = factor.steps();
  p.increments.resize(n, channels);
  const CounterRng rng(ps.seed, ps.trajectory);
  RVec z(n);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (Eigen::Index k = 0; k < n; ++k) z[k] = rng.normal(ps.stream, std::uint32_t(c), std::uint64_t(k));
    p.increments.col(c) = std::sqrt(gamma) * (factor.L() * z);
  }
  return p;
}

// Dispatching entry point: white -> Wiener, exponential -> exact recursion,
// otherwise Cholesky.
inline NoisePath sample_colored_path(const CorrelationSpec& spec, Eigen::Index steps, Eigen::Index channels,
                                     double gamma, const ColoredPathSpec& ps) {
  switch (spec.kind()) {
    case Kernel::white: return sample_wiener(WienerSpec{ps.seed, ps.trajectory, ps.dt, ps.stream}, steps, channels, gamma);
    case Kernel::exponential: return sample_exponential_path(spec.tau(), ps, steps, channels, gamma);
    default: return sample_colored_path(PathFactor(spec, steps, ps.dt), ps, channels, gamma);
  }
}

// Log of the damping of <alpha|rho(t)|beta>: -(gamma/2) |a_alpha - a_beta|^2 f.
inline double colored_damping_exponent(const ProjectorFamily& f, Eigen::Index alpha, Eigen::Index beta,
                                       const CorrelationSpec& spec, double gamma, double t0, double t) {
  const double d2 = (f.eigenvalues().col(alpha) - f.eigenvalues().col(beta)).squaredNorm();
  if (d2 == 0.0) return 0.0;
  return -0.5 * gamma * d2 * spec.f(t0, t);
}

inline double colored_damping_factor(const ProjectorFamily& f, Eigen::Index alpha, Eigen::Index beta,
                                     const CorrelationSpec& spec, double gamma, double t0, double t) {
  return std::exp(colored_damping_exponent(f, alpha, beta, spec, gamma, t0, t));
}

// Instantaneous damping rate of <alpha|rho|beta> at time t.
inline double colored_damping_rate(const ProjectorFamily& f, Eigen::Index alpha, Eigen::Index beta,
                                   const CorrelationSpec& spec, double gamma, double t0, double t) {
  const double d2 = (f.eigenvalues().col(alpha) - f.eigenvalues().col(beta)).squaredNorm();
  return 0.5 * gamma * d2 * spec.rate_factor(t0, t);
}

// Density matrix with all off-diagonal blocks damped, H disregarded.
inline DensityMatrix colored_damp(const DensityMatrix& rho, const ProjectorFamily& f, const CorrelationSpec& spec,
                                  double gamma, double t0, double t) {
  require(rho.dim() == f.dim(), "density matrix dimension does not match projector family");
  Mat out = Mat::Zero(rho.dim(), rho.dim());
  for (Eigen::Index a = 0; a < f.components(); ++a)
    for (Eigen::Index b = 0; b < f.components(); ++b)
      out += colored_damping_factor(f, a, b, spec, gamma, t0, t) * f.projector(a) * rho.rho * f.projector(b);
  return DensityMatrix(out);
}

inline csl::TwoLevelDensity colored_cooked_density(double w_alpha, double w_beta, double a, double b, double gamma,
                                                   double f) {
  require(f >= 0, "f(t) must be nonnegative");
  require(w_alpha >= 0 && w_beta >= 0 && std::abs(w_alpha + w_beta - 1.0) <= 1e-12, "weights must sum to one");
  return {w_alpha, w_beta, a, b, gamma, f};
}

inline double commutator_norm(const Mat& H, const ProjectorFamily& f) {
  double m = 0.0;
  for (Eigen::Index c = 0; c < f.channels(); ++c) {
    const Mat& A = f.op(c);
    m = std::max(m, (H * A - A * H).cwiseAbs().maxCoeff());
  }
  return m;
}

// Exact linear colored evolution from t_from to t_to when [H, A] = 0:
// component sigma gains exp(a_sigma . dx - gamma |a_sigma|^2 (f(t_to) - f(t_from))),
// dx the noise integral over the interval. The direction is renormalized and
// log|psi|^2 accumulated as the cooked log-weight.
inline csl::WeightedState commuting_nonwhite_step(csl::WeightedState s, const Mat* H, const ProjectorFamily& f,
                                                  const RVec& dx, double gamma, const CorrelationSpec& spec,
                                                  double t0, double t_from, double t_to) {
  require(dx.size() == f.channels(), "one noise integral per channel required");
  require(s.psi.size() == f.dim(), "state dimension does not match projector family");
  require(t0 <= t_from && t_from <= t_to, "times must satisfy t0 <= t_from <= t_to");
  const bool hamiltonian = H && H->size() > 0;
  if (hamiltonian && commutator_norm(*H, f) > 1e-12)
    throw CapabilityError("non-commuting Hamiltonian: colored dynamics has no closed form");
  const double df = spec.f(t0, t_to) - spec.f(t0, t_from);
  const RMat& a = f.eigenvalues();
  Vec out = Vec::Zero(s.psi.size());
  // Exponents are shifted by their maximum before exponentiation.
  RVec ex(f.components());
  for (Eigen::Index sg = 0; sg < f.components(); ++sg) ex[sg] = a.col(sg).dot(dx) - gamma * a.col(sg).squaredNorm() * df;
  const double mx = ex.maxCoeff();
  if (f.is_diagonal()) {
    RVec fac(f.components());
    for (Eigen::Index sg = 0; sg < f.components(); ++sg) fac[sg] = std::exp(ex[sg] - mx);
    for (Eigen::Index k = 0; k < s.psi.size(); ++k) {
      Eigen::Index sg = 0;
      for (; sg < f.components(); ++sg)
        if (std::abs(f.projector(sg)(k, k)) > 0.5) break;
      out[k] = fac[sg] * s.psi[k];
    }
  } else {
    for (Eigen::Index sg = 0; sg < f.components(); ++sg) out += std::exp(ex[sg] - mx) * (f.projector(sg) * s.psi);
  }
  if (hamiltonian) {
    Eigen::SelfAdjointEigenSolver<Mat> es(*H);
    const Vec ph = (-I * es.eigenvalues().cast<cplx>() * (t_to - t_from)).array().exp();
    out = es.eigenvectors() * ph.cwiseProduct(es.eigenvectors().adjoint() * out);
  }
  const double n2 = out.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw NumericalError("state norm collapsed to zero or overflowed");
  s.log_weight += std::log(n2) + 2.0 * mx;
  s.psi = out / std::sqrt(n2);
  return s;
}

}  // namespace drm::colored
