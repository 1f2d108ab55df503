#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drm/errors.hpp"

namespace drm {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

inline constexpr cplx I{0.0, 1.0};

inline bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

// Complex amplitudes on a uniform periodic 1D grid, x_j = x0 + j dx.
struct GridWavefunction {
  Vec psi;
  double dx = 1.0;
  double x0 = 0.0;
  double mass = 1.0;

  GridWavefunction() = default;
  GridWavefunction(Vec amplitudes, double dx_, double x0_, double mass_)
      : psi(std::move(amplitudes)), dx(dx_), x0(x0_), mass(mass_) {
    validate();
  }

  void validate() const {
    require(psi.size() >= 8 && is_power_of_two(std::size_t(psi.size())),
            "grid size must be a power of two and at least 8");
    require(dx > 0, "grid spacing must be positive");
    require(mass > 0, "particle mass must be positive");
    require(psi.allFinite(), "grid amplitudes must be finite");
  }

  std::size_t size() const { return std::size_t(psi.size()); }
  double x(std::size_t j) const { return x0 + double(j) * dx; }
  double length() const { return double(psi.size()) * dx; }
  double norm_sq() const { return psi.squaredNorm() * dx; }

  // Signed separation x_a - x_b folded onto the periodic cell.
  double periodic_delta(double xa, double xb) const {
    const double L = length();
    double d = std::fmod(xa - xb, L);
    if (d >= 0.5 * L) d -= L;
    if (d < -0.5 * L) d += L;
    return d;
  }

  // Builds a grid state from a callable psi(x).
  template <class F>
  static GridWavefunction sample(F&& f, std::size_t n, double dx, double x0, double mass) {
    Vec v(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) v[Eigen::Index(j)] = cplx(f(x0 + double(j) * dx));
    return GridWavefunction(std::move(v), dx, x0, mass);
  }
};

// Normalized Gaussian packet exp(-(x-c)^2/(4 s^2) + i k x).
inline GridWavefunction gaussian_packet(std::size_t n, double dx, double x0, double mass,
                                        double center, double sigma, double k0 = 0.0) {
  const double pref = std::pow(2.0 * std::numbers::pi * sigma * sigma, -0.25);
  return GridWavefunction::sample(
      [&](double x) {
        const double u = x - center;
        return pref * std::exp(cplx(-u * u / (4.0 * sigma * sigma), k0 * x));
      },
      n, dx, x0, mass);
}

// Vector in a small Hilbert space with optional basis labels.
struct FiniteState {
  Vec amp;
  std::vector<std::string> labels;

  FiniteState() = default;
  explicit FiniteState(Vec a, std::vector<std::string> l = {}) : amp(std::move(a)), labels(std::move(l)) {
    validate();
  }
  FiniteState(std::initializer_list<cplx> a) : amp(Eigen::Index(a.size())) {
    Eigen::Index i = 0;
    for (auto v : a) amp[i++] = v;
    validate();
  }

  void validate() const {
    require(amp.size() >= 2, "finite state dimension must be at least 2");
    require(labels.empty() || labels.size() == std::size_t(amp.size()),
            "label count must match dimension");
  }

  Eigen::Index dim() const { return amp.size(); }
  double norm_sq() const { return amp.squaredNorm(); }
};

enum class Representation { finite, grid_kernel };

// Density matrix. For grid kernels entries are rho(x_i, x_j) and the trace
// carries a factor dx.
struct DensityMatrix {
  Mat rho;
  Representation rep = Representation::finite;
  double dx = 1.0;
  double x0 = 0.0;

  DensityMatrix() = default;
  explicit DensityMatrix(Mat m, Representation r = Representation::finite, double dx_ = 1.0,
                         double x0_ = 0.0)
      : rho(std::move(m)), rep(r), dx(dx_), x0(x0_) {}

  Eigen::Index dim() const { return rho.rows(); }
  cplx trace() const { return rho.trace() * dx; }
  double purity() const { return (rho * rho).trace().real() * dx * dx; }
  double hermiticity_error() const { return (rho - rho.adjoint()).cwiseAbs().maxCoeff(); }
  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (rho + rho.adjoint()) * dx, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  void validate(double herm_tol = 1e-10, double trace_tol = 1e-10, double eig_tol = -1e-8) const {
    require(rho.rows() == rho.cols(), "density matrix must be square");
    require(hermiticity_error() <= herm_tol, "density matrix is not Hermitian");
    require(std::abs(trace() - 1.0) <= trace_tol, "density matrix trace differs from one");
    require(min_eigenvalue() >= eig_tol, "density matrix has a negative eigenvalue");
  }
};

inline double frobenius(const Mat& a, const Mat& b) { return (a - b).norm(); }

// A = sum_sigma a_sigma P_sigma for each channel, with commuting projectors.
// When every projector is diagonal in the computational basis the family
// keeps `label[k]` = index of the projector containing basis state k.
class ProjectorFamily {
public:
  ProjectorFamily() = default;

  // eigenvalues(c, s): eigenvalue of projector s in channel c.
  ProjectorFamily(std::vector<Mat> projectors, RMat eigenvalues)
      : P_(std::move(projectors)), a_(std::move(eigenvalues)) {
    build();
  }

  // Diagonal family: basis state k belongs to projector label[k].
  static ProjectorFamily diagonal(const std::vector<int>& label, const RMat& eigenvalues) {
    require(!label.empty(), "empty label list");
    const int n = int(label.size());
    const int ns = int(eigenvalues.cols());
    std::vector<Mat> P(std::size_t(ns), Mat::Zero(n, n));
    for (int k = 0; k < n; ++k) {
      require(label[std::size_t(k)] >= 0 && label[std::size_t(k)] < ns, "projector label out of range");
      P[std::size_t(label[std::size_t(k)])](k, k) = 1.0;
    }
    return ProjectorFamily(std::move(P), eigenvalues);
  }

  // One channel, one projector per basis state, A = diag(a).
  static ProjectorFamily from_diagonal(const RVec& a) {
    std::vector<int> label(std::size_t(a.size()));
    for (Eigen::Index k = 0; k < a.size(); ++k) label[std::size_t(k)] = int(k);
    return diagonal(label, a.transpose());
  }

  // Several channels, each a diagonal operator; rows of `diag` are channels.
  // Basis states with identical eigenvalue columns share a projector.
  static ProjectorFamily from_channel_diagonals(const RMat& diag) {
    const Eigen::Index n = diag.cols();
    std::vector<int> label(std::size_t(n), -1);
    std::vector<Eigen::Index> reps;
    for (Eigen::Index k = 0; k < n; ++k) {
      for (std::size_t r = 0; r < reps.size(); ++r)
        if ((diag.col(k) - diag.col(reps[r])).cwiseAbs().maxCoeff() == 0.0) {
          label[std::size_t(k)] = int(r);
          break;
        }
      if (label[std::size_t(k)] < 0) {
        label[std::size_t(k)] = int(reps.size());
        reps.push_back(k);
      }
    }
    RMat a(diag.rows(), Eigen::Index(reps.size()));
    for (std::size_t r = 0; r < reps.size(); ++r) a.col(Eigen::Index(r)) = diag.col(reps[r]);
    return diagonal(label, a);
  }

  Eigen::Index dim() const { return P_.empty() ? 0 : P_.front().rows(); }
  Eigen::Index channels() const { return a_.rows(); }
  Eigen::Index components() const { return a_.cols(); }
  const Mat& projector(Eigen::Index s) const { return P_[std::size_t(s)]; }
  const RMat& eigenvalues() const { return a_; }
  double eigenvalue(Eigen::Index channel, Eigen::Index s) const { return a_(channel, s); }
  const Mat& op(Eigen::Index channel) const { return A_[std::size_t(channel)]; }
  const Mat& op_sq(Eigen::Index channel) const { return A2_[std::size_t(channel)]; }
  bool is_diagonal() const { return diag_.has_value(); }
  // Diagonal of A_channel (only for diagonal families).
  const RMat& diagonals() const { return *diag_; }
  double max_abs_eigenvalue() const { return a_.cwiseAbs().maxCoeff(); }

  // z_sigma = <psi|P_sigma|psi>.
  RVec weights(const Vec& psi) const {
    RVec z(components());
    if (diag_) {
      z.setZero();
      for (Eigen::Index k = 0; k < psi.size(); ++k) z[label_[std::size_t(k)]] += std::norm(psi[k]);
    } else {
      for (Eigen::Index s = 0; s < components(); ++s)
        z[s] = psi.dot(P_[std::size_t(s)] * psi).real();
    }
    return z;
  }

  // Returns a copy with channel c scaled by factors[c].
  ProjectorFamily scaled(const RVec& factors) const {
    require(factors.size() == channels(), "one scale factor per channel required");
    RMat a = a_;
    for (Eigen::Index c = 0; c < channels(); ++c) a.row(c) *= factors[c];
    return ProjectorFamily(P_, a);
  }

private:
  void build() {
    require(!P_.empty(), "projector family needs at least one projector");
    require(Eigen::Index(P_.size()) == a_.cols(), "one eigenvalue column per projector required");
    require(a_.rows() >= 1, "at least one noise channel required");
    const Eigen::Index n = P_.front().rows();
    Mat sum = Mat::Zero(n, n);
    for (std::size_t s = 0; s < P_.size(); ++s) {
      const Mat& P = P_[s];
      require(P.rows() == n && P.cols() == n, "projector dimensions differ");
      require((P - P.adjoint()).cwiseAbs().maxCoeff() <= 1e-12, "projector is not self-adjoint");
      require((P * P - P).cwiseAbs().maxCoeff() <= 1e-12, "projector is not idempotent");
      for (std::size_t t = 0; t < s; ++t)
        require((P * P_[t]).cwiseAbs().maxCoeff() <= 1e-12, "projectors are not orthogonal");
      sum += P;
    }
    require((sum - Mat::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-12,
            "projectors do not sum to the identity");
    for (Eigen::Index s = 0; s < a_.cols(); ++s)
      for (Eigen::Index t = 0; t < s; ++t)
        require((a_.col(s) - a_.col(t)).cwiseAbs().maxCoeff() > 0.0,
                "degenerate eigenvalues: two projectors share all channel eigenvalues");

    A_.assign(std::size_t(a_.rows()), Mat::Zero(n, n));
    for (Eigen::Index c = 0; c < a_.rows(); ++c)
      for (std::size_t s = 0; s < P_.size(); ++s) A_[std::size_t(c)] += a_(c, Eigen::Index(s)) * P_[s];
    A2_.clear();
    for (const auto& A : A_) A2_.push_back(A * A);

    bool diag = true;
    label_.assign(std::size_t(n), -1);
    for (std::size_t s = 0; s < P_.size() && diag; ++s) {
      const Mat& P = P_[s];
      Mat off = P;
      off.diagonal().setZero();
      if (off.cwiseAbs().maxCoeff() > 0.0) diag = false;
      for (Eigen::Index k = 0; k < n && diag; ++k)
        if (std::abs(P(k, k) - 1.0) < 1e-12) label_[std::size_t(k)] = int(s);
    }
    if (diag) {
      RMat d(a_.rows(), n);
      for (Eigen::Index c = 0; c < a_.rows(); ++c)
        for (Eigen::Index k = 0; k < n; ++k) d(c, k) = A_[std::size_t(c)](k, k).real();
      diag_ = d;
    } else {
      label_.clear();
    }
  }

  std::vector<Mat> P_;
  RMat a_;
  std::vector<Mat> A_, A2_;
  std::optional<RMat> diag_;
  std::vector<int> label_;
};

struct HamiltonianSpec {
  enum class Kind { none, free, harmonic, matrix };
  Kind kind = Kind::none;
  double omega = 0.0;   // harmonic frequency
  double center = 0.0;  // harmonic well center
  Mat H;                // matrix kind

  static HamiltonianSpec none() { return {}; }
  static HamiltonianSpec free() { return {Kind::free, 0.0, 0.0, {}}; }
  static HamiltonianSpec harmonic(double w, double c = 0.0) {
    require(w > 0, "harmonic frequency must be positive");
    return {Kind::harmonic, w, c, {}};
  }
  static HamiltonianSpec matrix(Mat h) {
    require(h.rows() == h.cols(), "Hamiltonian matrix must be square");
    require((h - h.adjoint()).cwiseAbs().maxCoeff() <= 1e-12, "Hamiltonian matrix is not Hermitian");
    return {Kind::matrix, 0.0, 0.0, std::move(h)};
  }
};

inline GridWavefunction normalize(GridWavefunction s) {
  const double n2 = s.norm_sq();
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw InvalidArgument("degenerate state");
  s.psi /= std::sqrt(n2);
  return s;
}

inline FiniteState normalize(FiniteState s) {
  const double n2 = s.norm_sq();
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw InvalidArgument("degenerate state");
  s.amp /= std::sqrt(n2);
  return s;
}

// <A_channel> = sum_sigma a_sigma z_sigma.
inline double expectation(const FiniteState& s, const ProjectorFamily& f, Eigen::Index channel = 0) {
  require(s.dim() == f.dim(), "dimension mismatch between state and projector family");
  require(channel >= 0 && channel < f.channels(), "channel index out of range");
  return f.eigenvalues().row(channel).dot(f.weights(s.amp));
}

inline double expectation(const FiniteState& s, const Mat& op) {
  require(op.rows() == s.dim() && op.cols() == s.dim(), "dimension mismatch between state and operator");
  return s.amp.dot(op * s.amp).real();
}

// <x^order> on the grid (x measured from the origin, not folded).
inline double expectation(const GridWavefunction& g, int order) {
  require(order >= 0, "moment order must be nonnegative");
  double acc = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) acc += std::norm(g.psi[Eigen::Index(j)]) * std::pow(g.x(j), order);
  return acc * g.dx;
}

inline DensityMatrix density_from_ensemble(const std::vector<std::pair<FiniteState, double>>& members) {
  if (members.empty()) throw InvalidArgument("empty ensemble");
  const Eigen::Index d = members.front().first.dim();
  double wsum = 0.0;
  Mat rho = Mat::Zero(d, d);
  for (const auto& [s, w] : members) {
    require(s.dim() == d, "ensemble members have different dimensions");
    require(w >= 0.0, "ensemble weights must be nonnegative");
    const FiniteState n = normalize(s);
    rho += w * n.amp * n.amp.adjoint();
    wsum += w;
  }
  require(std::abs(wsum - 1.0) <= 1e-9, "ensemble weights must sum to one");
  return DensityMatrix(rho);
}

inline DensityMatrix density_from_ensemble(const std::vector<std::pair<GridWavefunction, double>>& members) {
  if (members.empty()) throw InvalidArgument("empty ensemble");
  const auto& g0 = members.front().first;
  const Eigen::Index n = Eigen::Index(g0.size());
  double wsum = 0.0;
  Mat rho = Mat::Zero(n, n);
  for (const auto& [s, w] : members) {
    require(Eigen::Index(s.size()) == n, "ensemble members have different grid sizes");
    require(w >= 0.0, "ensemble weights must be nonnegative");
    const GridWavefunction g = normalize(s);
    rho += w * g.psi * g.psi.adjoint();
    wsum += w;
  }
  require(std::abs(wsum - 1.0) <= 1e-9, "ensemble weights must sum to one");
  return DensityMatrix(rho, Representation::grid_kernel, g0.dx, g0.x0);
}

}  // namespace drm
