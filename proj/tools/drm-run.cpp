// drm-run: batch runner for the dynamical-reduction experiments.
//
// Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 numerical
// abort, 4 statistical precondition not met.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>
#include <variant>

#include "config.hpp"
#include "drm/drm.hpp"

#ifndef DRM_VERSION
#define DRM_VERSION "0.0.0"
#endif
#ifndef DRM_DATA_DIR
#define DRM_DATA_DIR "data"
#endif

using namespace drm;
using drm::cli::Config;
using drm::cli::ConfigError;
using drm::cli::Params;
using drm::cli::ParamSpec;
namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------------ results

using Cell = std::variant<double, std::string>;

struct Table {
  std::vector<io::Column> cols;
  std::vector<std::vector<Cell>> rows;
  void add(std::vector<Cell> r) {
    require(r.size() == cols.size(), "row width does not match the header");
    rows.push_back(std::move(r));
  }
};

struct RunContext {
  std::uint64_t seed = 1;
  std::size_t trajectories = 1000;
  unsigned threads = 1;
  fs::path config_dir;
};

// Runs fn(i) for i in [0, n) over `threads` workers. fn must only write slot i.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex m;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(m);
        if (!err) err = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ------------------------------------------------------------------ helpers

constexpr double kStability = 0.01;  // gamma max|a|^2 dt bound

ProjectorFamily family_for(const std::vector<double>& weights, const std::string& eig, const std::string& key) {
  RVec a(Eigen::Index(weights.size()));
  if (eig == "auto") {
    // 1, -1 for two outcomes, else 0, 1, 2, ...
    for (Eigen::Index k = 0; k < a.size(); ++k) a[k] = weights.size() == 2 ? 1.0 - 2.0 * double(k) : double(k);
  } else {
    const auto v = cli::parse_list(key, eig);
    if (v.size() != weights.size()) throw ConfigError("key '" + key + "': one eigenvalue per weight required");
    for (Eigen::Index k = 0; k < a.size(); ++k) a[k] = v[std::size_t(k)];
  }
  return ProjectorFamily::from_diagonal(a);
}

Vec amplitudes_for(const std::vector<double>& w, const std::string& key) {
  Vec v(Eigen::Index(w.size()));
  double s = 0;
  for (double x : w) {
    if (x < 0) throw ConfigError("key '" + key + "': weights must be nonnegative");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("key '" + key + "': weights must sum to 1");
  for (std::size_t k = 0; k < w.size(); ++k) v[Eigen::Index(k)] = std::sqrt(w[k]);
  return v;
}

double stability_number(const ProjectorFamily& f, double gamma, double dt) {
  const double a = f.max_abs_eigenvalue();
  return gamma * a * a * dt;
}

GridWavefunction packets(const Params& p) {
  const long n = p.integer("grid.n");
  const double dx = p.num("grid.dx"), a = p.num("separation"), s = p.num("sigma"), wl = p.num("weight_left");
  if (n < 8 || dx <= 0) throw ConfigError("grid needs n >= 8 and dx > 0");
  if (wl < 0 || wl > 1) throw ConfigError("key 'params.weight_left' must lie in [0, 1]");
  const double x0 = -0.5 * double(n) * dx, m = p.num("mass");
  const auto l = gaussian_packet(std::size_t(n), dx, x0, m, -a, s), r = gaussian_packet(std::size_t(n), dx, x0, m, a, s);
  GridWavefunction g = l;
  g.psi = std::sqrt(wl) * l.psi + std::sqrt(1.0 - wl) * r.psi;
  return normalize(g);
}

// Free spreading of the widest packet by time t (hbar = 1) against the grid half-width.
std::vector<std::string> grid_diagnostics(const Params& p, const std::string& time_key) {
  std::vector<std::string> d;
  const double half = 0.5 * p.num("grid.n") * p.num("grid.dx");
  const double s = p.num("sigma"), t = p.num(time_key);
  const double st = s * std::hypot(1.0, t / (2.0 * p.num("mass") * s * s));
  const double reach = std::abs(p.num("separation")) + 8.0 * st;
  if (reach >= half)
    d.push_back("grid: packets reach " + io::fmt(reach) + " by t = " + io::fmt(t) + " but the half-width is " +
                io::fmt(half) + "; expect a leakage abort");
  return d;
}

const std::vector<ParamSpec> kGrid{{"grid.n", "256"}, {"grid.dx", "0.1"}, {"mass", "1"},    {"separation", "3"},
                                   {"sigma", "0.5"},  {"weight_left", "0.5"}};

std::vector<ParamSpec> with(std::vector<ParamSpec> a, const std::vector<ParamSpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// ------------------------------------------------------------------ experiments

struct Experiment {
  std::string name;
  std::vector<ParamSpec> schema;
  std::function<std::vector<std::string>(const Params&)> diagnose;  // dry-run checks
  std::function<Table(const Params&, const RunContext&)> run;
};

Table run_csl_born(const Params& p, const RunContext& ctx) {
  const auto w = p.list("weights");
  const auto fam = family_for(w, p.str("eigenvalues"), "params.eigenvalues");
  const Vec psi0 = amplitudes_for(w, "params.weights");
  const csl::CslStepper st{fam, csl::Form::nonlinear, csl::Calculus::ito, p.num("gamma"), p.num("dt")};
  const long steps = p.integer("max_steps");
  const double tol = p.num("collapse_tol");
  st.validate();
  std::vector<int> outcome(ctx.trajectories);
  parallel_for(ctx.trajectories, ctx.threads, [&](std::size_t i) {
    outcome[i] = csl::run_nonlinear(psi0, nullptr, st, steps, ctx.seed, i, Stream::noise, tol).second.outcome;
  });
  Table t{{{"outcome", "1"}, {"count", "1"}, {"frequency", "1"}, {"born_weight", "1"}, {"stderr", "1"},
           {"within_3sigma", "1"}}, {}};
  const double n = double(ctx.trajectories);
  for (std::size_t k = 0; k <= w.size(); ++k) {
    // The last row counts trajectories that did not collapse.
    const int label = k == w.size() ? -1 : int(k);
    const double c = double(std::count(outcome.begin(), outcome.end(), label));
    const double born = k == w.size() ? 0.0 : w[k];
    const double se = std::sqrt(born * (1 - born) / n);
    t.add({double(label), c, c / n, born, se, double(std::abs(c / n - born) <= 3 * se + 1e-15)});
  }
  return t;
}

std::vector<std::string> diagnose_csl(const Params& p) {
  std::vector<std::string> d;
  const auto fam = family_for(p.list("weights"), p.str("eigenvalues"), "params.eigenvalues");
  amplitudes_for(p.list("weights"), "params.weights");
  const double s = stability_number(fam, p.num("gamma"), p.num("dt"));
  if (s > kStability)
    d.push_back("stability: gamma max|a|^2 dt = " + io::fmt(s) + " violates the criterion gamma max|a|^2 dt <= " +
                io::fmt(kStability));
  return d;
}

Table run_csl_equivalence(const Params& p, const RunContext& ctx) {
  const auto w = p.list("weights");
  const auto fam = family_for(w, p.str("eigenvalues"), "params.eigenvalues");
  const Vec psi0 = amplitudes_for(w, "params.weights");
  const double gamma = p.num("gamma"), dt = p.num("dt");
  const long steps = p.integer("steps");
  const csl::CslStepper lin{fam, csl::Form::linear, csl::Calculus::ito, gamma, dt};
  const csl::CslStepper nl{fam, csl::Form::nonlinear, csl::Calculus::ito, gamma, dt};
  nl.validate();
  csl::SmcOptions o;
  o.trajectories = ctx.trajectories;
  o.steps = steps;
  o.seed = ctx.seed;
  const auto ens = csl::run_linear_guided(psi0, nullptr, lin, o);
  const std::size_t K = w.size();
  auto argmax = [&](const Vec& v) {
    Eigen::Index k;
    fam.weights(v).maxCoeff(&k);
    return std::size_t(k);
  };
  std::vector<double> pl(K, 0.0), pn(K, 0.0);
  for (const auto& m : ens.members) pl[argmax(m.psi)] += 1.0 / double(ctx.trajectories);
  std::vector<std::size_t> out(ctx.trajectories);
  parallel_for(ctx.trajectories, ctx.threads, [&](std::size_t i) {
    out[i] = argmax(csl::run_nonlinear(psi0, nullptr, nl, steps, ctx.seed ^ 0x5bd1e995u, i).first);
  });
  for (auto k : out) pn[k] += 1.0 / double(ctx.trajectories);
  double tv = 0;
  for (std::size_t k = 0; k < K; ++k) tv += 0.5 * std::abs(pl[k] - pn[k]);
  Table t{{{"outcome", "1"}, {"born_weight", "1"}, {"linear_cooked", "1"}, {"nonlinear", "1"}, {"total_variation", "1"}}, {}};
  for (std::size_t k = 0; k < K; ++k) t.add({double(k), w[k], pl[k], pn[k], tv});
  return t;
}

Table run_csl_discrete(const Params& p, const RunContext& ctx) {
  const auto cfg = p.table("configurations");
  if (cfg.size() != 2 || cfg[0].size() != cfg[1].size())
    throw ConfigError("key 'params.configurations': two occupation tuples of equal length required");
  csl::CellModel cm;
  cm.cells = cfg[0].size();
  for (const auto& row : cfg) {
    std::vector<int> r;
    for (double x : row) {
      if (x < 0 || x != std::floor(x)) throw ConfigError("key 'params.configurations': occupations must be integers >= 0");
      r.push_back(int(x));
    }
    cm.configurations.push_back(r);
  }
  cm.lambda_eff = p.num("lambda_eff");
  const double dt = p.num("dt"), t_end = p.num("t_end");
  const long samples = p.integer("samples");
  if (samples < 2) throw ConfigError("key 'params.samples' must be at least 2");
  const auto st = cm.stepper(dt);
  st.validate();
  const long steps = std::lround(t_end / dt);
  const long every = std::max(1L, steps / (samples - 1));
  const std::size_t m = std::size_t(steps / every + 1);
  std::vector<std::vector<double>> acc(ctx.trajectories, std::vector<double>(m, 0.0));
  Vec psi0 = Vec::Constant(2, std::sqrt(0.5));
  parallel_for(ctx.trajectories, ctx.threads, [&](std::size_t i) {
    const CounterRng rng(ctx.seed, i);
    Vec psi = psi0;
    RVec dB(Eigen::Index(cm.cells));
    for (long k = 0; k <= steps; ++k) {
      if (k % every == 0 && std::size_t(k / every) < m) acc[i][std::size_t(k / every)] = (psi[0] * std::conj(psi[1])).real();
      if (k == steps) break;
      for (Eigen::Index c = 0; c < dB.size(); ++c)
        dB[c] = wiener_increment(rng, Stream::noise, std::uint64_t(k), std::uint32_t(c), cm.lambda_eff, dt);
      psi = csl::step_nonlinear(psi, nullptr, st, dB);
    }
  });
  Table t{{{"time", "internal time"}, {"offdiag_mean", "1"}, {"predicted", "1"}}, {}};
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0;
    for (const auto& a : acc) s += a[j];
    const double time = double(long(j) * every) * dt;
    t.add({time, s / double(ctx.trajectories),
           0.5 * std::exp(csl::discrete_decay_exponent(cfg[0], cfg[1], cm.lambda_eff, time))});
  }
  return t;
}

Table run_qmsl_hitting(const Params& p, const RunContext& ctx) {
  const auto psi = packets(p);
  const double lambda = p.num("lambda"), alpha = p.num("alpha"), t_end = p.num("t_end");
  const std::string h = p.str("hamiltonian");
  if (h != "free" && h != "none") throw ConfigError("key 'params.hamiltonian' must be free or none");
  const auto H = h == "free" ? HamiltonianSpec::free() : HamiltonianSpec::none();
  qmsl::TrajectoryOptions opt;
  opt.evolve.leakage_threshold = p.num("leakage_threshold");
  std::vector<std::array<double, 3>> rows(ctx.trajectories);
  parallel_for(ctx.trajectories, ctx.threads, [&](std::size_t i) {
    const auto tr = qmsl::run_qmsl_trajectory(psi, H, lambda, alpha, t_end, CounterRng(ctx.seed, i), opt);
    double left = 0;
    for (std::size_t j = 0; j < tr.final_state.size(); ++j)
      if (tr.final_state.x(j) < 0) left += std::norm(tr.final_state.psi[Eigen::Index(j)]);
    rows[i] = {double(i), double(tr.events.size()), left * tr.final_state.dx};
  });
  Table t{{{"trajectory", "1"}, {"hits", "1"}, {"left_probability", "1"}}, {}};
  for (const auto& r : rows) t.add({r[0], r[1], r[2]});
  return t;
}

Table run_qmsl_master(const Params& p, const RunContext&) {
  const auto psi = packets(p);
  const double lambda = p.num("lambda"), alpha = p.num("alpha"), time = p.num("t");
  const DensityMatrix rho0 = density_from_ensemble({{psi, 1.0}});
  const auto rho = qmsl::evolve_free_master(rho0, lambda, alpha, psi.mass, time);
  Table t{{{"x", "internal length"}, {"density", "1/internal length"}, {"coherence_abs", "1/internal length"}}, {}};
  const Eigen::Index n = rho.rho.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index mirror = (n - j) % n;  // grid point at -x
    t.add({psi.x(std::size_t(j)), rho.rho(j, j).real(), std::abs(rho.rho(j, mirror))});
  }
  return t;
}

colored::CorrelationSpec correlation_from(const Params& p) {
  const std::string k = p.str("kernel");
  if (k == "white") return colored::CorrelationSpec::white();
  if (k == "gaussian") return colored::CorrelationSpec::gaussian(p.num("tau"));
  if (k == "exponential") return colored::CorrelationSpec::exponential(p.num("tau"));
  throw ConfigError("key 'params.kernel' must be white, gaussian or exponential");
}

Table run_colored_damping(const Params& p, const RunContext&) {
  const auto spec = correlation_from(p);
  const double gamma = p.num("gamma"), da = p.num("delta_a"), t0 = p.num("t0"), t_end = p.num("t_end");
  const long points = p.integer("points");
  if (points < 2) throw ConfigError("key 'params.points' must be at least 2");
  const auto fam = ProjectorFamily::from_diagonal((RVec(2) << 0.5 * da, -0.5 * da).finished());
  const double white_rate = csl::offdiag_rate(fam, gamma, 0, 1);
  Table t{{{"t", "internal time"}, {"double_integral", "internal time"}, {"rate_factor", "1"}, {"damping", "1"},
           {"white_damping", "1"}},
          {}};
  // With t0 = -inf the noise is stationary from the start of the window at t = 0.
  const double start = std::isfinite(t0) ? t0 : 0.0;
  if (!(t_end > start)) throw ConfigError("key 'params.t_end' must exceed t0");
  for (long j = 0; j < points; ++j) {
    const double time = start + (t_end - start) * double(j) / double(points - 1);
    const double f = std::isfinite(t0) ? spec.f(t0, time) : time - start;
    const double rf = spec.rate_factor(t0, time);
    const double damping = std::isfinite(t0) ? colored::colored_damping_factor(fam, 0, 1, spec, gamma, t0, time)
                                              : std::exp(-white_rate * (time - start));
    t.add({time, f, rf, damping, std::exp(-white_rate * (time - start))});
  }
  return t;
}

Table run_epr(const Params& p, const RunContext& ctx) {
  analysis::EprNonlinearOptions o;
  o.seed = ctx.seed;
  o.trajectories = ctx.trajectories;
  o.gamma = p.num("gamma");
  o.t_phase = p.num("t_phase");
  o.dt = p.num("dt");
  o.min_class = std::size_t(p.integer("min_class"));
  analysis::EprLinearOptions lo;
  lo.seed = ctx.seed;
  lo.trajectories = std::size_t(p.integer("linear_trajectories"));
  lo.gamma = o.gamma;
  lo.t_end = p.num("linear_t_end");
  lo.dt = p.num("linear_dt");
  const auto nl = analysis::epr_nonlinear_experiment(o);
  const auto lin = analysis::epr_linear_experiment(lo);
  Table t{{{"class_frequency", "1"},
           {"p_minus_off", "1"},
           {"p_minus_on", "1"},
           {"p_minus_on_stderr", "1"},
           {"gap", "1"},
           {"linear_ks", "1"},
           {"linear_ks_critical", "1"},
           {"discordant_mass", "1"}},
          {}};
  t.add({nl.class_frequency, nl.p_minus_off, nl.p_minus_on, nl.p_minus_on_stderr, nl.gap(), lin.ks, lin.ks_critical,
         analysis::epr_discordant_mass(lo.gamma, lo.t_end)});
  return t;
}

Table run_gisin(const Params& p, const RunContext& ctx) {
  const std::string dyn_name = p.str("dynamics");
  const double T = p.num("t"), gamma = p.num("gamma");
  analysis::Ensemble a, b;
  analysis::TrajectoryMap dyn;
  auto eigen_ensemble = [](const Mat& rho) {
    Eigen::SelfAdjointEigenSolver<Mat> es(rho);
    analysis::Ensemble e;
    double s = 0;
    for (Eigen::Index k = 0; k < rho.rows(); ++k)
      if (es.eigenvalues()[k] > 1e-14) {
        e.push_back({es.eigenvectors().col(k), es.eigenvalues()[k]});
        s += es.eigenvalues()[k];
      }
    for (auto& m : e) m.second /= s;
    return e;
  };
  if (dyn_name == "csl") {
    const auto fam = ProjectorFamily::from_diagonal((RVec(2) << 1.0, -1.0).finished());
    Mat H = Mat::Zero(2, 2);
    H(0, 1) = H(1, 0) = 0.7;
    const csl::CslStepper st{fam, csl::Form::nonlinear, csl::Calculus::ito, gamma, 0.005};
    st.validate();
    const long steps = std::lround(T / st.dt);
    dyn = [=, seed = ctx.seed](const Vec& v, std::uint64_t i) { return csl::run_nonlinear(v, &H, st, steps, seed, i).first; };
    Vec zero = Vec::Zero(2);
    zero[0] = 1;
    a = {{zero, 0.5}, {Vec::Constant(2, std::sqrt(0.5)), 0.5}};
  } else if (dyn_name == "qmsl") {
    const std::size_t n = 256;
    const double dx = 0.2, x0 = -25.6;
    const auto L = gaussian_packet(n, dx, x0, 1.0, -4.0, 0.5), R = gaussian_packet(n, dx, x0, 1.0, 4.0, 0.5);
    a = {{L.psi, 0.5}, {(L.psi + R.psi) / (L.psi + R.psi).norm(), 0.5}};
    dyn = [=, seed = ctx.seed](const Vec& v, std::uint64_t i) {
      GridWavefunction g{v / (v.norm() * std::sqrt(dx)), dx, x0, 1.0};
      qmsl::TrajectoryOptions opt;
      opt.evolve.leakage_threshold = 1e-9;
      return qmsl::run_qmsl_trajectory(g, HamiltonianSpec::free(), gamma, 1.0, T, CounterRng(seed, i), opt).final_state.psi;
    };
  } else if (dyn_name == "colored") {
    const auto fam = ProjectorFamily::from_diagonal((RVec(3) << 1.0, 0.0, -1.0).finished());
    Mat H = Mat::Zero(3, 3);
    H(0, 0) = 0.4;
    H(2, 2) = -0.9;
    const double tau = p.num("tau"), dt = 0.05;
    const int steps = std::max(1, int(std::lround(T / dt)));
    const auto spec = colored::CorrelationSpec::exponential(tau);
    const double f = spec.f(0.0, steps * dt);
    dyn = [=, seed = ctx.seed](const Vec& v, std::uint64_t i) {
      const auto path = colored::sample_exponential_path(tau, {seed, i, dt}, steps, 1, gamma);
      const double u = CounterRng(seed, i).uniform(Stream::aux, 0, 0);
      double acc = 0;
      Eigen::Index k = 0;
      for (; k < 2; ++k)
        if ((acc += std::norm(v[k])) > u) break;
      const double x = path.increments.col(0).sum() + 2 * fam.eigenvalues()(0, k) * gamma * f;
      return colored::commuting_nonwhite_step({v, 0.0}, &H, fam, RVec::Constant(1, x), gamma, spec, 0.0, 0.0, steps * dt).psi;
    };
    Vec e0 = Vec::Zero(3), mix(3);
    e0[0] = 1;
    mix << 0.5, 0.5, std::sqrt(0.5);
    a = {{e0, 0.4}, {mix, 0.6}};
  } else {
    throw ConfigError("key 'params.dynamics' must be csl, qmsl or colored");
  }
  Mat rho = Mat::Zero(a.front().first.size(), a.front().first.size());
  for (const auto& [v, w] : a) rho += w * (v / v.norm()) * (v / v.norm()).adjoint();
  b = eigen_ensemble(rho);
  const auto r = analysis::gisin_check(a, b, dyn, ctx.trajectories);
  Table t{{{"distance", "1"}, {"band", "1"}, {"sigma", "1"}, {"pass", "1"}}, {}};
  t.add({r.distance, r.band, r.sigma, double(r.pass)});
  return t;
}

Table run_rates_report(const Params& p, const RunContext&) {
  const double lam = p.num("lambda"), alpha = p.num("alpha"), g = p.num("gamma"), D0 = p.num("D0");
  Table t{{{"lifetime_at_separation", "s"},
           {"lambda_macro", "1/s"},
           {"energy_increase", "eV/s"},
           {"csl_macro_rate", "1/s"},
           {"lambda_from_gamma", "1/s"},
           {"momentum_diffusion", "(g cm/s)^2/s per cm^2"},
           {"excitation_atom", "1/s"},
           {"excitation_nucleus", "1/s"},
           {"delta_grw", "1/(cm^2 s)"},
           {"diosi_rate", "1/s"}},
          {}};
  t.add({qmsl::offdiag_lifetime(p.num("separation"), qmsl::com_amplified_rate(lam, p.num("N")), alpha).tau,
         qmsl::com_amplified_rate(lam, p.num("N")),
         qmsl::energy_increase_rate(lam, alpha, cgs::nucleon_mass, cgs::hbar) / cgs::eV,
         csl::macro_reduction_rate(g, D0, p.num("n_out")), CollapseParams::lambda_from(g, alpha),
         csl::momentum_diffusion(g, alpha, D0, 1.0, cgs::hbar), analysis::excitation_rate_qmsl(lam, alpha, p.num("kappa_atom")),
         analysis::excitation_rate_qmsl(lam, alpha, p.num("kappa_nucleus")), alpha * lam / 2.0,
         analysis::diosi_rate(p.num("sphere_mass"), p.num("sphere_radius"), p.num("sphere_delta"))});
  return t;
}

Table run_decoherence_table(const Params& p, const RunContext& ctx) {
  fs::path file = p.str("file");
  if (file.is_relative()) file = ctx.config_dir / file;
  const auto rows = analysis::load_decoherence_sources(file.string());
  Table t{{{"name", "text"},
           {"Lambda", "1/s"},
           {"tau", "s"},
           {"Delta", "1/(cm^2 s)"},
           {"tau_reference", "s"},
           {"delta_reference", "1/(cm^2 s)"},
           {"reference_only", "1"},
           {"tag", "text"}},
          {}};
  for (const auto& s : rows) {
    const auto d = analysis::decoherence_rates(s);
    t.add({s.name, d.Lambda, d.tau, d.Delta, s.tau_reference, s.delta_reference, double(s.reference_only), s.tag});
  }
  return t;
}

Table run_mass_profile(const Params& p, const RunContext&) {
  const auto amp = p.list("amplitudes");
  const auto conf = p.table("configurations");
  const auto masses = p.list("masses");
  const long cells = p.integer("cells");
  if (cells < 1) throw ConfigError("key 'params.cells' must be positive");
  Vec a(Eigen::Index(amp.size()));
  for (std::size_t k = 0; k < amp.size(); ++k) a[Eigen::Index(k)] = amp[k];
  if (std::abs(a.squaredNorm() - 1.0) > 1e-9) throw ConfigError("key 'params.amplitudes': squared amplitudes must sum to 1");
  const auto prof = analysis::mass_profile(a, conf, masses, std::size_t(cells));
  const auto acc = analysis::accessibility_ratio(prof, p.num("threshold"));
  Table t{{{"cell", "1"}, {"mean_mass", "mass"}, {"variance", "mass^2"}, {"ratio", "1"}, {"accessible", "1"}}, {}};
  for (std::size_t i = 0; i < prof.mean.size(); ++i)
    t.add({double(i), prof.mean[i], prof.variance[i],
           acc.ratio[i] ? Cell(*acc.ratio[i]) : Cell(std::string("undefined")), double(acc.accessible(i))});
  return t;
}

const std::vector<ParamSpec> kCsl{{"weights", std::nullopt}, {"eigenvalues", "auto"}, {"gamma", "1"}};

std::vector<Experiment> experiments() {
  auto none = [](const Params&) { return std::vector<std::string>{}; };
  return {
      {"qmsl-hitting",
       with(kGrid, {{"lambda", "1"}, {"alpha", "1"}, {"t_end", std::nullopt}, {"hamiltonian", "free"},
                    {"leakage_threshold", "1e-12"}}),
       [](const Params& p) { return grid_diagnostics(p, "t_end"); }, run_qmsl_hitting},
      {"qmsl-master",
       with({{"grid.n", "64"}, {"grid.dx", "0.35"}, {"mass", "1"}, {"separation", "1.5"}, {"sigma", "0.6"},
             {"weight_left", "0.5"}},
            {{"lambda", "2"}, {"alpha", "0.25"}, {"t", std::nullopt}}),
       [](const Params& p) { return grid_diagnostics(p, "t"); }, run_qmsl_master},
      {"csl-born", with(kCsl, {{"dt", "0.01"}, {"max_steps", "20000"}, {"collapse_tol", "1e-6"}}), diagnose_csl, run_csl_born},
      {"csl-equivalence", with(kCsl, {{"dt", "0.005"}, {"steps", "1000"}}), diagnose_csl, run_csl_equivalence},
      {"csl-discrete",
       {{"configurations", std::nullopt}, {"lambda_eff", "0.05"}, {"dt", "0.002"}, {"t_end", "1"}, {"samples", "11"}},
       [](const Params& p) {
         std::vector<std::string> d;
         double mx = 0;
         for (const auto& r : p.table("configurations"))
           for (double x : r) mx = std::max(mx, std::abs(x));
         const double s = p.num("lambda_eff") * mx * mx * p.num("dt");
         if (s > kStability)
           d.push_back("stability: gamma max|a|^2 dt = " + io::fmt(s) + " violates the criterion gamma max|a|^2 dt <= " +
                       io::fmt(kStability));
         return d;
       },
       run_csl_discrete},
      {"colored-damping",
       {{"kernel", "gaussian"}, {"tau", "0.5"}, {"gamma", "1"}, {"delta_a", "2"}, {"t0", "0"}, {"t_end", "5"}, {"points", "51"}},
       none, run_colored_damping},
      {"epr",
       {{"gamma", "1"}, {"t_phase", "4"}, {"dt", "0.01"}, {"min_class", "500"}, {"linear_trajectories", "2000"},
        {"linear_t_end", "10"}, {"linear_dt", "0.01"}},
       none, run_epr},
      {"gisin", {{"dynamics", "csl"}, {"t", "1"}, {"gamma", "0.5"}, {"tau", "0.3"}}, none, run_gisin},
      {"rates-report",
       {{"lambda", "1e-16"}, {"alpha", "1e10"}, {"gamma", "1e-30"}, {"D0", "1e24"}, {"n_out", "1e13"}, {"N", "1e23"},
        {"separation", "4e-5"}, {"kappa_atom", "1e8"}, {"kappa_nucleus", "1e12"}, {"sphere_mass", "1"},
        {"sphere_radius", "1"}, {"sphere_delta", "1e-5"}},
       none, run_rates_report},
      {"decoherence-table", {{"file", std::string(DRM_DATA_DIR) + "/decoherence_sources.tsv"}}, none, run_decoherence_table},
      {"mass-profile",
       {{"amplitudes", std::nullopt}, {"configurations", std::nullopt}, {"masses", "1"}, {"cells", std::nullopt},
        {"threshold", "0.01"}},
       none, run_mass_profile},
  };
}

// ------------------------------------------------------------------ output

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct Provenance {
  std::string experiment, hash;
  std::uint64_t seed;
  std::size_t trajectories;
};

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Quotes text cells that contain a separator or quote.
std::string csv_text(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string to_csv(const Table& t, const Provenance& pv) {
  io::CsvTable csv(t.cols);
  for (const auto& r : t.rows) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) s += ',';
      s += std::holds_alternative<double>(r[i]) ? io::fmt(std::get<double>(r[i])) : csv_text(std::get<std::string>(r[i]));
    }
    csv.add_raw(s);
  }
  // The timestamp stays on the last preamble line so reruns differ only there.
  return csv.str({"drm-run " DRM_VERSION, "experiment " + pv.experiment, "config-hash fnv1a64:" + pv.hash,
                  "seed " + std::to_string(pv.seed), "trajectories " + std::to_string(pv.trajectories),
                  "generated " + utc_now()});
}

std::string to_json(const Table& t, const Provenance& pv) {
  nlohmann::ordered_json j;
  j["provenance"] = {{"tool", "drm-run"},
                     {"version", DRM_VERSION},
                     {"experiment", pv.experiment},
                     {"config_hash", "fnv1a64:" + pv.hash},
                     {"seed", pv.seed},
                     {"trajectories", pv.trajectories},
                     {"generated", utc_now()}};
  j["columns"] = nlohmann::ordered_json::array();
  for (const auto& c : t.cols) j["columns"].push_back({{"name", c.name}, {"unit", c.unit}});
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto& name = t.cols[i].name;
      if (std::holds_alternative<std::string>(r[i])) row[name] = std::get<std::string>(r[i]);
      else if (std::isfinite(std::get<double>(r[i]))) row[name] = std::get<double>(r[i]);
      else row[name] = io::fmt(std::get<double>(r[i]));  // inf / nan as strings
    }
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------------ main

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::set<std::string> kTopKeys{"experiment", "seeds.master", "seeds.trajectories", "output.path", "output.format"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamical-reduction experiment runner"};
  std::string config_path, out_dir, format;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  bool validate_only = false;
  app.add_option("--config", config_path, "experiment configuration file")->required();
  app.add_option("--seed", seed, "master seed (overrides seeds.master)");
  app.add_option("--out", out_dir, "output directory (overrides output.path and DRM_OUT_DIR)");
  app.add_option("--format", format, "output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--threads", threads, "worker threads for trajectory batches")->check(CLI::Range(1u, 1024u));
  app.add_flag("--validate", validate_only, "check the configuration without running it");
  app.set_version_flag("--version", DRM_VERSION);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Config cfg = Config::parse(read_file(config_path));
    std::vector<std::string> notes;
    for (const auto& [k, v] : cfg.values())
      if (k.rfind("params.", 0) != 0 && !kTopKeys.count(k)) throw ConfigError("unknown key '" + k + "'");
    const auto name = cfg.get("experiment");
    if (!name) throw ConfigError("missing required key 'experiment'");
    const auto all = experiments();
    const auto it = std::find_if(all.begin(), all.end(), [&](const Experiment& e) { return e.name == *name; });
    if (it == all.end()) throw ConfigError("unknown experiment '" + *name + "'");

    RunContext ctx;
    ctx.threads = threads;
    ctx.config_dir = fs::path(config_path).parent_path();
    if (seed) cfg.set("seeds.master", std::to_string(*seed));
    if (const auto s = cfg.get("seeds.master")) {
      const double d = cli::parse_double("seeds.master", *s);
      if (d < 0 || d != std::floor(d)) throw ConfigError("key 'seeds.master' must be a nonnegative integer");
      ctx.seed = std::stoull(*s);
    } else {
      notes.push_back("notice: seeds.master missing, defaulting to " + std::to_string(ctx.seed));
      cfg.set("seeds.master", std::to_string(ctx.seed));
    }
    if (const auto s = cfg.get("seeds.trajectories")) {
      const double d = cli::parse_double("seeds.trajectories", *s);
      if (d < 1 || d != std::floor(d)) throw ConfigError("key 'seeds.trajectories' must be a positive integer");
      ctx.trajectories = std::size_t(d);
    } else {
      notes.push_back("notice: seeds.trajectories missing, defaulting to " + std::to_string(ctx.trajectories));
      cfg.set("seeds.trajectories", std::to_string(ctx.trajectories));
    }
    if (format.empty()) format = cfg.get("output.format").value_or("csv");
    if (format != "csv" && format != "json") throw ConfigError("key 'output.format' must be csv or json");
    fs::path dir = ".";
    if (!out_dir.empty()) dir = out_dir;
    else if (const char* env = std::getenv("DRM_OUT_DIR"); env && *env) dir = env;
    else if (const auto p = cfg.get("output.path")) dir = ctx.config_dir / *p;

    const Params params(cfg, it->schema);
    if (validate_only) {
      for (const auto& k : params.unknown()) std::cout << "error: unknown key '" << k << "'\n";
      for (const auto& k : params.missing()) std::cout << "error: missing required key 'params." << k << "'\n";
      if (!params.unknown().empty() || !params.missing().empty()) return 2;
      auto diag = it->diagnose(params);
      diag.insert(diag.begin(), notes.begin(), notes.end());
      for (const auto& d : diag) std::cout << d << "\n";
      if (diag.empty()) std::cout << "ok: no diagnostics\n";
      return 0;
    }
    params.check();
    for (const auto& n : notes) std::cerr << n << "\n";

    const Table table = it->run(params, ctx);
    const Provenance pv{*name, hex(cli::fnv1a(cfg.canonical())), ctx.seed, ctx.trajectories};
    const fs::path out = dir / (*name + "." + format);
    io::atomic_write(out, format == "csv" ? to_csv(table, pv) : to_json(table, pv));
    std::cout << out.string() << "\n";
    return 0;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CapabilityError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const StatisticalError& e) {
    std::cerr << "statistical precondition failed: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
