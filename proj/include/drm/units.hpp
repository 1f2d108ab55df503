#pragma once

#include <cmath>
#include <numbers>
#include <string_view>

#include "drm/errors.hpp"

namespace drm {

// CGS constants.
namespace cgs {
inline constexpr double hbar = 1.054571817e-27;       // erg s
inline constexpr double G = 6.67430e-8;               // cm^3 g^-1 s^-2
inline constexpr double eV = 1.602176634e-12;         // erg
inline constexpr double nucleon_mass = 1.67262192e-24; // g (proton)
inline constexpr double electron_mass = 9.1093837e-28; // g
}  // namespace cgs

enum class Quantity { length, time, mass, rate, energy_rate, coupling, energy, action };

inline Quantity parse_quantity(std::string_view s) {
  if (s == "length") return Quantity::length;
  if (s == "time") return Quantity::time;
  if (s == "mass") return Quantity::mass;
  if (s == "rate") return Quantity::rate;
  if (s == "energy-rate" || s == "energy_rate") return Quantity::energy_rate;
  if (s == "coupling") return Quantity::coupling;
  if (s == "energy") return Quantity::energy;
  if (s == "action") return Quantity::action;
  throw InvalidArgument("unknown quantity kind: " + std::string(s));
}

enum class Direction { to_cgs, from_cgs };

// Internal units have hbar = 1. Length, time and mass units are the CGS size of
// one internal unit; they are not independent once hbar is fixed, so the
// constructor derives the mass unit from the other two unless told otherwise.
struct UnitSystem {
  double hbar = 1.0;
  double length_unit = 1.0;  // cm
  double time_unit = 1.0;    // s
  double mass_unit = cgs::hbar;  // g

  static UnitSystem natural(double length_cm, double time_s) {
    UnitSystem u;
    u.length_unit = length_cm;
    u.time_unit = time_s;
    u.mass_unit = cgs::hbar * time_s / (length_cm * length_cm);
    u.validate();
    return u;
  }

  void validate() const {
    require(hbar > 0 && length_unit > 0 && time_unit > 0 && mass_unit > 0,
            "unit conversion factors must be strictly positive");
  }

  // CGS size of one internal unit of the given quantity.
  double factor(Quantity q, int spatial_dim = 3) const {
    switch (q) {
      case Quantity::length: return length_unit;
      case Quantity::time: return time_unit;
      case Quantity::mass: return mass_unit;
      case Quantity::rate: return 1.0 / time_unit;
      case Quantity::energy: return mass_unit * length_unit * length_unit / (time_unit * time_unit);
      case Quantity::energy_rate:
        return mass_unit * length_unit * length_unit / (time_unit * time_unit * time_unit);
      case Quantity::action: return mass_unit * length_unit * length_unit / time_unit;
      case Quantity::coupling: return std::pow(length_unit, spatial_dim) / time_unit;
    }
    throw InvalidArgument("unknown quantity kind");
  }
};

inline double cgs_convert(double value, Quantity q, Direction dir, const UnitSystem& u,
                          int spatial_dim = 3) {
  u.validate();
  const double f = u.factor(q, spatial_dim);
  return dir == Direction::to_cgs ? value * f : value / f;
}

// lambda: hitting rate, alpha: inverse square localization width,
// gamma: CSL coupling. When `consistent` is set, gamma = lambda (4 pi / alpha)^{3/2}.
struct CollapseParams {
  double lambda_rate = 0.0;
  double alpha = 0.0;
  double gamma_coupling = 0.0;
  bool consistent = false;

  static double gamma_from(double lambda, double alpha) {
    return lambda * std::pow(4.0 * std::numbers::pi / alpha, 1.5);
  }
  static double lambda_from(double gamma, double alpha) {
    return gamma * std::pow(alpha / (4.0 * std::numbers::pi), 1.5);
  }

  static CollapseParams from_lambda(double lambda, double alpha) {
    CollapseParams p{lambda, alpha, gamma_from(lambda, alpha), true};
    p.validate();
    return p;
  }
  static CollapseParams from_gamma(double gamma, double alpha) {
    CollapseParams p{lambda_from(gamma, alpha), alpha, gamma, true};
    p.validate();
    return p;
  }

  void validate() const {
    require(lambda_rate > 0 && alpha > 0 && gamma_coupling > 0,
            "collapse parameters must be strictly positive");
    if (consistent) {
      const double g = gamma_from(lambda_rate, alpha);
      require(std::abs(gamma_coupling - g) <= 1e-12 * g,
              "gamma, lambda and alpha violate gamma = lambda (4 pi/alpha)^{3/2}");
    }
  }
};

// Values used throughout the worked estimates, CGS.
namespace canonical {
inline constexpr double lambda_micro = 1e-16;  // s^-1
inline constexpr double alpha = 1e10;          // cm^-2
inline constexpr double gamma_csl = 1e-30;     // cm^3 s^-1
inline constexpr double number_density = 1e24; // cm^-3
}  // namespace canonical

}  // namespace drm
