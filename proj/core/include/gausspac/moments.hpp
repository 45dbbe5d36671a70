#pragma once

#include <cmath>
#include <cstdint>

#include "gausspac/common.hpp"

namespace gausspac {

enum class ActivationKind : std::uint8_t { ReLU = 0, Sin = 1 };

const char* activation_name(ActivationKind kind);
ActivationKind activation_from_name(const std::string& name);

inline double apply_activation(ActivationKind kind, double y) {
  return kind == ActivationKind::ReLU ? (y > 0.0 ? y : 0.0) : std::sin(y);
}

/// Gaussian pre-activation a*Z + b, Z standard normal. a = 0 is the
/// deterministic limit.
struct PreActivation {
  double a = 0.0;
  double b = 0.0;
};

/// Moments of phi(a*Z + b).
struct MomentSet {
  double m1 = 0.0;    // E[phi]
  double m2 = 0.0;    // E[phi^2]
  double var = 0.0;   // E[phi^2] - E[phi]^2, clamped at 0 against cancellation
  double abs3 = 0.0;  // E[|phi|^3]
};

/// Partial derivatives of m1 and m2 with respect to (a, b). Requires a > 0.
struct MomentPartials {
  double dm1_da = 0.0;
  double dm1_db = 0.0;
  double dm2_da = 0.0;
  double dm2_db = 0.0;
};

namespace detail {

// Closed forms for ReLU. With t = b/a:
//   E[ReLU(aZ+b)]   = a phi(t) + b Phi(t)
//   E[ReLU(aZ+b)^2] = (a^2+b^2) Phi(t) + a b phi(t)
//   E[ReLU(aZ+b)^3] = a^3 [ (t^2+2) phi(t) + t (t^2+3) Phi(t) ]
inline double relu_m1(double a, double b) {
  if (a == 0.0) return b > 0.0 ? b : 0.0;
  const double t = b / a;
  return a * normal_pdf(t) + b * normal_cdf(t);
}

inline double relu_m2(double a, double b) {
  if (a == 0.0) {
    const double r = b > 0.0 ? b : 0.0;
    return r * r;
  }
  const double t = b / a;
  const double v = (a * a + b * b) * normal_cdf(t) + a * b * normal_pdf(t);
  return v > 0.0 ? v : 0.0;
}

inline double relu_m3(double a, double b) {
  if (a == 0.0) {
    const double r = b > 0.0 ? b : 0.0;
    return r * r * r;
  }
  const double t = b / a;
  const double v = a * a * a * ((t * t + 2.0) * normal_pdf(t) + t * (t * t + 3.0) * normal_cdf(t));
  return v > 0.0 ? v : 0.0;
}

// Closed forms for sin:
//   E[sin(aZ+b)]   = e^{-a^2/2} sin(b)
//   E[sin(aZ+b)^2] = (1 - e^{-2 a^2} cos(2b)) / 2
inline double sin_m1(double a, double b) { return std::exp(-0.5 * a * a) * std::sin(b); }

inline double sin_m2(double a, double b) {
  const double v = 0.5 * (1.0 - std::exp(-2.0 * a * a) * std::cos(2.0 * b));
  return v > 0.0 ? v : 0.0;
}

inline double clamp_var(double m1, double m2) {
  const double v = m2 - m1 * m1;
  return v > 0.0 ? v : 0.0;
}

}  // namespace detail

/// E[phi(aZ+b)].
double moment_mean(ActivationKind kind, PreActivation pre);

/// E[phi(aZ+b)^2].
double moment_square(ActivationKind kind, PreActivation pre);

/// E[|phi(aZ+b)|^3]. Closed form for ReLU; accurate kink-split quadrature
/// for sin (no closed form).
double moment_abs3(ActivationKind kind, PreActivation pre);

/// All four moments in one call.
MomentSet activation_moments(ActivationKind kind, PreActivation pre);

/// Analytic partials of the closed-form m1 and m2. Throws std::domain_error
/// at the deterministic limit a = 0.
MomentPartials moment_partials(ActivationKind kind, PreActivation pre);

/// Numerical estimate of E[phi(aZ+b)^power] (E[|phi|^3] for power = 3),
/// the independent check for the closed forms. Smooth integrands go through
/// the Gauss-Hermite rule with `nodes` points; integrands with kinks (ReLU,
/// |sin|^3) use Gauss-Legendre panels split at the kink locations, since a
/// plain Hermite rule stalls at ~1e-4 accuracy there.
double quadrature_moment(ActivationKind kind, PreActivation pre, int power, int nodes);

}  // namespace gausspac
