#include "gausspac/moments.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gausspac/quadrature.hpp"

namespace gausspac {

namespace {

constexpr double kTailCut = 40.0;  // e^{-800} underflows; nothing lives past here

void check_pre(PreActivation pre) {
  require_finite(pre.a, "pre.a");
  require_finite(pre.b, "pre.b");
  require(pre.a >= 0.0, "pre.a must be nonnegative");
}

// |sin(a z + b)|^3 integrated against the normal density, split at the sign
// changes of sin so every panel sees a smooth integrand.
double sin_abs3_quadrature(double a, double b, int order) {
  const double lo = -kTailCut, hi = kTailCut;
  std::vector<double> zeros;
  const double k_lo = std::ceil((a * lo + b) / M_PI);
  const double k_hi = std::floor((a * hi + b) / M_PI);
  for (double k = k_lo; k <= k_hi; k += 1.0) zeros.push_back((k * M_PI - b) / a);
  auto f = [a, b](double z) {
    const double s = std::abs(std::sin(a * z + b));
    return s * s * s;
  };
  return integrate_against_normal(f, lo, hi, zeros, order);
}

}  // namespace

const char* activation_name(ActivationKind kind) {
  return kind == ActivationKind::ReLU ? "relu" : "sin";
}

ActivationKind activation_from_name(const std::string& name) {
  if (name == "relu" || name == "ReLU") return ActivationKind::ReLU;
  if (name == "sin" || name == "Sin") return ActivationKind::Sin;
  throw std::invalid_argument("unknown activation: " + name);
}

double moment_mean(ActivationKind kind, PreActivation pre) {
  check_pre(pre);
  return kind == ActivationKind::ReLU ? detail::relu_m1(pre.a, pre.b)
                                      : detail::sin_m1(pre.a, pre.b);
}

double moment_square(ActivationKind kind, PreActivation pre) {
  check_pre(pre);
  return kind == ActivationKind::ReLU ? detail::relu_m2(pre.a, pre.b)
                                      : detail::sin_m2(pre.a, pre.b);
}

double moment_abs3(ActivationKind kind, PreActivation pre) {
  check_pre(pre);
  if (kind == ActivationKind::ReLU) return detail::relu_m3(pre.a, pre.b);
  if (pre.a == 0.0) {
    const double s = std::abs(std::sin(pre.b));
    return s * s * s;
  }
  return sin_abs3_quadrature(pre.a, pre.b, 32);
}

MomentSet activation_moments(ActivationKind kind, PreActivation pre) {
  check_pre(pre);
  MomentSet ms;
  if (kind == ActivationKind::ReLU) {
    ms.m1 = detail::relu_m1(pre.a, pre.b);
    ms.m2 = detail::relu_m2(pre.a, pre.b);
    ms.abs3 = detail::relu_m3(pre.a, pre.b);
  } else {
    ms.m1 = detail::sin_m1(pre.a, pre.b);
    ms.m2 = detail::sin_m2(pre.a, pre.b);
    ms.abs3 = moment_abs3(kind, pre);
  }
  ms.var = detail::clamp_var(ms.m1, ms.m2);
  return ms;
}

MomentPartials moment_partials(ActivationKind kind, PreActivation pre) {
  check_pre(pre);
  if (pre.a == 0.0) throw std::domain_error("moment_partials: degenerate a = 0");
  const double a = pre.a, b = pre.b;
  MomentPartials out;
  if (kind == ActivationKind::ReLU) {
    const double t = b / a;
    const double pdf = normal_pdf(t), cdf = normal_cdf(t);
    out.dm1_da = pdf;
    out.dm1_db = cdf;
    out.dm2_da = 2.0 * a * cdf;
    out.dm2_db = 2.0 * (a * pdf + b * cdf);  // = 2 E[ReLU(aZ+b)]
  } else {
    const double e1 = std::exp(-0.5 * a * a);
    const double e2 = std::exp(-2.0 * a * a);
    out.dm1_da = -a * e1 * std::sin(b);
    out.dm1_db = e1 * std::cos(b);
    out.dm2_da = 2.0 * a * e2 * std::cos(2.0 * b);
    out.dm2_db = e2 * std::sin(2.0 * b);
  }
  return out;
}

double quadrature_moment(ActivationKind kind, PreActivation pre, int power, int nodes) {
  check_pre(pre);
  require(power >= 1 && power <= 3, "quadrature_moment: power must be 1, 2 or 3");
  require(nodes >= 2 && nodes <= kMaxQuadratureNodes,
          "quadrature_moment: node count out of range");
  const double a = pre.a, b = pre.b;
  if (a == 0.0) {
    const double y = apply_activation(kind, b);
    return power == 3 ? std::abs(y * y * y) : std::pow(y, power);
  }

  if (kind == ActivationKind::Sin && power < 3) {
    // Entire integrand: a plain Hermite rule converges spectrally.
    const QuadratureRule& rule = gauss_hermite_rule(nodes);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) {
      const double s = std::sin(a * rule.nodes[i] + b);
      acc += rule.weights[i] * (power == 1 ? s : s * s);
    }
    return acc;
  }

  const int order = std::clamp(nodes, 4, 48);
  if (kind == ActivationKind::Sin) return sin_abs3_quadrature(a, b, order);

  // ReLU: the integrand vanishes below the kink at z = -b/a.
  const double kink = -b / a;
  if (kink >= kTailCut) return 0.0;
  const double lo = std::max(kink, -kTailCut);
  auto f = [a, b, power](double z) {
    const double y = a * z + b;
    if (y <= 0.0) return 0.0;
    return power == 1 ? y : (power == 2 ? y * y : y * y * y);
  };
  return integrate_against_normal(f, lo, kTailCut, {}, order);
}

}  // namespace gausspac
