#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gausspac {

/// Quadrature rule: nodes and matching weights.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// Gauss-Hermite rule for the probabilists' weight e^{-z^2/2}/sqrt(2*pi).
/// Weights are normalized so they sum to 1: sum_i w_i f(x_i) approximates
/// E[f(Z)] for Z standard normal. Rules are cached per node count.
const QuadratureRule& gauss_hermite_rule(int n);

/// Gauss-Legendre rule on [-1, 1], cached per node count.
const QuadratureRule& gauss_legendre_rule(int n);

/// Integrates f(z) * normal_pdf(z) over [lo, hi] with Gauss-Legendre panels.
/// The interval is cut at the given breakpoints (where f may have kinks) and
/// then into panels of width at most `max_width`; an `order`-point rule is
/// applied per panel.
double integrate_against_normal(const std::function<double(double)>& f, double lo, double hi,
                                const std::vector<double>& breakpoints, int order,
                                double max_width = 1.0);

inline constexpr int kMaxQuadratureNodes = 1024;

}  // namespace gausspac
