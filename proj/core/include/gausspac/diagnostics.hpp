#pragma once

#include <cstdint>
#include <vector>

#include "gausspac/loss.hpp"
#include "gausspac/network.hpp"

namespace gausspac {

/// Distribution comparison between exact finite-width samples and the
/// Gaussian limit at one input.
struct LimitReport {
  Eigen::Index n = 0;
  Eigen::VectorXd ks_per_output;   // KS distance to N(M_i, Q_ii), per coordinate
  double convex_gap_bound = 0.0;   // from the Bentkus diagnostic
  double mc_loss = 0.0;            // misclassification rate of the exact samples
  double mc_loss_stderr = 0.0;
  double gauss_loss = 0.0;         // expected 0-1 loss in the Gaussian limit
  double gauss_loss_stderr = 0.0;  // 0 for the closed-form binary case
  double loss_gap = 0.0;           // |mc_loss - gauss_loss|
  bool degenerate = false;         // flagged when the output variances collapse
};

/// Two-sided Kolmogorov-Smirnov distance between a sample and N(mean, sd^2),
/// using the exact erf-based CDF.
double ks_normal_distance(const Eigen::VectorXd& samples, double mean, double sd);

/// Draws exact samples at x, compares their per-coordinate law against the
/// Gaussian limit, and checks the misclassification rate against the
/// closed-form/MC Gaussian loss and the convex-set gap.
LimitReport limit_check(const HyperParams& hp, const Eigen::VectorXd& x, int label,
                        Eigen::Index n_samples, std::uint64_t seed);

struct ScalingPoint {
  Eigen::Index n = 0;
  double b_upper_median = 0.0;
  double gap_median = 0.0;
  std::vector<double> b_upper;  // per seed
  std::vector<double> gap;     // per seed
};

struct ScalingStudy {
  std::vector<ScalingPoint> points;
  std::vector<double> slope_per_seed;  // log-log slope of gap vs n
  double slope_median = 0.0;
  double b_ratio_median = 0.0;  // B_upper(max n) / B_upper(min n), median over seeds
};

/// Initializes networks over the width grid and records how the Bentkus
/// bound and the convex-set gap scale with n.
ScalingStudy scaling_study(Eigen::Index p, Eigen::Index q, const std::vector<Eigen::Index>& n_grid,
                           const Eigen::VectorXd& x, const std::vector<std::uint64_t>& seeds,
                           ActivationKind activation = ActivationKind::ReLU);

}  // namespace gausspac
