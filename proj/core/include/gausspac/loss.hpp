#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "gausspac/network.hpp"

namespace gausspac {

/// Expected 0-1 loss of a Gaussian output with gradients in (M, Q).
/// grad_Q is symmetric and uses the all-entries convention: for a symmetric
/// perturbation dQ, dL = sum over all (i,i') of grad_Q(i,i') * dQ(i,i').
struct LossValue {
  double value = 0.0;
  Eigen::VectorXd grad_M;
  Eigen::MatrixXd grad_Q;
  double mc_stderr = 0.0;  // 0 for the closed-form binary path
};

struct CholeskyFactor {
  Eigen::MatrixXd A;         // lower triangular, A A^T = Q + jitter_used * I
  double jitter_used = 0.0;
};

struct SingularCovarianceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Misclassification probability for q = 2, exact via erf. Labels are 1-based.
/// A degenerate difference variance yields the hard step loss with zero
/// gradients, which early training can legitimately produce.
LossValue binary_loss(const GaussianOutput& out, int label);

/// Cholesky with escalating diagonal jitter (1e-12 to 1e-6 of the mean
/// diagonal); throws SingularCovarianceError when that is not enough.
CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& Q);

/// Monte-Carlo estimate of the misclassification probability for q >= 2,
/// with pathwise gradients through the Cholesky reduction and the smoothed
/// max contest. Deterministic given the seed.
LossValue multiclass_loss(const GaussianOutput& out, int label, int samples,
                          std::uint64_t seed);

/// Mean expected 0-1 loss over a batch with gradients accumulated into the
/// mean hyper-parameters. Binary outputs take the closed form; otherwise
/// each example gets a fresh MC stream derived from (seed, example index).
/// X holds one example per row; labels are 1-based.
struct BatchLoss {
  double value = 0.0;
  MeanGrads grads;
  double mc_stderr = 0.0;
};

BatchLoss batch_expected_loss(const HyperParams& hp, const Eigen::MatrixXd& X,
                              const Eigen::VectorXi& labels, int samples_per_example,
                              std::uint64_t seed,
                              const Eigen::MatrixXd* pre_std = nullptr);

/// Loss-only variant (no gradient accumulation), for metrics passes.
double batch_loss_value(const HyperParams& hp, const Eigen::MatrixXd& X,
                        const Eigen::VectorXi& labels, int samples_per_example,
                        std::uint64_t seed, const Eigen::MatrixXd* pre_std = nullptr);

}  // namespace gausspac
