#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "gausspac/moments.hpp"

namespace gausspac {

/// Means and standard deviations of the stochastic weights, stored in
/// absorbed scaling: the width factors 1/sqrt(p) and 1/sqrt(n) live inside
/// the entries, so the entry (j,k) of mu0 is the unscaled mean divided by
/// sqrt(p). Unscaled views are recovered by multiplying back.
struct HyperParams {
  Eigen::MatrixXd mu0;     // n x p
  Eigen::MatrixXd sigma0;  // n x p, entries > 0
  Eigen::MatrixXd mu1;     // q x n
  Eigen::MatrixXd sigma1;  // q x n, entries > 0
  ActivationKind activation = ActivationKind::ReLU;

  Eigen::Index p() const { return mu0.cols(); }
  Eigen::Index n() const { return mu0.rows(); }
  Eigen::Index q() const { return mu1.rows(); }

  void validate() const;
};

/// Per-hidden-node pre-activation parameters and activation moments,
/// stored columnar. abs3 is only filled on request (the sin case needs
/// quadrature, which has no place in the training hot path).
struct HiddenMoments {
  Eigen::VectorXd a;   // sqrt of the per-node pre-activation variance
  Eigen::VectorXd b;   // per-node pre-activation mean
  Eigen::VectorXd m1;
  Eigen::VectorXd m2;
  Eigen::VectorXd var;
  Eigen::VectorXd abs3;
  bool has_abs3 = false;

  MomentSet node(Eigen::Index j) const {
    return {m1[j], m2[j], var[j], has_abs3 ? abs3[j] : 0.0};
  }
};

/// Output-layer Gaussian limit: F(x) ~ N(M, Q).
struct GaussianOutput {
  Eigen::VectorXd M;  // q
  Eigen::MatrixXd Q;  // q x q, symmetric PSD
};

/// Finite-width distance-to-Gaussian diagnostic over convex sets.
struct BentkusDiagnostic {
  double H = 0.0;
  double Theta = 0.0;
  double B_upper = 0.0;         // sqrt(q) * H / Theta^{3/2}
  double convex_set_gap = 0.0;  // 4 * q^{1/4} * B_upper / sqrt(n)
};

/// Forward pass with the intermediates needed for the backward pass.
struct ForwardCache {
  Eigen::VectorXd x;
  HiddenMoments hidden;
  GaussianOutput out;
};

/// Gradients with respect to the trainable mean hyper-parameters
/// (absorbed scaling, matching HyperParams storage).
struct MeanGrads {
  Eigen::MatrixXd mu0;  // n x p
  Eigen::MatrixXd mu1;  // q x n
};

/// Random init: unscaled means iid N(0,1), unscaled standard deviations 1,
/// returned in absorbed form. Deterministic given the seed.
HyperParams init_hyperparams(Eigen::Index p, Eigen::Index n, Eigen::Index q,
                             ActivationKind activation, std::uint64_t seed);

/// Per-node pre-activation parameters a_j, b_j and activation moments for
/// input x. Set with_abs3 when third absolute moments are needed.
HiddenMoments hidden_moments(const HyperParams& hp, const Eigen::VectorXd& x,
                             bool with_abs3 = false);

/// Gaussian-limit output law N(M(x), Q(x)).
GaussianOutput forward(const HyperParams& hp, const Eigen::VectorXd& x);

/// Forward pass keeping the per-node moments for forward_grads.
ForwardCache forward_cached(const HyperParams& hp, const Eigen::VectorXd& x);

/// Reverse-mode accumulation of dL through M and Q into the mean
/// hyper-parameters. dL_dQ must be symmetric and uses the all-entries
/// convention: dL = sum_{i,i'} dL_dQ(i,i') dQ(i,i') over symmetric dQ.
MeanGrads forward_grads(const HyperParams& hp, const ForwardCache& cache,
                        const Eigen::VectorXd& dL_dM, const Eigen::MatrixXd& dL_dQ);

/// Exact draws from the finite-width output law: stage one draws the n
/// hidden nodes, stage two draws each output coordinate conditionally.
/// Rows of the result are realizations. Deterministic given the seed.
Eigen::MatrixXd sample_outputs(const HyperParams& hp, const Eigen::VectorXd& x,
                               Eigen::Index count, std::uint64_t seed);

/// Same two-stage sampler driven by caller-provided standard normals
/// (z0: count x n, z1: count x q). This is how a single pool of draws is
/// reused across many inputs.
Eigen::MatrixXd sample_outputs_with(const HyperParams& hp, const Eigen::VectorXd& x,
                                    const Eigen::MatrixXd& z0, const Eigen::MatrixXd& z1);

/// H, Theta, the B bound and the convex-set gap at input x, evaluated in the
/// unscaled hyper-parameter convention. Theta = 0 yields infinite gap.
BentkusDiagnostic bentkus_diagnostic(const HyperParams& hp, const Eigen::VectorXd& x);

/// Squared Frobenius distance between two configurations in the unscaled
/// convention, summed over the four hyper-parameter blocks.
double lazy_distance(const HyperParams& hp, const HyperParams& hp0);

// --- batched kernels ------------------------------------------------------
// Column-per-example layout; these carry the training loop. X is one row
// per example.

struct BatchForward {
  Eigen::MatrixXd b;     // n x B
  Eigen::MatrixXd a;     // n x B
  Eigen::MatrixXd m1, m2, var;  // n x B
  Eigen::MatrixXd mean;  // q x B
  Eigen::MatrixXd qdiag; // q x B: sum_j sigma1(i,j)^2 m2(j)
};

/// a-part of the batch forward: depends only on sigma0, so it can be
/// computed once per dataset while sigma stays frozen.
Eigen::MatrixXd batch_pre_std(const HyperParams& hp, const Eigen::MatrixXd& X);

BatchForward forward_batch(const HyperParams& hp, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd* pre_std = nullptr);

/// Assembles the q x q covariance for column col of a batch forward.
Eigen::MatrixXd batch_covariance(const HyperParams& hp, const BatchForward& fwd,
                                 Eigen::Index col);

/// Accumulates output-space gradients (per-column dL/dM and dL/dQ) into mean
/// gradients for the whole batch. dL_dQ_flat packs the symmetric q x q
/// matrices column-major, one q*q column per example.
MeanGrads backward_batch(const HyperParams& hp, const Eigen::MatrixXd& X,
                         const BatchForward& fwd, const Eigen::MatrixXd& dL_dM,
                         const Eigen::MatrixXd& dL_dQ_flat);

// --- checkpointing --------------------------------------------------------

struct Checkpoint {
  HyperParams posterior;
  HyperParams prior;
  std::uint64_t root_seed = 0;
  std::uint64_t epoch = 0;
};

/// Versioned binary dump; doubles are stored raw so the round trip is
/// bit-exact. An FNV-1a stamp over the payload is verified on load.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gausspac
