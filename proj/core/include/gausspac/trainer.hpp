#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "gausspac/bounds.hpp"
#include "gausspac/dataset.hpp"
#include "gausspac/loss.hpp"

namespace gausspac {

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::GStd;
  std::vector<std::pair<int, double>> schedule = {{100, 1e-3}};  // (epochs, learning rate)
  double momentum = 0.9;
  Eigen::Index batch_size = 256;
  double delta = 0.025;
  int mc_samples_multiclass = 10000;
  std::uint64_t seed = 0;
  double surrogate_clamp_p0 = 1e-5;

  void validate(int q) const;
  int total_epochs() const;
};

struct EpochMetrics {
  int epoch = 0;
  double objective = 0.0;
  double g_loss = 0.0;      // Gaussian expected 0-1 loss over the training set
  double kl_penalty = 0.0;  // (KL + log(2 sqrt(m)/delta)) / m
  double g_bound = 0.0;     // kl^-1(g_loss | kl_penalty)
  double lambda = 0.0;
};

struct TrainState {
  HyperParams hp;
  HyperParams prior;
  Eigen::MatrixXd vel_mu0;
  Eigen::MatrixXd vel_mu1;
  double lambda = 0.5;
  int epoch = 0;
  std::vector<EpochMetrics> metrics_log;
};

/// Bounded surrogate of the 0-1 loss for one sampled realization, with its
/// gradient in the logits. Binary: cross-entropy / log 2. Multiclass:
/// softmax probabilities clamped below at p0, cross-entropy / log(1/p0).
/// Only the S objectives may call this.
struct SurrogateValue {
  double value = 0.0;
  Eigen::VectorXd grad_logits;
};
SurrogateValue surrogate_loss(const Eigen::VectorXd& logits, int label, ObjectiveKind kind,
                              double p0);

/// Momentum update on the mean hyper-parameters:
/// v <- momentum v + g; theta <- theta - lr v.
/// A non-finite gradient aborts with diagnostics instead of being skipped.
void sgd_step(TrainState& state, const MeanGrads& grads, double lr, double momentum);

using EpochCallback = std::function<void(const TrainState&, const EpochMetrics&)>;

/// Full training run: the network is initialized from the config seed, the
/// prior frozen at that initialization, and the chosen objective optimized
/// with momentum SGD over the learning-rate schedule. An epoch-0 metrics row
/// is always logged; Lbd kinds alternate one lambda step per epoch.
TrainState train(const TrainConfig& config, const Dataset& data, Eigen::Index hidden_n,
                 ActivationKind activation, const EpochCallback& on_epoch = {});

/// Same loop from explicit starting hyper-parameters (prior = start).
TrainState train_from(const TrainConfig& config, const Dataset& data, const HyperParams& start,
                      const EpochCallback& on_epoch = {});

}  // namespace gausspac
