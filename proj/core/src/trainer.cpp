#include "gausspac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace gausspac {

namespace {

constexpr double kLambdaFloor = 1e-4;
constexpr double kGradPointClamp = 1e-12;  // keeps kl^-1 linearization off u = 0, 1

struct ObjectiveChain {
  double d_loss = 0.0;  // d objective / d L_S
  double d_kl = 0.0;    // d objective / d KL
};

ObjectiveChain objective_chain(ObjectiveKind kind, double L_S, double kl, Eigen::Index m,
                               double delta, double lambda) {
  const double pen = kl_penalty(kl, m, delta);
  const double md = static_cast<double>(m);
  ObjectiveChain ch;
  switch (kind) {
    case ObjectiveKind::GStd: {
      const double u = std::clamp(L_S, kGradPointClamp, 1.0 - kGradPointClamp);
      const KlInvGrad g = bern_kl_inv_grad(u, pen);
      ch.d_loss = g.dv_du;
      ch.d_kl = g.dv_dc / md;
      break;
    }
    case ObjectiveKind::SStd:
      ch.d_loss = 1.0;
      ch.d_kl = 1.0 / (2.0 * md * std::sqrt(2.0 * pen));
      break;
    case ObjectiveKind::GLbd:
    case ObjectiveKind::SLbd: {
      const double denom = 1.0 - 0.5 * lambda;
      ch.d_loss = 1.0 / denom;
      ch.d_kl = 1.0 / (md * lambda * denom);
      break;
    }
    case ObjectiveKind::GQuad:
    case ObjectiveKind::SQuad: {
      const double h = 0.5 * pen;
      const double sa = std::sqrt(std::max(L_S, 0.0) + h), sb = std::sqrt(h);
      const double r = sa + sb;
      ch.d_loss = r / sa;
      ch.d_kl = r * (1.0 / sa + 1.0 / sb) / (2.0 * md);
      break;
    }
  }
  return ch;
}

double lambda_gradient(double L_S, double pen, double lambda) {
  const double denom = 1.0 - 0.5 * lambda;
  return 0.5 * L_S / (denom * denom) -
         pen * (1.0 - lambda) / (lambda * lambda * denom * denom);
}

// One shared realization of the stage-one/stage-two normals per batch drives
// the surrogate pass; gradients flow pathwise through the sampled logits.
struct SurrogateBatch {
  double value = 0.0;
  MeanGrads grads;
};

SurrogateBatch surrogate_batch(const HyperParams& hp, const Eigen::MatrixXd& X_blk,
                               const Eigen::VectorXi& labels_blk,
                               const Eigen::MatrixXd& pre_std_blk, ObjectiveKind kind,
                               double p0, std::uint64_t seed) {
  const auto n = hp.n(), q = hp.q();
  const auto B = X_blk.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z0(n), z1(q);
  for (Eigen::Index j = 0; j < n; ++j) z0[j] = gauss(rng);
  for (Eigen::Index i = 0; i < q; ++i) z1[i] = gauss(rng);

  Eigen::MatrixXd Y = hp.mu0 * X_blk.transpose();  // n x B
  Y.array() += pre_std_blk.array().colwise() * z0.array();
  const bool relu = hp.activation == ActivationKind::ReLU;
  Eigen::MatrixXd phi = relu ? Y.cwiseMax(0.0).eval() : Y.array().sin().matrix().eval();

  const Eigen::MatrixXd s1sq = hp.sigma1.array().square();
  Eigen::MatrixXd means = hp.mu1 * phi;                            // q x B
  Eigen::MatrixXd stds = (s1sq * phi.array().square().matrix()).cwiseSqrt();
  Eigen::MatrixXd logits = means;
  logits.array() += stds.array().colwise() * z1.array();

  SurrogateBatch out;
  Eigen::MatrixXd gF(q, B);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index c = 0; c < B; ++c) {
    const SurrogateValue sv = surrogate_loss(logits.col(c), labels_blk[c], kind, p0);
    out.value += sv.value * inv_b;
    gF.col(c) = sv.grad_logits * inv_b;
  }

  out.grads.mu1.noalias() = gF * phi.transpose();
  // variance path: d std / d phi(j,c) = sigma1(i,j)^2 phi(j,c) / std(i,c)
  Eigen::MatrixXd W(q, B);
  for (Eigen::Index c = 0; c < B; ++c)
    for (Eigen::Index i = 0; i < q; ++i)
      W(i, c) = stds(i, c) > 1e-300 ? gF(i, c) * z1[i] / stds(i, c) : 0.0;
  Eigen::MatrixXd dphi = hp.mu1.transpose() * gF;
  dphi.array() += (s1sq.transpose() * W).array() * phi.array();
  // d phi / d Y
  if (relu)
    dphi.array() *= (Y.array() > 0.0).cast<double>();
  else
    dphi.array() *= Y.array().cos();
  out.grads.mu0.noalias() = dphi * X_blk;
  return out;
}

std::string grad_diag(const MeanGrads& g) {
  std::ostringstream os;
  os << "|mu0|max=" << g.mu0.cwiseAbs().maxCoeff() << " |mu1|max=" << g.mu1.cwiseAbs().maxCoeff();
  return os.str();
}

}  // namespace

void TrainConfig::validate(int q) const {
  require(!schedule.empty(), "TrainConfig: empty schedule");
  for (const auto& [epochs, lr] : schedule) {
    require(epochs >= 0, "TrainConfig: negative epoch count");
    require(lr > 0.0 && std::isfinite(lr), "TrainConfig: learning rate must be positive");
  }
  require(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum must lie in [0, 1)");
  require(batch_size >= 1, "TrainConfig: batch_size must be positive");
  require(delta > 0.0 && delta < 1.0, "TrainConfig: delta must lie in (0, 1)");
  require(mc_samples_multiclass >= 1, "TrainConfig: mc_samples_multiclass must be positive");
  if (!objective_is_gaussian(objective) && q > 2)
    require(surrogate_clamp_p0 > 0.0 && surrogate_clamp_p0 < 1.0 / q,
            "TrainConfig: p0 must lie in (0, 1/q)");
}

int TrainConfig::total_epochs() const {
  int t = 0;
  for (const auto& [epochs, lr] : schedule) t += epochs;
  return t;
}

SurrogateValue surrogate_loss(const Eigen::VectorXd& logits, int label, ObjectiveKind kind,
                              double p0) {
  require(!objective_is_gaussian(kind), "surrogate_loss: G objectives have no surrogate");
  const auto q = logits.size();
  require(q >= 2, "surrogate_loss: need at least two logits");
  require(label >= 1 && label <= q, "surrogate_loss: label out of range");
  require(logits.allFinite(), "surrogate_loss: logits must be finite");

  const Eigen::Index y = label - 1;
  const Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  const Eigen::VectorXd expv = shifted.array().exp();
  const Eigen::VectorXd probs = expv / expv.sum();

  SurrogateValue sv;
  sv.grad_logits = Eigen::VectorXd::Zero(q);
  if (q == 2) {
    const double scale = 1.0 / std::log(2.0);
    sv.value = -std::log(probs[y]) * scale;
    sv.grad_logits = probs * scale;
    sv.grad_logits[y] -= scale;
    return sv;
  }
  const double scale = 1.0 / std::log(1.0 / p0);
  if (probs[y] <= p0) {
    sv.value = 1.0;  // clamp active: -log(p0) / log(1/p0)
    return sv;
  }
  sv.value = -std::log(probs[y]) * scale;
  sv.grad_logits = probs * scale;
  sv.grad_logits[y] -= scale;
  return sv;
}

void sgd_step(TrainState& state, const MeanGrads& grads, double lr, double momentum) {
  require(grads.mu0.rows() == state.hp.mu0.rows() && grads.mu0.cols() == state.hp.mu0.cols() &&
              grads.mu1.rows() == state.hp.mu1.rows() && grads.mu1.cols() == state.hp.mu1.cols(),
          "sgd_step: gradient shape mismatch");
  if (!grads.mu0.allFinite() || !grads.mu1.allFinite())
    throw std::runtime_error("sgd_step: non-finite gradient at epoch " +
                             std::to_string(state.epoch) + " (" + grad_diag(grads) + ")");
  state.vel_mu0 = state.vel_mu0 * momentum + grads.mu0;
  state.vel_mu1 = state.vel_mu1 * momentum + grads.mu1;
  state.hp.mu0 -= lr * state.vel_mu0;
  state.hp.mu1 -= lr * state.vel_mu1;
}

TrainState train_from(const TrainConfig& config, const Dataset& data, const HyperParams& start,
                      const EpochCallback& on_epoch) {
  data.validate();
  start.validate();
  config.validate(data.q);
  require(data.features() == start.p(), "train: dataset/network feature mismatch");
  require(data.q == start.q(), "train: dataset/network class-count mismatch");
  require(data.size() >= 8, "train: need at least 8 examples for the PAC penalty");

  TrainState st;
  st.hp = start;
  st.prior = start;
  st.vel_mu0 = Eigen::MatrixXd::Zero(start.n(), start.p());
  st.vel_mu1 = Eigen::MatrixXd::Zero(start.q(), start.n());
  st.lambda = 0.5;

  const Eigen::Index m = data.size();
  const bool gaussian = objective_is_gaussian(config.objective);
  const bool has_lambda = objective_has_lambda(config.objective);

  // sigma is frozen, so the pre-activation scales per example never change
  const Eigen::MatrixXd pre_std_all = batch_pre_std(st.hp, data.X);

  auto g_loss_full = [&](int epoch) {
    return batch_loss_value(st.hp, data.X, data.labels, config.mc_samples_multiclass,
                            mix_seed(config.seed, 0x3e7ull, static_cast<std::uint64_t>(epoch)),
                            &pre_std_all);
  };
  auto surrogate_full = [&](int epoch) {
    // one whole-set realization, only used for the epoch-0 metrics row
    return surrogate_batch(st.hp, data.X, data.labels, pre_std_all, config.objective,
                           config.surrogate_clamp_p0,
                           mix_seed(config.seed, 0x5f0ull, static_cast<std::uint64_t>(epoch)))
        .value;
  };

  auto log_epoch = [&](int epoch, double epoch_surrogate) {
    EpochMetrics em;
    em.epoch = epoch;
    const double klv = gauss_kl_value(st.hp, st.prior);
    em.kl_penalty = kl_penalty(klv, m, config.delta);
    em.g_loss = g_loss_full(epoch);
    em.g_bound = bern_kl_inv(em.g_loss, em.kl_penalty);

    const double metric_loss = gaussian ? em.g_loss : epoch_surrogate;
    if (has_lambda && epoch > 0) {
      // lambda alternation: one projected gradient step per epoch, same
      // learning rate as the means
      double lr = config.schedule.front().second;
      int seen = 0;
      for (const auto& [n_ep, seg_lr] : config.schedule) {
        seen += n_ep;
        lr = seg_lr;
        if (epoch <= seen) break;
      }
      st.lambda = std::clamp(st.lambda - lr * lambda_gradient(metric_loss, em.kl_penalty, st.lambda),
                             kLambdaFloor, 1.0 - kLambdaFloor);
    }
    em.lambda = st.lambda;
    em.objective = objective(config.objective, metric_loss, klv, m, config.delta,
                             has_lambda ? st.lambda : -1.0);

    const LazyLemmaCheck lazy = lazy_lemma_check(st.hp, st.prior);
    if (!lazy.holds)
      throw std::runtime_error("lazy lemma violated at epoch " + std::to_string(epoch) +
                               ": distance " + std::to_string(lazy.lhs) + " > 2 KL " +
                               std::to_string(lazy.rhs));
    st.metrics_log.push_back(em);
    if (on_epoch) on_epoch(st, em);
  };

  log_epoch(0, gaussian ? 0.0 : surrogate_full(0));

  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Eigen::MatrixXd X_blk, pre_blk;
  Eigen::VectorXi labels_blk;
  int epoch = 0;
  std::uint64_t step = 0;

  for (const auto& [seg_epochs, lr] : config.schedule) {
    for (int e = 0; e < seg_epochs; ++e) {
      ++epoch;
      st.epoch = epoch;
      std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x50full, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double surrogate_sum = 0.0;
      int batches = 0;
      for (Eigen::Index start_i = 0; start_i < m; start_i += config.batch_size) {
        const Eigen::Index B = std::min(config.batch_size, m - start_i);
        X_blk.resize(B, data.features());
        pre_blk.resize(st.hp.n(), B);
        labels_blk.resize(B);
        for (Eigen::Index r = 0; r < B; ++r) {
          const Eigen::Index src = order[start_i + r];
          X_blk.row(r) = data.X.row(src);
          pre_blk.col(r) = pre_std_all.col(src);
          labels_blk[r] = data.labels[src];
        }

        const GaussKl kl = gauss_kl(st.hp, st.prior);
        double batch_loss;
        MeanGrads loss_grads;
        if (gaussian) {
          BatchLoss bl = batch_expected_loss(st.hp, X_blk, labels_blk,
                                             config.mc_samples_multiclass,
                                             mix_seed(config.seed, 0xb10ull, step), &pre_blk);
          batch_loss = bl.value;
          loss_grads = std::move(bl.grads);
        } else {
          SurrogateBatch sb =
              surrogate_batch(st.hp, X_blk, labels_blk, pre_blk, config.objective,
                              config.surrogate_clamp_p0, mix_seed(config.seed, 0xbadull, step));
          batch_loss = sb.value;
          loss_grads = std::move(sb.grads);
          surrogate_sum += sb.value;
          ++batches;
        }

        const ObjectiveChain ch = objective_chain(config.objective, batch_loss, kl.value, m,
                                                  config.delta, st.lambda);
        MeanGrads grads;
        grads.mu0 = ch.d_loss * loss_grads.mu0 + ch.d_kl * kl.grad_mu0;
        grads.mu1 = ch.d_loss * loss_grads.mu1 + ch.d_kl * kl.grad_mu1;
        sgd_step(st, grads, lr, config.momentum);
        ++step;
      }
      log_epoch(epoch, batches > 0 ? surrogate_sum / batches : 0.0);
    }
  }
  return st;
}

TrainState train(const TrainConfig& config, const Dataset& data, Eigen::Index hidden_n,
                 ActivationKind activation, const EpochCallback& on_epoch) {
  data.validate();
  require(hidden_n >= 1, "train: hidden width must be positive");
  const HyperParams hp = init_hyperparams(data.features(), hidden_n, data.q, activation,
                                          mix_seed(config.seed, 0x171ull));
  return train_from(config, data, hp, on_epoch);
}

}  // namespace gausspac
