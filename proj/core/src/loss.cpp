#include "gausspac/loss.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <random>

namespace gausspac {

namespace {

// One-based label of the other class in a binary problem.
inline int other_label(int label) { return label == 1 ? 2 : 1; }

void check_label(const GaussianOutput& out, int label) {
  require(label >= 1 && label <= out.M.size(), "label out of range");
  require(out.Q.rows() == out.M.size() && out.Q.cols() == out.M.size(),
          "GaussianOutput shape mismatch");
}

// psi(u) = P(Z > u); its derivative is -normal_pdf(u).
inline double psi(double u) { return normal_sf(u); }

// Reverse-mode Cholesky: maps dL/dA into dL/dQ for symmetric Q = A A^T.
// Returns the symmetric sensitivity in the all-entries convention.
Eigen::MatrixXd cholesky_pullback(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Abar) {
  const auto q = A.rows();
  Eigen::MatrixXd P = (A.transpose() * Abar).eval();
  // lower triangle with halved diagonal
  for (Eigen::Index i = 0; i < q; ++i) {
    P(i, i) *= 0.5;
    for (Eigen::Index j = i + 1; j < q; ++j) P(i, j) = 0.0;
  }
  const auto Lt = A.transpose().triangularView<Eigen::Upper>();
  Eigen::MatrixXd S = Lt.solve(P);
  S = Lt.solve(S.transpose()).transpose();
  return 0.5 * (S + S.transpose());
}

}  // namespace

LossValue binary_loss(const GaussianOutput& out, int label) {
  require(out.M.size() == 2, "binary_loss: q must be 2");
  check_label(out, label);
  const int y = label - 1;
  const int o = other_label(label) - 1;
  const double delta = out.M[y] - out.M[o];
  const double v = out.Q(0, 0) + out.Q(1, 1) - 2.0 * out.Q(0, 1);
  require(v >= -1e-12 * (1.0 + out.Q.cwiseAbs().maxCoeff()),
          "binary_loss: negative difference variance");

  LossValue lv;
  lv.grad_M = Eigen::VectorXd::Zero(2);
  lv.grad_Q = Eigen::MatrixXd::Zero(2, 2);
  if (v <= 0.0) {
    lv.value = delta > 0.0 ? 0.0 : 1.0;
    return lv;
  }
  const double sd = std::sqrt(v);
  const double u = delta / sd;
  lv.value = psi(u);

  const double pdf = normal_pdf(u);
  lv.grad_M[y] = -pdf / sd;
  lv.grad_M[o] = pdf / sd;
  // dL/dv with v = Q11 + Q22 - Q12 - Q21
  const double gv = pdf * u / (2.0 * v);
  lv.grad_Q(0, 0) = gv;
  lv.grad_Q(1, 1) = gv;
  lv.grad_Q(0, 1) = -gv;
  lv.grad_Q(1, 0) = -gv;
  return lv;
}

CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& Q) {
  require(Q.rows() == Q.cols() && Q.rows() >= 1, "cholesky_with_jitter: square matrix required");
  require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + Q.cwiseAbs().maxCoeff()),
          "cholesky_with_jitter: matrix must be symmetric");
  const double scale = Q.trace() / static_cast<double>(Q.rows());
  double jitter = 0.0;
  for (int attempt = 0; attempt <= 7; ++attempt) {
    Eigen::MatrixXd Qj = Q;
    if (jitter > 0.0) Qj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(Qj);
    if (llt.info() == Eigen::Success) {
      CholeskyFactor f;
      f.A = llt.matrixL();
      f.jitter_used = jitter;
      // LLT can succeed with zero pivots on the edge of semidefiniteness;
      // a vanishing diagonal would break the reduction downstream.
      if ((f.A.diagonal().array() > 0.0).all()) return f;
    }
    jitter = (jitter == 0.0) ? 1e-12 * scale : 10.0 * jitter;
    if (scale <= 0.0 || jitter > 1e-6 * scale) break;
  }
  throw SingularCovarianceError("covariance not positive definite within jitter budget");
}

LossValue multiclass_loss(const GaussianOutput& out, int label, int samples,
                          std::uint64_t seed) {
  const auto q = out.M.size();
  require(q >= 2, "multiclass_loss: q must be at least 2");
  check_label(out, label);
  require(samples >= 1, "multiclass_loss: samples must be positive");

  // Swap the true label with the last coordinate, then estimate
  // P(Y_q > max_{i<q} Y_i) = E[psi(max_i Xt_i)].
  Eigen::VectorXd M = out.M;
  Eigen::MatrixXd Q = out.Q;
  const Eigen::Index last = q - 1, lab = label - 1;
  if (lab != last) {
    std::swap(M[lab], M[last]);
    Q.row(lab).swap(Q.row(last));
    Q.col(lab).swap(Q.col(last));
  }

  const CholeskyFactor chol = cholesky_with_jitter(Q);
  const Eigen::MatrixXd& A = chol.A;
  const double alpha = 1.0 / A(last, last);

  const Eigen::Index r = q - 1;
  // Xt = At * X + Mt with X ~ N(0, I_r)
  Eigen::MatrixXd At(r, r);
  Eigen::VectorXd Mt(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) At(i, j) = (A(i, j) - A(last, j)) * alpha;
    Mt[i] = (M[i] - M[last]) * alpha;
  }

  std::mt19937_64 rng(mix_seed(seed, 0x9c1ull));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::VectorXd Mbar = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd Abar = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd X(r), Xt(r);
  double sum_psi = 0.0, sum_psi_sq = 0.0;
  const double inv_s = 1.0 / static_cast<double>(samples);

  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < r; ++i) X[i] = gauss(rng);
    Xt.noalias() = At * X + Mt;
    Eigen::Index k = 0;
    double g = Xt[0];
    for (Eigen::Index i = 1; i < r; ++i)
      if (Xt[i] > g) {
        g = Xt[i];
        k = i;
      }
    const double p = psi(g);
    sum_psi += p;
    sum_psi_sq += p * p;

    // value = 1 - mean(psi); d value / d g = normal_pdf(g) / samples
    const double w = normal_pdf(g) * inv_s;
    Mbar[k] += w * alpha;
    Mbar[last] -= w * alpha;
    for (Eigen::Index j = 0; j < r; ++j) {
      Abar(k, j) += w * alpha * X[j];
      Abar(last, j) -= w * alpha * X[j];
    }
    Abar(last, last) -= w * alpha * g;
  }

  LossValue lv;
  const double mean_psi = sum_psi * inv_s;
  lv.value = 1.0 - mean_psi;
  const double var_psi =
      samples > 1 ? std::max(0.0, (sum_psi_sq - samples * mean_psi * mean_psi) /
                                      static_cast<double>(samples - 1))
                  : 0.0;
  lv.mc_stderr = std::sqrt(var_psi * inv_s);

  lv.grad_Q = cholesky_pullback(A, Abar);
  lv.grad_M = Mbar;
  if (lab != last) {
    std::swap(lv.grad_M[lab], lv.grad_M[last]);
    lv.grad_Q.row(lab).swap(lv.grad_Q.row(last));
    lv.grad_Q.col(lab).swap(lv.grad_Q.col(last));
  }
  return lv;
}

namespace {

LossValue per_example_loss(const HyperParams& hp, const GaussianOutput& out, int label,
                           int samples, std::uint64_t seed) {
  if (hp.q() == 2) return binary_loss(out, label);
  return multiclass_loss(out, label, samples, seed);
}

}  // namespace

BatchLoss batch_expected_loss(const HyperParams& hp, const Eigen::MatrixXd& X,
                              const Eigen::VectorXi& labels, int samples_per_example,
                              std::uint64_t seed, const Eigen::MatrixXd* pre_std) {
  const auto B = X.rows();
  require(B >= 1, "batch_expected_loss: empty batch");
  require(labels.size() == B, "batch_expected_loss: label count mismatch");
  const auto q = hp.q();

  const BatchForward fwd = forward_batch(hp, X, pre_std);
  Eigen::MatrixXd dM(q, B);
  Eigen::MatrixXd dQ_flat(q * q, B);
  const double inv_b = 1.0 / static_cast<double>(B);

  BatchLoss bl;
  double var_acc = 0.0;
  for (Eigen::Index c = 0; c < B; ++c) {
    GaussianOutput out;
    out.M = fwd.mean.col(c);
    out.Q = batch_covariance(hp, fwd, c);
    const LossValue lv = per_example_loss(hp, out, labels[c], samples_per_example,
                                          mix_seed(seed, static_cast<std::uint64_t>(c)));
    bl.value += lv.value * inv_b;
    var_acc += lv.mc_stderr * lv.mc_stderr;
    dM.col(c) = lv.grad_M * inv_b;
    dQ_flat.col(c) = Eigen::Map<const Eigen::VectorXd>(lv.grad_Q.data(), q * q) * inv_b;
  }
  bl.mc_stderr = std::sqrt(var_acc) * inv_b;
  bl.grads = backward_batch(hp, X, fwd, dM, dQ_flat);
  return bl;
}

double batch_loss_value(const HyperParams& hp, const Eigen::MatrixXd& X,
                        const Eigen::VectorXi& labels, int samples_per_example,
                        std::uint64_t seed, const Eigen::MatrixXd* pre_std) {
  const auto B = X.rows();
  require(B >= 1, "batch_loss_value: empty batch");
  require(labels.size() == B, "batch_loss_value: label count mismatch");
  const BatchForward fwd = forward_batch(hp, X, pre_std);
  double acc = 0.0;
  for (Eigen::Index c = 0; c < B; ++c) {
    GaussianOutput out;
    out.M = fwd.mean.col(c);
    out.Q = batch_covariance(hp, fwd, c);
    if (hp.q() == 2) {
      acc += binary_loss(out, labels[c]).value;
    } else {
      acc += multiclass_loss(out, labels[c], samples_per_example,
                             mix_seed(seed, static_cast<std::uint64_t>(c)))
                 .value;
    }
  }
  return acc / static_cast<double>(B);
}

}  // namespace gausspac
