#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "gausspac/network.hpp"

namespace gausspac {

/// KL divergence between Bernoulli(u) and Bernoulli(v). Requires v in (0,1).
double bern_kl(double u, double v);

/// Same divergence with the second argument given as w = 1 - v, evaluated
/// stably for w near 0 (v near 1).
double bern_kl_one_minus(double u, double one_minus_v);

/// Partial inverse v* = sup{v in [0,1] : kl(u||v) <= c}, computed by a
/// monotone-safeguarded Newton iteration started at the Pinsker point,
/// tolerance 1e-12 on the kl value. Returns 1 when the root is closer to 1
/// than one ulp (the bound is then vacuous but still valid).
double bern_kl_inv(double u, double c);

/// Distance 1 - v* of the inverse from 1, exact even when v* rounds to 1.
double bern_kl_inv_one_minus(double u, double c);

inline constexpr double kKlInvTolerance = 1e-12;

/// Implicit-function derivatives of v* = bern_kl_inv(u, c).
struct KlInvGrad {
  double dv_du = 0.0;
  double dv_dc = 0.0;
};
KlInvGrad bern_kl_inv_grad(double u, double c);

/// Diagonal-Gaussian KL(Q||P) over all pn + nq weight coordinates, with the
/// gradient with respect to the posterior means. Both value and gradient are
/// invariant under the absorbed scaling, so everything is evaluated directly
/// on the stored matrices.
struct GaussKl {
  double value = 0.0;
  Eigen::MatrixXd grad_mu0;
  Eigen::MatrixXd grad_mu1;
};
GaussKl gauss_kl(const HyperParams& post, const HyperParams& prior);
double gauss_kl_value(const HyperParams& post, const HyperParams& prior);

/// Checks that the squared hyper-parameter displacement is covered by twice
/// the KL when the prior has unit unscaled sigmas.
struct LazyLemmaCheck {
  double lhs = 0.0;  // lazy_distance
  double rhs = 0.0;  // 2 KL(Q||P)
  bool holds = false;
};
LazyLemmaCheck lazy_lemma_check(const HyperParams& post, const HyperParams& prior);

enum class ObjectiveKind : std::uint8_t { GStd, GLbd, GQuad, SStd, SLbd, SQuad };

const char* objective_name(ObjectiveKind kind);
ObjectiveKind objective_from_name(const std::string& name);
inline bool objective_is_gaussian(ObjectiveKind k) {
  return k == ObjectiveKind::GStd || k == ObjectiveKind::GLbd || k == ObjectiveKind::GQuad;
}
inline bool objective_has_lambda(ObjectiveKind k) {
  return k == ObjectiveKind::GLbd || k == ObjectiveKind::SLbd;
}

/// (KL + log(2 sqrt(m) / delta)) / m.
double kl_penalty(double kl, Eigen::Index m, double delta);

/// Training objective value for the six optimization methods. G kinds expect
/// the Gaussian 0-1 loss in L_S, S kinds the bounded surrogate. lambda is
/// required exactly for the Lbd kinds.
double objective(ObjectiveKind kind, double L_S, double kl, Eigen::Index m, double delta,
                 double lambda = -1.0);

/// High-probability bound on the expected empirical loss from an N-sample MC
/// estimate: kl^-1(L_hat | log(2/delta')/N).
double mc_empirical_bound(double L_hat, Eigen::Index N, double delta_prime);

struct BoundInputs {
  Eigen::Index m = 0;          // training-set size
  double delta = 0.025;        // PAC confidence
  double delta_prime = 0.01;   // certification confidence
  Eigen::Index N_mc = 150000;  // certification sample count
  void validate() const;
};

struct BoundCertificate {
  double L_hat = 0.0;       // MC empirical 0-1 loss over the realization pool
  double kl_inner = 0.0;    // bound on the expected empirical loss
  double kl_penalty = 0.0;  // (KL + log(2 sqrt(m)/delta)) / m
  double final_bound = 0.0;
  Eigen::Index N_mc = 0;
  double delta = 0.0;
  double delta_prime = 0.0;
  // audit fields
  Eigen::Index m = 0;
  double kl_value = 0.0;
  std::uint64_t seed = 0;
  double newton_tolerance = kKlInvTolerance;
};

/// Certifies a trained posterior without the Gaussian assumption: a shared
/// pool of N_mc two-stage realizations is evaluated on every training
/// example; the misclassification rate then goes through the nested
/// kl-inverse composition. Deterministic given the seed; block is internal.
BoundCertificate certify(const HyperParams& hp, const HyperParams& prior,
                         const Eigen::MatrixXd& X, const Eigen::VectorXi& labels,
                         const BoundInputs& inputs, std::uint64_t seed, int workers = 1);

/// Structured audit record of the certificate.
std::string certificate_to_json(const BoundCertificate& cert);
BoundCertificate certificate_from_json(const std::string& text);

}  // namespace gausspac
