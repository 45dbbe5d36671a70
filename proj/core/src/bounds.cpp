#include "gausspac/bounds.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <thread>
#include <vector>

#include "gausspac/common.hpp"

namespace gausspac {

namespace {

void check_u(double u) {
  require_finite(u, "u");
  require(u >= 0.0 && u <= 1.0, "u must lie in [0, 1]");
}

// kl(u || 1 - w) with the w-terms kept stable near w = 0.
double kl_of_w(double u, double w) {
  double t = 0.0;
  if (u > 0.0) t += u * (std::log(u) - std::log1p(-w));
  if (u < 1.0) t += (1.0 - u) * (std::log(1.0 - u) - std::log(w));
  return t;
}

}  // namespace

double bern_kl(double u, double v) {
  check_u(u);
  require_finite(v, "v");
  require(v > 0.0 && v < 1.0, "bern_kl: v must lie strictly inside (0, 1)");
  double t = 0.0;
  if (u > 0.0) t += u * std::log(u / v);
  if (u < 1.0) t += (1.0 - u) * std::log((1.0 - u) / (1.0 - v));
  return t > 0.0 ? t : 0.0;
}

double bern_kl_one_minus(double u, double one_minus_v) {
  check_u(u);
  require_finite(one_minus_v, "1 - v");
  require(one_minus_v > 0.0 && one_minus_v < 1.0,
          "bern_kl_one_minus: 1 - v must lie strictly inside (0, 1)");
  const double t = kl_of_w(u, one_minus_v);
  return t > 0.0 ? t : 0.0;
}

double bern_kl_inv_one_minus(double u, double c) {
  check_u(u);
  require_finite(c, "c");
  require(c >= 0.0, "bern_kl_inv: c must be nonnegative");
  if (u >= 1.0) return 0.0;
  const double w_max = 1.0 - u;  // root lies in (0, 1-u]
  if (c == 0.0) return w_max;

  // Two starting points, both provably left of the root in w:
  // the Pinsker point 1 - u - sqrt(c/2), and the estimate from dropping the
  // u-term of the kl. Newton on the convex decreasing kl(u||1-w) - c then
  // climbs monotonically to the root.
  double w = w_max * std::exp(-(c - (u > 0.0 ? u * std::log(u) : 0.0)) / (1.0 - u));
  const double pinsker = w_max - std::sqrt(0.5 * c);
  if (pinsker > w) w = pinsker;
  if (w < 1e-300) w = 1e-300;
  if (w > w_max * (1.0 - 1e-15)) w = w_max * (1.0 - 1e-15);

  for (int it = 0; it < 100; ++it) {
    const double g = kl_of_w(u, w) - c;
    if (std::abs(g) <= kKlInvTolerance) break;
    const double slope = u / (1.0 - w) - (1.0 - u) / w;  // d kl / d w, negative
    double next = w - g / slope;
    if (!(next > 0.0 && next < w_max)) next = 0.5 * (w + (g > 0.0 ? w_max : 0.0));
    if (next == w) break;
    w = next;
  }
  return w;
}

double bern_kl_inv(double u, double c) {
  if (u >= 1.0) return 1.0;
  const double v = 1.0 - bern_kl_inv_one_minus(u, c);
  return v < u ? u : v;
}

KlInvGrad bern_kl_inv_grad(double u, double c) {
  require(u > 0.0 && u < 1.0, "bern_kl_inv_grad: u must lie strictly inside (0, 1)");
  require_finite(c, "c");
  require(c > 0.0, "bern_kl_inv_grad: c must be positive");
  const double w = bern_kl_inv_one_minus(u, c);
  const double v = 1.0 - w;
  if (!(v - u > kKlInvTolerance))
    throw std::domain_error("bern_kl_inv_grad: inverse degenerate at v = u");
  const double dkl_dv = (1.0 - u) / w - u / v;
  const double dkl_du = std::log(u / v) - std::log((1.0 - u) / w);
  KlInvGrad g;
  g.dv_dc = 1.0 / dkl_dv;
  g.dv_du = -dkl_du / dkl_dv;
  return g;
}

GaussKl gauss_kl(const HyperParams& post, const HyperParams& prior) {
  require(post.p() == prior.p() && post.n() == prior.n() && post.q() == prior.q(),
          "gauss_kl: dimension mismatch");
  GaussKl out;
  auto accumulate = [&out](const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sigma,
                           const Eigen::MatrixXd& mu_p, const Eigen::MatrixXd& sigma_p,
                           Eigen::MatrixXd& grad) {
    const Eigen::ArrayXXd ratio = sigma.array() / sigma_p.array();
    const Eigen::ArrayXXd shift = (mu.array() - mu_p.array()) / sigma_p.array();
    out.value += 0.5 * (ratio.square() - 1.0 + shift.square() - 2.0 * ratio.log()).sum();
    grad = (shift / sigma_p.array()).matrix();
  };
  accumulate(post.mu0, post.sigma0, prior.mu0, prior.sigma0, out.grad_mu0);
  accumulate(post.mu1, post.sigma1, prior.mu1, prior.sigma1, out.grad_mu1);
  return out;
}

double gauss_kl_value(const HyperParams& post, const HyperParams& prior) {
  require(post.p() == prior.p() && post.n() == prior.n() && post.q() == prior.q(),
          "gauss_kl: dimension mismatch");
  double value = 0.0;
  auto accumulate = [&value](const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sigma,
                             const Eigen::MatrixXd& mu_p, const Eigen::MatrixXd& sigma_p) {
    const Eigen::ArrayXXd ratio = sigma.array() / sigma_p.array();
    const Eigen::ArrayXXd shift = (mu.array() - mu_p.array()) / sigma_p.array();
    value += 0.5 * (ratio.square() - 1.0 + shift.square() - 2.0 * ratio.log()).sum();
  };
  accumulate(post.mu0, post.sigma0, prior.mu0, prior.sigma0);
  accumulate(post.mu1, post.sigma1, prior.mu1, prior.sigma1);
  return value;
}

LazyLemmaCheck lazy_lemma_check(const HyperParams& post, const HyperParams& prior) {
  const double sp = std::sqrt(static_cast<double>(prior.p()));
  const double sn = std::sqrt(static_cast<double>(prior.n()));
  require((prior.sigma0.array() * sp - 1.0).abs().maxCoeff() <= 1e-12 &&
              (prior.sigma1.array() * sn - 1.0).abs().maxCoeff() <= 1e-12,
          "lazy_lemma_check: prior must have unit unscaled sigmas");
  LazyLemmaCheck c;
  c.lhs = lazy_distance(post, prior);
  c.rhs = 2.0 * gauss_kl_value(post, prior);
  c.holds = c.lhs <= c.rhs + 1e-10;
  return c;
}

const char* objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::GStd: return "g-std";
    case ObjectiveKind::GLbd: return "g-lbd";
    case ObjectiveKind::GQuad: return "g-quad";
    case ObjectiveKind::SStd: return "s-std";
    case ObjectiveKind::SLbd: return "s-lbd";
    case ObjectiveKind::SQuad: return "s-quad";
  }
  return "?";
}

ObjectiveKind objective_from_name(const std::string& name) {
  for (ObjectiveKind k : {ObjectiveKind::GStd, ObjectiveKind::GLbd, ObjectiveKind::GQuad,
                          ObjectiveKind::SStd, ObjectiveKind::SLbd, ObjectiveKind::SQuad})
    if (name == objective_name(k)) return k;
  throw std::invalid_argument("unknown objective: " + name);
}

double kl_penalty(double kl, Eigen::Index m, double delta) {
  require(m >= 8, "kl_penalty: m must be at least 8");
  require(delta > 0.0 && delta < 1.0, "kl_penalty: delta must lie in (0, 1)");
  require_finite(kl, "kl");
  require(kl >= 0.0, "kl_penalty: kl must be nonnegative");
  return (kl + std::log(2.0 * std::sqrt(static_cast<double>(m)) / delta)) /
         static_cast<double>(m);
}

double objective(ObjectiveKind kind, double L_S, double kl, Eigen::Index m, double delta,
                 double lambda) {
  const double pen = kl_penalty(kl, m, delta);
  if (objective_has_lambda(kind)) {
    require(lambda > 0.0 && lambda < 1.0, "objective: lambda must lie in (0, 1)");
  }
  switch (kind) {
    case ObjectiveKind::GStd:
      require(L_S >= 0.0 && L_S <= 1.0, "objective: G std needs L_S in [0, 1]");
      return bern_kl_inv(L_S, pen);
    case ObjectiveKind::SStd:
      return L_S + std::sqrt(0.5 * pen);
    case ObjectiveKind::GLbd:
    case ObjectiveKind::SLbd:
      return L_S / (1.0 - 0.5 * lambda) + pen / (lambda * (1.0 - 0.5 * lambda));
    case ObjectiveKind::GQuad:
    case ObjectiveKind::SQuad: {
      const double h = 0.5 * pen;
      const double r = std::sqrt(L_S + h) + std::sqrt(h);
      return r * r;
    }
  }
  throw std::logic_error("objective: unreachable");
}

double mc_empirical_bound(double L_hat, Eigen::Index N, double delta_prime) {
  require(N >= 1, "mc_empirical_bound: N must be positive");
  require(delta_prime > 0.0 && delta_prime < 1.0,
          "mc_empirical_bound: delta' must lie in (0, 1)");
  check_u(L_hat);
  return bern_kl_inv(L_hat, std::log(2.0 / delta_prime) / static_cast<double>(N));
}

void BoundInputs::validate() const {
  require(m >= 8, "BoundInputs: m must be at least 8");
  require(delta > 0.0 && delta < 1.0, "BoundInputs: delta must lie in (0, 1)");
  require(delta_prime > 0.0 && delta_prime < 1.0, "BoundInputs: delta' must lie in (0, 1)");
  require(delta + delta_prime < 1.0, "BoundInputs: delta + delta' must be below 1");
  require(N_mc >= 1, "BoundInputs: N_mc must be positive");
}

namespace {

constexpr Eigen::Index kCertifyBlock = 512;

// Misclassification count of one realization block over every example.
// Integer counts make the reduction order irrelevant, so any worker split
// reproduces the sequential result bit for bit.
std::int64_t certify_block_errors(const HyperParams& hp, const Eigen::MatrixXd& pre_b,
                                  const Eigen::MatrixXd& pre_a, const Eigen::VectorXi& labels,
                                  const Eigen::MatrixXd& mu1_t, const Eigen::MatrixXd& s1sq_t,
                                  Eigen::Index rows, std::uint64_t block_seed) {
  const auto n = hp.n(), q = hp.q();
  const auto m = pre_b.cols();
  std::mt19937_64 rng(block_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd z0(rows, n), z1(rows, q);
  for (Eigen::Index h = 0; h < rows; ++h) {
    for (Eigen::Index j = 0; j < n; ++j) z0(h, j) = gauss(rng);
    for (Eigen::Index i = 0; i < q; ++i) z1(h, i) = gauss(rng);
  }

  std::int64_t errors = 0;
  Eigen::MatrixXd phi(rows, n), means(rows, q), vars(rows, q);
  const bool relu = hp.activation == ActivationKind::ReLU;
  for (Eigen::Index c = 0; c < m; ++c) {
    phi = (z0.array().rowwise() * pre_a.col(c).transpose().array()).rowwise() +
          pre_b.col(c).transpose().array();
    if (relu)
      phi = phi.cwiseMax(0.0);
    else
      phi = phi.array().sin().matrix();
    means.noalias() = phi * mu1_t;
    vars.noalias() = phi.array().square().matrix() * s1sq_t;
    const int want = labels[c] - 1;
    for (Eigen::Index h = 0; h < rows; ++h) {
      int arg = 0;
      double best = means(h, 0) + std::sqrt(vars(h, 0)) * z1(h, 0);
      for (Eigen::Index i = 1; i < q; ++i) {
        const double f = means(h, i) + std::sqrt(vars(h, i)) * z1(h, i);
        if (f > best) {
          best = f;
          arg = static_cast<int>(i);
        }
      }
      if (arg != want) ++errors;
    }
  }
  return errors;
}

}  // namespace

BoundCertificate certify(const HyperParams& hp, const HyperParams& prior,
                         const Eigen::MatrixXd& X, const Eigen::VectorXi& labels,
                         const BoundInputs& inputs, std::uint64_t seed, int workers) {
  inputs.validate();
  hp.validate();
  require(X.rows() == inputs.m, "certify: dataset size does not match BoundInputs.m");
  require(labels.size() == X.rows(), "certify: label count mismatch");
  require(X.cols() == hp.p(), "certify: feature dimension mismatch");
  require((labels.array() >= 1).all() && (labels.array() <= static_cast<int>(hp.q())).all(),
          "certify: labels out of range");

  const Eigen::MatrixXd pre_b = hp.mu0 * X.transpose();
  const Eigen::MatrixXd pre_a = batch_pre_std(hp, X);
  const Eigen::MatrixXd mu1_t = hp.mu1.transpose();
  const Eigen::MatrixXd s1sq_t = hp.sigma1.array().square().matrix().transpose();

  const Eigen::Index blocks = (inputs.N_mc + kCertifyBlock - 1) / kCertifyBlock;
  auto block_rows = [&](Eigen::Index blk) {
    return std::min<Eigen::Index>(kCertifyBlock, inputs.N_mc - blk * kCertifyBlock);
  };
  auto run_blocks = [&](Eigen::Index first, Eigen::Index step) {
    std::int64_t local = 0;
    for (Eigen::Index blk = first; blk < blocks; blk += step)
      local += certify_block_errors(hp, pre_b, pre_a, labels, mu1_t, s1sq_t, block_rows(blk),
                                    mix_seed(seed, 0xce27ull, static_cast<std::uint64_t>(blk)));
    return local;
  };

  std::int64_t errors = 0;
  if (workers <= 1 || blocks <= 1) {
    errors = run_blocks(0, 1);
  } else {
    const int nw = static_cast<int>(std::min<Eigen::Index>(workers, blocks));
    std::vector<std::int64_t> partial(nw, 0);
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (int w = 0; w < nw; ++w)
      pool.emplace_back([&, w] { partial[w] = run_blocks(w, nw); });
    for (auto& t : pool) t.join();
    for (std::int64_t e : partial) errors += e;
  }

  BoundCertificate cert;
  cert.m = inputs.m;
  cert.N_mc = inputs.N_mc;
  cert.delta = inputs.delta;
  cert.delta_prime = inputs.delta_prime;
  cert.seed = seed;
  cert.L_hat = static_cast<double>(errors) /
               (static_cast<double>(inputs.N_mc) * static_cast<double>(inputs.m));
  cert.kl_value = gauss_kl_value(hp, prior);
  cert.kl_inner = mc_empirical_bound(cert.L_hat, inputs.N_mc, inputs.delta_prime);
  cert.kl_penalty = kl_penalty(cert.kl_value, inputs.m, inputs.delta);
  cert.final_bound = bern_kl_inv(cert.kl_inner, cert.kl_penalty);
  return cert;
}

std::string certificate_to_json(const BoundCertificate& cert) {
  nlohmann::json j;
  j["L_hat"] = cert.L_hat;
  j["kl_inner"] = cert.kl_inner;
  j["kl_penalty"] = cert.kl_penalty;
  j["final_bound"] = cert.final_bound;
  j["N_mc"] = cert.N_mc;
  j["delta"] = cert.delta;
  j["delta_prime"] = cert.delta_prime;
  j["m"] = cert.m;
  j["kl_value"] = cert.kl_value;
  j["seed"] = cert.seed;
  j["newton_tolerance"] = cert.newton_tolerance;
  return j.dump(2);
}

BoundCertificate certificate_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  BoundCertificate cert;
  cert.L_hat = j.at("L_hat").get<double>();
  cert.kl_inner = j.at("kl_inner").get<double>();
  cert.kl_penalty = j.at("kl_penalty").get<double>();
  cert.final_bound = j.at("final_bound").get<double>();
  cert.N_mc = j.at("N_mc").get<Eigen::Index>();
  cert.delta = j.at("delta").get<double>();
  cert.delta_prime = j.at("delta_prime").get<double>();
  cert.m = j.at("m").get<Eigen::Index>();
  cert.kl_value = j.at("kl_value").get<double>();
  cert.seed = j.at("seed").get<std::uint64_t>();
  cert.newton_tolerance = j.at("newton_tolerance").get<double>();
  return cert;
}

}  // namespace gausspac
