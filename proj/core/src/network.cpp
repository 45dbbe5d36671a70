#include "gausspac/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace gausspac {

namespace {

void check_input(const HyperParams& hp, const Eigen::VectorXd& x) {
  require(x.size() == hp.p(), "input dimension mismatch");
  require(x.allFinite(), "input must be finite");
}

// Elementwise moments over (a, b) matrices, column per example.
void fill_moments(ActivationKind kind, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                  Eigen::MatrixXd& m1, Eigen::MatrixXd& m2, Eigen::MatrixXd& var) {
  const auto rows = a.rows(), cols = a.cols();
  m1.resize(rows, cols);
  m2.resize(rows, cols);
  var.resize(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const double* pa = a.col(c).data();
    const double* pb = b.col(c).data();
    double* p1 = m1.col(c).data();
    double* p2 = m2.col(c).data();
    double* pv = var.col(c).data();
    if (kind == ActivationKind::ReLU) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        p1[r] = detail::relu_m1(pa[r], pb[r]);
        p2[r] = detail::relu_m2(pa[r], pb[r]);
        pv[r] = detail::clamp_var(p1[r], p2[r]);
      }
    } else {
      for (Eigen::Index r = 0; r < rows; ++r) {
        p1[r] = detail::sin_m1(pa[r], pb[r]);
        p2[r] = detail::sin_m2(pa[r], pb[r]);
        pv[r] = detail::clamp_var(p1[r], p2[r]);
      }
    }
  }
}

// d m1/db and d m2/db per node; a = 0 nodes get the one-sided limits (they
// only occur for x = 0, where the chained input gradient vanishes anyway).
void fill_db_partials(ActivationKind kind, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                      const Eigen::VectorXd& m1, Eigen::VectorXd& dm1_db,
                      Eigen::VectorXd& dm2_db) {
  const auto n = a.size();
  dm1_db.resize(n);
  dm2_db.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (kind == ActivationKind::ReLU) {
      if (a[j] > 0.0) {
        dm1_db[j] = normal_cdf(b[j] / a[j]);
      } else {
        dm1_db[j] = b[j] > 0.0 ? 1.0 : (b[j] < 0.0 ? 0.0 : 0.5);
      }
      dm2_db[j] = 2.0 * m1[j];
    } else {
      const double e1 = std::exp(-0.5 * a[j] * a[j]);
      const double e2 = std::exp(-2.0 * a[j] * a[j]);
      dm1_db[j] = e1 * std::cos(b[j]);
      dm2_db[j] = e2 * std::sin(2.0 * b[j]);
    }
  }
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void read_matrix(std::istream& is, Eigen::MatrixXd& m) {
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
}

std::uint64_t hash_matrix(std::uint64_t h, const Eigen::MatrixXd& m) {
  return fnv1a64(m.data(), sizeof(double) * m.size(), h);
}

std::uint64_t checkpoint_hash(const Checkpoint& ck) {
  std::uint64_t h = fnv1a64("GPCKPT01", 8);
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(ck.posterior.p()),
                                 static_cast<std::uint64_t>(ck.posterior.n()),
                                 static_cast<std::uint64_t>(ck.posterior.q())};
  h = fnv1a64(dims, sizeof(dims), h);
  const std::uint8_t act = static_cast<std::uint8_t>(ck.posterior.activation);
  h = fnv1a64(&act, 1, h);
  h = fnv1a64(&ck.root_seed, sizeof(ck.root_seed), h);
  h = fnv1a64(&ck.epoch, sizeof(ck.epoch), h);
  for (const HyperParams* hp : {&ck.posterior, &ck.prior}) {
    h = hash_matrix(h, hp->mu0);
    h = hash_matrix(h, hp->sigma0);
    h = hash_matrix(h, hp->mu1);
    h = hash_matrix(h, hp->sigma1);
  }
  return h;
}

}  // namespace

void HyperParams::validate() const {
  require(n() >= 1 && p() >= 1, "need n >= 1 and p >= 1");
  require(q() >= 2, "need q >= 2");
  require(sigma0.rows() == n() && sigma0.cols() == p(), "sigma0 shape mismatch");
  require(mu1.cols() == n(), "mu1 shape mismatch");
  require(sigma1.rows() == q() && sigma1.cols() == n(), "sigma1 shape mismatch");
  require((sigma0.array() > 0.0).all(), "sigma0 entries must be positive");
  require((sigma1.array() > 0.0).all(), "sigma1 entries must be positive");
  require(mu0.allFinite() && mu1.allFinite(), "means must be finite");
}

HyperParams init_hyperparams(Eigen::Index p, Eigen::Index n, Eigen::Index q,
                             ActivationKind activation, std::uint64_t seed) {
  require(p >= 1 && n >= 1, "init_hyperparams: need p >= 1 and n >= 1");
  require(q >= 2, "init_hyperparams: need q >= 2");
  HyperParams hp;
  hp.activation = activation;
  const double sp = 1.0 / std::sqrt(static_cast<double>(p));
  const double sn = 1.0 / std::sqrt(static_cast<double>(n));
  hp.mu0.resize(n, p);
  hp.mu1.resize(q, n);
  hp.sigma0 = Eigen::MatrixXd::Constant(n, p, sp);
  hp.sigma1 = Eigen::MatrixXd::Constant(q, n, sn);

  std::mt19937_64 rng(mix_seed(seed, 0x1a17u));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < p; ++k) hp.mu0(j, k) = gauss(rng) * sp;
  for (Eigen::Index i = 0; i < q; ++i)
    for (Eigen::Index j = 0; j < n; ++j) hp.mu1(i, j) = gauss(rng) * sn;
  return hp;
}

HiddenMoments hidden_moments(const HyperParams& hp, const Eigen::VectorXd& x, bool with_abs3) {
  check_input(hp, x);
  HiddenMoments hm;
  hm.b = hp.mu0 * x;
  hm.a = (hp.sigma0.array().square().matrix() * x.array().square().matrix())
             .array()
             .sqrt()
             .matrix();
  const auto n = hp.n();
  hm.m1.resize(n);
  hm.m2.resize(n);
  hm.var.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (hp.activation == ActivationKind::ReLU) {
      hm.m1[j] = detail::relu_m1(hm.a[j], hm.b[j]);
      hm.m2[j] = detail::relu_m2(hm.a[j], hm.b[j]);
    } else {
      hm.m1[j] = detail::sin_m1(hm.a[j], hm.b[j]);
      hm.m2[j] = detail::sin_m2(hm.a[j], hm.b[j]);
    }
    hm.var[j] = detail::clamp_var(hm.m1[j], hm.m2[j]);
  }
  if (with_abs3) {
    hm.abs3.resize(n);
    for (Eigen::Index j = 0; j < n; ++j)
      hm.abs3[j] = moment_abs3(hp.activation, {hm.a[j], hm.b[j]});
    hm.has_abs3 = true;
  }
  return hm;
}

ForwardCache forward_cached(const HyperParams& hp, const Eigen::VectorXd& x) {
  ForwardCache fc;
  fc.x = x;
  fc.hidden = hidden_moments(hp, x);
  fc.out.M = hp.mu1 * fc.hidden.m1;
  Eigen::MatrixXd Q = hp.mu1 * fc.hidden.var.asDiagonal() * hp.mu1.transpose();
  Q += (hp.sigma1.array().square().matrix() * fc.hidden.m2).asDiagonal();
  fc.out.Q = 0.5 * (Q + Q.transpose());
  return fc;
}

GaussianOutput forward(const HyperParams& hp, const Eigen::VectorXd& x) {
  return forward_cached(hp, x).out;
}

MeanGrads forward_grads(const HyperParams& hp, const ForwardCache& cache,
                        const Eigen::VectorXd& dL_dM, const Eigen::MatrixXd& dL_dQ) {
  const auto q = hp.q(), n = hp.n();
  require(cache.x.size() == hp.p() && cache.hidden.m1.size() == n,
          "forward_grads: cache does not match the network");
  require(dL_dM.size() == q, "dL_dM shape mismatch");
  require(dL_dQ.rows() == q && dL_dQ.cols() == q, "dL_dQ shape mismatch");
  require((dL_dQ - dL_dQ.transpose()).cwiseAbs().maxCoeff() <=
              1e-8 * (1.0 + dL_dQ.cwiseAbs().maxCoeff()),
          "dL_dQ must be symmetric");

  const HiddenMoments& hm = cache.hidden;
  const Eigen::MatrixXd T = dL_dQ * hp.mu1;                                   // q x n
  const Eigen::VectorXd sv = hp.mu1.cwiseProduct(T).colwise().sum();          // dL/dvar
  const Eigen::VectorXd s1 =
      hp.mu1.transpose() * dL_dM - 2.0 * hm.m1.cwiseProduct(sv);              // dL/dm1
  const Eigen::VectorXd s2 =
      hp.sigma1.array().square().matrix().transpose() * dL_dQ.diagonal() + sv;  // dL/dm2

  Eigen::VectorXd dm1_db, dm2_db;
  fill_db_partials(hp.activation, hm.a, hm.b, hm.m1, dm1_db, dm2_db);
  const Eigen::VectorXd db = s1.cwiseProduct(dm1_db) + s2.cwiseProduct(dm2_db);

  MeanGrads g;
  g.mu1 = dL_dM * hm.m1.transpose();
  g.mu1.array() += 2.0 * (T.array().rowwise() * hm.var.transpose().array());
  g.mu0 = db * cache.x.transpose();
  return g;
}

Eigen::MatrixXd sample_outputs_with(const HyperParams& hp, const Eigen::VectorXd& x,
                                    const Eigen::MatrixXd& z0, const Eigen::MatrixXd& z1) {
  check_input(hp, x);
  require(z0.cols() == hp.n() && z1.cols() == hp.q() && z0.rows() == z1.rows(),
          "sample_outputs_with: draw pool shape mismatch");
  HiddenMoments hm;
  hm.b = hp.mu0 * x;
  hm.a = (hp.sigma0.array().square().matrix() * x.array().square().matrix())
             .array()
             .sqrt()
             .matrix();

  Eigen::MatrixXd phi =
      (z0.array().rowwise() * hm.a.transpose().array()).rowwise() + hm.b.transpose().array();
  if (hp.activation == ActivationKind::ReLU)
    phi = phi.cwiseMax(0.0);
  else
    phi = phi.array().sin().matrix();

  Eigen::MatrixXd out = phi * hp.mu1.transpose();  // conditional means
  const Eigen::MatrixXd cond_var =
      phi.array().square().matrix() * hp.sigma1.array().square().matrix().transpose();
  out.array() += cond_var.array().sqrt() * z1.array();
  return out;
}

Eigen::MatrixXd sample_outputs(const HyperParams& hp, const Eigen::VectorXd& x,
                               Eigen::Index count, std::uint64_t seed) {
  check_input(hp, x);
  require(count >= 1, "sample_outputs: count must be positive");
  const auto n = hp.n(), q = hp.q();

  HiddenMoments hm;
  hm.b = hp.mu0 * x;
  hm.a = (hp.sigma0.array().square().matrix() * x.array().square().matrix())
             .array()
             .sqrt()
             .matrix();

  std::mt19937_64 rng(mix_seed(seed, 0x5a3fu));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd out(count, q);
  Eigen::VectorXd phi(n);
  for (Eigen::Index h = 0; h < count; ++h) {
    for (Eigen::Index j = 0; j < n; ++j)
      phi[j] = apply_activation(hp.activation, hm.a[j] * gauss(rng) + hm.b[j]);
    for (Eigen::Index i = 0; i < q; ++i) {
      const double mean = hp.mu1.row(i).dot(phi);
      const double var = hp.sigma1.row(i).array().square().matrix().dot(
          phi.array().square().matrix());
      out(h, i) = std::sqrt(var) * gauss(rng) + mean;
    }
  }
  return out;
}

BentkusDiagnostic bentkus_diagnostic(const HyperParams& hp, const Eigen::VectorXd& x) {
  check_input(hp, x);
  require(!x.isZero(0.0), "bentkus_diagnostic: x must be nonzero");
  const auto n = hp.n(), q = hp.q();
  const double sqrt_n = std::sqrt(static_cast<double>(n));

  const HiddenMoments hm = hidden_moments(hp, x, /*with_abs3=*/true);
  const Eigen::MatrixXd s1u = hp.sigma1 * sqrt_n;  // unscaled convention
  const Eigen::MatrixXd m1u = hp.mu1 * sqrt_n;

  BentkusDiagnostic d;
  double h_sum = 0.0, theta_sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double coeff = 0.0;
    double min_s2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < q; ++i) {
      const double s = std::abs(s1u(i, j));
      const double m = std::abs(m1u(i, j));
      coeff += 2.0 * s * s * s + 8.0 * m * m * m;
      min_s2 = std::min(min_s2, s * s);
    }
    h_sum += coeff * hm.abs3[j];
    theta_sum += hm.m2[j] * min_s2;
  }
  d.H = h_sum / static_cast<double>(n);
  d.Theta = theta_sum / static_cast<double>(n);
  if (d.Theta > 0.0) {
    d.B_upper = std::sqrt(static_cast<double>(q)) * d.H / std::pow(d.Theta, 1.5);
  } else {
    d.B_upper = std::numeric_limits<double>::infinity();
  }
  d.convex_set_gap =
      4.0 * std::pow(static_cast<double>(q), 0.25) * d.B_upper / sqrt_n;
  return d;
}

double lazy_distance(const HyperParams& hp, const HyperParams& hp0) {
  require(hp.p() == hp0.p() && hp.n() == hp0.n() && hp.q() == hp0.q(),
          "lazy_distance: dimension mismatch");
  const double p = static_cast<double>(hp.p());
  const double n = static_cast<double>(hp.n());
  return p * (hp.mu0 - hp0.mu0).squaredNorm() + p * (hp.sigma0 - hp0.sigma0).squaredNorm() +
         n * (hp.mu1 - hp0.mu1).squaredNorm() + n * (hp.sigma1 - hp0.sigma1).squaredNorm();
}

Eigen::MatrixXd batch_pre_std(const HyperParams& hp, const Eigen::MatrixXd& X) {
  require(X.cols() == hp.p(), "batch_pre_std: feature dimension mismatch");
  return (hp.sigma0.array().square().matrix() * X.array().square().matrix().transpose())
      .array()
      .sqrt()
      .matrix();
}

BatchForward forward_batch(const HyperParams& hp, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd* pre_std) {
  require(X.cols() == hp.p(), "forward_batch: feature dimension mismatch");
  BatchForward f;
  f.b.noalias() = hp.mu0 * X.transpose();
  f.a = pre_std ? *pre_std : batch_pre_std(hp, X);
  require(f.a.rows() == hp.n() && f.a.cols() == X.rows(), "forward_batch: pre_std shape mismatch");
  fill_moments(hp.activation, f.a, f.b, f.m1, f.m2, f.var);
  f.mean.noalias() = hp.mu1 * f.m1;
  f.qdiag.noalias() = hp.sigma1.array().square().matrix() * f.m2;
  return f;
}

Eigen::MatrixXd batch_covariance(const HyperParams& hp, const BatchForward& fwd,
                                 Eigen::Index col) {
  Eigen::MatrixXd Q =
      hp.mu1 * fwd.var.col(col).asDiagonal() * hp.mu1.transpose();
  Q += fwd.qdiag.col(col).asDiagonal();
  return 0.5 * (Q + Q.transpose());
}

MeanGrads backward_batch(const HyperParams& hp, const Eigen::MatrixXd& X,
                         const BatchForward& fwd, const Eigen::MatrixXd& dL_dM,
                         const Eigen::MatrixXd& dL_dQ_flat) {
  const auto q = hp.q(), n = hp.n();
  const auto B = X.rows();
  require(dL_dM.rows() == q && dL_dM.cols() == B, "backward_batch: dL_dM shape mismatch");
  require(dL_dQ_flat.rows() == q * q && dL_dQ_flat.cols() == B,
          "backward_batch: dL_dQ shape mismatch");

  MeanGrads g;
  g.mu1 = Eigen::MatrixXd::Zero(q, n);
  Eigen::MatrixXd DB(n, B);
  const Eigen::MatrixXd sigma1_sq = hp.sigma1.array().square();
  Eigen::VectorXd dm1_db, dm2_db;
  for (Eigen::Index c = 0; c < B; ++c) {
    const Eigen::Map<const Eigen::MatrixXd> GQ(dL_dQ_flat.col(c).data(), q, q);
    const Eigen::MatrixXd T = GQ * hp.mu1;
    const Eigen::VectorXd sv = hp.mu1.cwiseProduct(T).colwise().sum();
    const Eigen::VectorXd s1 =
        hp.mu1.transpose() * dL_dM.col(c) - 2.0 * fwd.m1.col(c).cwiseProduct(sv);
    const Eigen::VectorXd s2 = sigma1_sq.transpose() * GQ.diagonal() + sv;
    fill_db_partials(hp.activation, fwd.a.col(c), fwd.b.col(c), fwd.m1.col(c), dm1_db, dm2_db);
    DB.col(c) = s1.cwiseProduct(dm1_db) + s2.cwiseProduct(dm2_db);
    g.mu1.noalias() += dL_dM.col(c) * fwd.m1.col(c).transpose();
    g.mu1.array() += 2.0 * (T.array().rowwise() * fwd.var.col(c).transpose().array());
  }
  g.mu0.noalias() = DB * X;
  return g;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  ck.posterior.validate();
  ck.prior.validate();
  require(ck.prior.p() == ck.posterior.p() && ck.prior.n() == ck.posterior.n() &&
              ck.prior.q() == ck.posterior.q(),
          "checkpoint: prior/posterior dimension mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write("GPCKPT01", 8);
  write_pod(os, std::uint32_t{1});
  write_pod(os, static_cast<std::uint64_t>(ck.posterior.p()));
  write_pod(os, static_cast<std::uint64_t>(ck.posterior.n()));
  write_pod(os, static_cast<std::uint64_t>(ck.posterior.q()));
  write_pod(os, static_cast<std::uint8_t>(ck.posterior.activation));
  write_pod(os, ck.root_seed);
  write_pod(os, ck.epoch);
  for (const HyperParams* hp : {&ck.posterior, &ck.prior}) {
    write_matrix(os, hp->mu0);
    write_matrix(os, hp->sigma0);
    write_matrix(os, hp->mu1);
    write_matrix(os, hp->sigma1);
  }
  write_pod(os, checkpoint_hash(ck));
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "GPCKPT01", 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  std::uint64_t p = 0, n = 0, q = 0;
  std::uint8_t act = 0;
  Checkpoint ck;
  read_pod(is, p);
  read_pod(is, n);
  read_pod(is, q);
  read_pod(is, act);
  read_pod(is, ck.root_seed);
  read_pod(is, ck.epoch);
  if (!is || p == 0 || n == 0 || q < 2 || act > 1)
    throw std::runtime_error("corrupt checkpoint header: " + path);
  for (HyperParams* hp : {&ck.posterior, &ck.prior}) {
    hp->activation = static_cast<ActivationKind>(act);
    hp->mu0.resize(n, p);
    hp->sigma0.resize(n, p);
    hp->mu1.resize(q, n);
    hp->sigma1.resize(q, n);
    read_matrix(is, hp->mu0);
    read_matrix(is, hp->sigma0);
    read_matrix(is, hp->mu1);
    read_matrix(is, hp->sigma1);
  }
  std::uint64_t stored_hash = 0;
  read_pod(is, stored_hash);
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  if (stored_hash != checkpoint_hash(ck))
    throw std::runtime_error("checkpoint integrity check failed: " + path);
  ck.posterior.validate();
  ck.prior.validate();
  return ck;
}

}  // namespace gausspac
