#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gausspac/network.hpp"

using namespace gausspac;

namespace {

HyperParams tiny_net(Eigen::Index p, Eigen::Index n, Eigen::Index q, std::uint64_t seed,
                     ActivationKind act = ActivationKind::ReLU) {
  return init_hyperparams(p, n, q, act, seed);
}

// Scalar probe L = gM . M + sum(GQ o Q) for finite-differencing the
// reverse pass.
double probe_loss(const HyperParams& hp, const Eigen::VectorXd& x, const Eigen::VectorXd& gM,
                  const Eigen::MatrixXd& GQ) {
  const GaussianOutput out = forward(hp, x);
  return gM.dot(out.M) + (GQ.array() * out.Q.array()).sum();
}

bool fd_matches(double analytic, double fd_value, double rel_tol, double abs_floor = 1e-10) {
  return std::abs(analytic - fd_value) <=
         rel_tol * std::max(std::abs(analytic), std::abs(fd_value)) + abs_floor;
}

}  // namespace

TEST_CASE("initialization follows the absorbed-scaling contract") {
  const HyperParams hp = init_hyperparams(784, 1200, 2, ActivationKind::ReLU, 7);
  CHECK(hp.p() == 784);
  CHECK(hp.n() == 1200);
  CHECK(hp.q() == 2);
  CHECK((hp.sigma0.array() == 1.0 / std::sqrt(784.0)).all());
  CHECK((hp.sigma1.array() == 1.0 / std::sqrt(1200.0)).all());

  const HyperParams again = init_hyperparams(784, 1200, 2, ActivationKind::ReLU, 7);
  CHECK(hp.mu0 == again.mu0);
  CHECK(hp.mu1 == again.mu1);

  const HyperParams other = init_hyperparams(784, 1200, 2, ActivationKind::ReLU, 8);
  CHECK(hp.mu0 != other.mu0);

  // unscaled entries are standard normal; CLT band on their sample mean
  const double unscaled_mean = hp.mu1.mean() * std::sqrt(1200.0);
  CHECK(std::abs(unscaled_mean) <= 4.0 / std::sqrt(2400.0));

  CHECK_THROWS_AS(init_hyperparams(0, 10, 2, ActivationKind::ReLU, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_hyperparams(4, 10, 1, ActivationKind::ReLU, 1), std::invalid_argument);
}

TEST_CASE("hidden moments") {
  HyperParams hp;
  hp.activation = ActivationKind::ReLU;

  SUBCASE("zero input kills every node") {
    hp = tiny_net(3, 5, 2, 42);
    const HiddenMoments hm = hidden_moments(hp, Eigen::VectorXd::Zero(3));
    CHECK((hm.a.array() == 0.0).all());
    CHECK((hm.b.array() == 0.0).all());
    CHECK((hm.m1.array() == 0.0).all());
    CHECK((hm.m2.array() == 0.0).all());
  }

  SUBCASE("single absorbed weight is the identity map") {
    hp.mu0 = Eigen::MatrixXd::Zero(1, 1);
    hp.sigma0 = Eigen::MatrixXd::Constant(1, 1, 1.0);
    hp.mu1 = Eigen::MatrixXd::Constant(2, 1, 0.1);
    hp.sigma1 = Eigen::MatrixXd::Constant(2, 1, 0.5);
    const HiddenMoments hm = hidden_moments(hp, Eigen::VectorXd::Ones(1));
    CHECK(hm.a[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(hm.b[0] == doctest::Approx(0.0));
  }

  SUBCASE("row (1,1) against x = (3,4) gives a = 5") {
    hp.mu0 = Eigen::MatrixXd::Zero(1, 2);
    hp.sigma0 = Eigen::MatrixXd::Ones(1, 2);
    hp.mu1 = Eigen::MatrixXd::Constant(2, 1, 0.1);
    hp.sigma1 = Eigen::MatrixXd::Constant(2, 1, 0.5);
    Eigen::VectorXd x(2);
    x << 3.0, 4.0;
    CHECK(hidden_moments(hp, x).a[0] == doctest::Approx(5.0).epsilon(1e-15));
  }

  SUBCASE("dimension mismatch") {
    hp = tiny_net(3, 5, 2, 42);
    CHECK_THROWS_AS(hidden_moments(hp, Eigen::VectorXd::Zero(4)), std::invalid_argument);
  }
}

TEST_CASE("forward matches the hand-computed two-output instance") {
  HyperParams hp;
  hp.activation = ActivationKind::ReLU;
  hp.mu0 = Eigen::MatrixXd::Zero(1, 1);
  hp.sigma0 = Eigen::MatrixXd::Ones(1, 1);
  hp.mu1 = Eigen::MatrixXd::Ones(2, 1);
  hp.sigma1 = Eigen::MatrixXd::Ones(2, 1);
  const GaussianOutput out = forward(hp, Eigen::VectorXd::Ones(1));

  const double m1 = 0.3989422804014327;
  const double var = 0.34084505690810466;
  CHECK(out.M[0] == doctest::Approx(m1).epsilon(1e-14));
  CHECK(out.M[1] == doctest::Approx(m1).epsilon(1e-14));
  CHECK(out.Q(0, 0) == doctest::Approx(0.5 + var).epsilon(1e-14));
  CHECK(out.Q(1, 1) == doctest::Approx(0.5 + var).epsilon(1e-14));
  CHECK(out.Q(0, 1) == doctest::Approx(var).epsilon(1e-14));
}

TEST_CASE("zero output means produce a diagonal covariance") {
  HyperParams hp = tiny_net(4, 12, 3, 3);
  hp.mu1.setZero();
  const GaussianOutput out = forward(hp, Eigen::VectorXd::Random(4));
  CHECK(out.M.cwiseAbs().maxCoeff() == 0.0);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      if (i != j) CHECK(out.Q(i, j) == 0.0);
}

TEST_CASE("covariance is symmetric PSD on random instances") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    HyperParams hp = tiny_net(6, 20, 4, 1000 + rep,
                              rep % 2 ? ActivationKind::Sin : ActivationKind::ReLU);
    hp.mu0.array() += 0.3;
    Eigen::VectorXd x(6);
    for (int k = 0; k < 6; ++k) x[k] = gauss(rng);
    const GaussianOutput out = forward(hp, x);
    CHECK((out.Q - out.Q.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.Q);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10 * out.Q.trace());
  }
}

TEST_CASE("forward_grads") {
  const Eigen::Index p = 3, n = 4, q = 2;
  HyperParams hp = tiny_net(p, n, q, 5);
  Eigen::VectorXd x(p);
  x << 0.8, -0.4, 1.2;
  const ForwardCache cache = forward_cached(hp, x);

  SUBCASE("zero cotangents give zero gradients") {
    const MeanGrads g =
        forward_grads(hp, cache, Eigen::VectorXd::Zero(q), Eigen::MatrixXd::Zero(q, q));
    CHECK(g.mu0.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.mu1.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("asymmetric dL_dQ is rejected") {
    Eigen::MatrixXd GQ = Eigen::MatrixXd::Zero(q, q);
    GQ(0, 1) = 1.0;
    CHECK_THROWS_AS(forward_grads(hp, cache, Eigen::VectorXd::Zero(q), GQ),
                    std::invalid_argument);
  }

  SUBCASE("matches central finite differences") {
    for (ActivationKind act : {ActivationKind::ReLU, ActivationKind::Sin}) {
      hp.activation = act;
      const ForwardCache fc = forward_cached(hp, x);
      Eigen::VectorXd gM(q);
      gM << 0.7, -1.1;
      Eigen::MatrixXd GQ(q, q);
      GQ << 0.5, -0.3, -0.3, 1.2;
      const MeanGrads g = forward_grads(hp, fc, gM, GQ);

      const double h = 1e-6;
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index k = 0; k < p; ++k) {
          HyperParams hp_plus = hp, hp_minus = hp;
          hp_plus.mu0(j, k) += h;
          hp_minus.mu0(j, k) -= h;
          const double fd =
              (probe_loss(hp_plus, x, gM, GQ) - probe_loss(hp_minus, x, gM, GQ)) / (2 * h);
          CHECK(fd_matches(g.mu0(j, k), fd, 1e-6));
        }
      for (Eigen::Index i = 0; i < q; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          HyperParams hp_plus = hp, hp_minus = hp;
          hp_plus.mu1(i, j) += h;
          hp_minus.mu1(i, j) -= h;
          const double fd =
              (probe_loss(hp_plus, x, gM, GQ) - probe_loss(hp_minus, x, gM, GQ)) / (2 * h);
          CHECK(fd_matches(g.mu1(i, j), fd, 1e-6));
        }
    }
  }

  SUBCASE("M path through mu1 is the plain outer product") {
    Eigen::VectorXd gM(q);
    gM << 1.3, -0.2;
    const MeanGrads g = forward_grads(hp, cache, gM, Eigen::MatrixXd::Zero(q, q));
    for (Eigen::Index i = 0; i < q; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        CHECK(g.mu1(i, j) == doctest::Approx(gM[i] * cache.hidden.m1[j]).epsilon(1e-14));
  }
}

TEST_CASE("batched kernels agree with the per-example path") {
  const Eigen::Index p = 5, n = 7, q = 3, B = 6;
  for (ActivationKind act : {ActivationKind::ReLU, ActivationKind::Sin}) {
    HyperParams hp = tiny_net(p, n, q, 21, act);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(B, p);
    const BatchForward fwd = forward_batch(hp, X);

    Eigen::MatrixXd dM = Eigen::MatrixXd::Random(q, B);
    Eigen::MatrixXd dQ_flat(q * q, B);
    for (Eigen::Index c = 0; c < B; ++c) {
      Eigen::MatrixXd GQ = Eigen::MatrixXd::Random(q, q);
      GQ = ((GQ + GQ.transpose()) / 2).eval();
      dQ_flat.col(c) = Eigen::Map<const Eigen::VectorXd>(GQ.data(), q * q);
    }
    const MeanGrads batch = backward_batch(hp, X, fwd, dM, dQ_flat);

    MeanGrads sum;
    sum.mu0 = Eigen::MatrixXd::Zero(n, p);
    sum.mu1 = Eigen::MatrixXd::Zero(q, n);
    for (Eigen::Index c = 0; c < B; ++c) {
      const ForwardCache fc = forward_cached(hp, X.row(c).transpose());
      CHECK((fc.out.M - fwd.mean.col(c)).cwiseAbs().maxCoeff() <= 1e-13);
      CHECK((fc.out.Q - batch_covariance(hp, fwd, c)).cwiseAbs().maxCoeff() <= 1e-13);
      const Eigen::Map<const Eigen::MatrixXd> GQ(dQ_flat.col(c).data(), q, q);
      const MeanGrads g = forward_grads(hp, fc, dM.col(c), GQ);
      sum.mu0 += g.mu0;
      sum.mu1 += g.mu1;
    }
    CHECK((batch.mu0 - sum.mu0).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((batch.mu1 - sum.mu1).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("exact sampler") {
  SUBCASE("determinism") {
    const HyperParams hp = tiny_net(3, 6, 2, 11);
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
    const Eigen::MatrixXd s1 = sample_outputs(hp, x, 500, 123);
    const Eigen::MatrixXd s2 = sample_outputs(hp, x, 500, 123);
    CHECK(s1 == s2);
    CHECK(sample_outputs(hp, x, 500, 124) != s1);
  }

  SUBCASE("zero-noise limit collapses to the deterministic network") {
    HyperParams hp = tiny_net(3, 6, 2, 11);
    hp.sigma0.setConstant(1e-14);
    hp.sigma1.setConstant(1e-14);
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd phi(6);
    for (Eigen::Index j = 0; j < 6; ++j) phi[j] = std::max(0.0, hp.mu0.row(j).dot(x));
    const Eigen::VectorXd expect = hp.mu1 * phi;
    const Eigen::MatrixXd s = sample_outputs(hp, x, 50, 9);
    for (Eigen::Index h = 0; h < s.rows(); ++h)
      CHECK((s.row(h).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("moments of one million draws match the Gaussian limit") {
    const HyperParams hp = tiny_net(4, 8, 2, 77);
    Eigen::VectorXd x(4);
    x << 1.0, -0.5, 0.25, 2.0;
    const GaussianOutput out = forward(hp, x);
    const Eigen::Index N = 1000000;
    const Eigen::MatrixXd s = sample_outputs(hp, x, N, 4242);
    for (Eigen::Index i = 0; i < 2; ++i) {
      const double mean = s.col(i).mean();
      const double se = std::sqrt(out.Q(i, i) / static_cast<double>(N));
      CHECK(std::abs(mean - out.M[i]) <= 5 * se);
    }
    const Eigen::MatrixXd centered = s.rowwise() - s.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(N - 1);
    for (Eigen::Index i = 0; i < 2; ++i)
      for (Eigen::Index j = 0; j < 2; ++j) {
        const double se = std::sqrt((out.Q(i, i) * out.Q(j, j) + out.Q(i, j) * out.Q(i, j)) /
                                    static_cast<double>(N));
        CHECK(std::abs(cov(i, j) - out.Q(i, j)) <= 5 * se);
      }
  }

  SUBCASE("pool-driven form is deterministic in the pool") {
    const HyperParams hp = tiny_net(3, 5, 2, 13);
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd z0(200, 5), z1(200, 2);
    for (Eigen::Index i = 0; i < 200; ++i) {
      for (Eigen::Index j = 0; j < 5; ++j) z0(i, j) = gauss(rng);
      for (Eigen::Index j = 0; j < 2; ++j) z1(i, j) = gauss(rng);
    }
    const Eigen::MatrixXd s = sample_outputs_with(hp, x, z0, z1);
    CHECK(s.rows() == 200);
    CHECK(s.allFinite());
    CHECK(sample_outputs_with(hp, x, z0, z1) == s);
  }

  SUBCASE("count must be positive") {
    const HyperParams hp = tiny_net(3, 5, 2, 13);
    CHECK_THROWS_AS(sample_outputs(hp, Eigen::VectorXd::Ones(3), 0, 1), std::invalid_argument);
  }
}

TEST_CASE("Bentkus diagnostic") {
  SUBCASE("hand-computed instance") {
    // one hidden node with m2 = 1, abs3 = 1; unit unscaled output sigmas,
    // zero output means: H = 4, Theta = 1, B = 4 sqrt(2)
    HyperParams hp;
    hp.activation = ActivationKind::ReLU;
    hp.mu0 = Eigen::MatrixXd::Ones(1, 1);
    hp.sigma0 = Eigen::MatrixXd::Constant(1, 1, 1e-13);
    hp.mu1 = Eigen::MatrixXd::Zero(2, 1);
    hp.sigma1 = Eigen::MatrixXd::Ones(2, 1);  // n = 1: absorbed equals unscaled
    const BentkusDiagnostic d = bentkus_diagnostic(hp, Eigen::VectorXd::Ones(1));
    CHECK(d.H == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(d.Theta == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d.B_upper == doctest::Approx(4.0 * std::sqrt(2.0)).epsilon(1e-9));
    CHECK(d.convex_set_gap ==
          doctest::Approx(4.0 * std::pow(2.0, 0.25) * 4.0 * std::sqrt(2.0)).epsilon(1e-9));
  }

  SUBCASE("vanishing Theta reports an infinite gap") {
    HyperParams hp;
    hp.activation = ActivationKind::ReLU;
    hp.mu0 = Eigen::MatrixXd::Constant(1, 1, -5.0);
    hp.sigma0 = Eigen::MatrixXd::Constant(1, 1, 1e-300);
    hp.mu1 = Eigen::MatrixXd::Zero(2, 1);
    hp.sigma1 = Eigen::MatrixXd::Ones(2, 1);
    const BentkusDiagnostic d = bentkus_diagnostic(hp, Eigen::VectorXd::Ones(1));
    CHECK(d.Theta == 0.0);
    CHECK(std::isinf(d.B_upper));
    CHECK(std::isinf(d.convex_set_gap));
  }

  SUBCASE("x must be nonzero") {
    const HyperParams hp = tiny_net(3, 5, 2, 2);
    CHECK_THROWS_AS(bentkus_diagnostic(hp, Eigen::VectorXd::Zero(3)), std::invalid_argument);
  }

  SUBCASE("doubling n keeps B bounded") {
    Eigen::VectorXd x(4);
    x << 0.5, 0.5, 0.5, 0.5;
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 9; ++seed) {
      const double b_small =
          bentkus_diagnostic(init_hyperparams(4, 100, 3, ActivationKind::ReLU, seed), x).B_upper;
      const double b_large =
          bentkus_diagnostic(init_hyperparams(4, 3200, 3, ActivationKind::ReLU, seed), x).B_upper;
      ratios.push_back(b_large / b_small);
    }
    std::sort(ratios.begin(), ratios.end());
    CHECK(ratios[4] >= 0.5);  // median of nine seeds
    CHECK(ratios[4] <= 2.0);
  }
}

TEST_CASE("lazy distance") {
  const HyperParams hp = tiny_net(4, 6, 2, 31);
  CHECK(lazy_distance(hp, hp) == 0.0);

  SUBCASE("single unscaled mean shift of 1") {
    HyperParams moved = hp;
    moved.mu0(2, 1) += 1.0 / std::sqrt(4.0);  // +1 in the unscaled convention
    CHECK(lazy_distance(moved, hp) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("random perturbation sums squared Frobenius norms") {
    HyperParams moved = hp;
    const Eigen::MatrixXd d0 = Eigen::MatrixXd::Random(6, 4);
    const Eigen::MatrixXd d1 = Eigen::MatrixXd::Random(2, 6);
    moved.mu0 += d0;
    moved.mu1 += d1;
    const double expect = 4.0 * d0.squaredNorm() + 6.0 * d1.squaredNorm();
    CHECK(lazy_distance(moved, hp) == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(lazy_distance(hp, tiny_net(4, 7, 2, 31)), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "gausspac_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "net.ckpt").string();

  Checkpoint ck;
  ck.posterior = tiny_net(5, 9, 3, 101);
  ck.prior = tiny_net(5, 9, 3, 101);
  ck.posterior.mu0.array() += 0.125;
  ck.root_seed = 0xdeadbeefULL;
  ck.epoch = 42;
  save_checkpoint(path, ck);

  const Checkpoint back = load_checkpoint(path);
  CHECK(back.posterior.mu0 == ck.posterior.mu0);
  CHECK(back.posterior.sigma0 == ck.posterior.sigma0);
  CHECK(back.posterior.mu1 == ck.posterior.mu1);
  CHECK(back.posterior.sigma1 == ck.posterior.sigma1);
  CHECK(back.prior.mu0 == ck.prior.mu0);
  CHECK(back.root_seed == ck.root_seed);
  CHECK(back.epoch == 42);
  CHECK(back.posterior.activation == ck.posterior.activation);

  SUBCASE("tampering trips the integrity stamp") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    const char byte = 0x5a;
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }

  SUBCASE("garbage file is rejected") {
    const std::string bad = (dir / "bad.ckpt").string();
    std::ofstream(bad) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  }
}
