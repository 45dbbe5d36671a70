#include "gausspac/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>

#include "gausspac/common.hpp"

namespace gausspac {

namespace {

// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the
// orthogonal-polynomial recurrence, weights come from the first components
// of the normalized eigenvectors.
QuadratureRule golub_welsch(const Eigen::VectorXd& offdiag, double mu0) {
  const auto n = offdiag.size() + 1;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, offdiag, Eigen::ComputeEigenvectors);
  QuadratureRule rule;
  rule.nodes = solver.eigenvalues();
  rule.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights[i] = mu0 * v0 * v0;
  }
  return rule;
}

QuadratureRule make_gauss_hermite(int n) {
  Eigen::VectorXd beta(n - 1);
  for (int k = 1; k < n; ++k) beta[k - 1] = std::sqrt(static_cast<double>(k));
  // mu0 = 1: weights normalized against the standard normal density.
  return golub_welsch(beta, 1.0);
}

QuadratureRule make_gauss_legendre(int n) {
  Eigen::VectorXd beta(n - 1);
  for (int k = 1; k < n; ++k) beta[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  return golub_welsch(beta, 2.0);
}

const QuadratureRule& cached_rule(int n, std::map<int, QuadratureRule>& cache, std::mutex& mtx,
                                  QuadratureRule (*make)(int)) {
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make(n)).first;
  return it->second;
}

}  // namespace

const QuadratureRule& gauss_hermite_rule(int n) {
  require(n >= 2 && n <= kMaxQuadratureNodes, "gauss_hermite_rule: node count out of range");
  static std::map<int, QuadratureRule> cache;
  static std::mutex mtx;
  return cached_rule(n, cache, mtx, &make_gauss_hermite);
}

const QuadratureRule& gauss_legendre_rule(int n) {
  require(n >= 2 && n <= kMaxQuadratureNodes, "gauss_legendre_rule: node count out of range");
  static std::map<int, QuadratureRule> cache;
  static std::mutex mtx;
  return cached_rule(n, cache, mtx, &make_gauss_legendre);
}

double integrate_against_normal(const std::function<double(double)>& f, double lo, double hi,
                                const std::vector<double>& breakpoints, int order,
                                double max_width) {
  if (!(lo < hi)) return 0.0;
  std::vector<double> cuts;
  cuts.push_back(lo);
  for (double b : breakpoints)
    if (b > lo && b < hi) cuts.push_back(b);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());

  const QuadratureRule& rule = gauss_legendre_rule(order);
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double seg_lo = cuts[s], seg_hi = cuts[s + 1];
    const int panels = std::max(1, static_cast<int>(std::ceil((seg_hi - seg_lo) / max_width)));
    const double w = (seg_hi - seg_lo) / panels;
    for (int pnl = 0; pnl < panels; ++pnl) {
      const double a = seg_lo + pnl * w;
      const double half = 0.5 * w;
      const double mid = a + half;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) {
        const double z = mid + half * rule.nodes[i];
        acc += rule.weights[i] * f(z) * normal_pdf(z);
      }
      total += acc * half;
    }
  }
  return total;
}

}  // namespace gausspac
