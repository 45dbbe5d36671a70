#include "gausspac/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace gausspac {

namespace {

double median(std::vector<double> v) {
  require(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Least-squares slope of y against x.
double regression_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

double ks_normal_distance(const Eigen::VectorXd& samples, double mean, double sd) {
  require(samples.size() >= 1, "ks_normal_distance: empty sample");
  require(sd > 0.0, "ks_normal_distance: sd must be positive");
  std::vector<double> sorted(samples.data(), samples.data() + samples.size());
  std::sort(sorted.begin(), sorted.end());
  const double inv_n = 1.0 / static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = normal_cdf((sorted[i] - mean) / sd);
    d = std::max(d, std::abs(cdf - static_cast<double>(i) * inv_n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) * inv_n - cdf));
  }
  return d;
}

LimitReport limit_check(const HyperParams& hp, const Eigen::VectorXd& x, int label,
                        Eigen::Index n_samples, std::uint64_t seed) {
  require(n_samples >= 1000, "limit_check: need at least 1e3 samples");
  require(label >= 1 && label <= hp.q(), "limit_check: label out of range");
  const auto q = hp.q();

  LimitReport rep;
  rep.n = hp.n();

  const GaussianOutput out = forward(hp, x);
  const Eigen::MatrixXd samples = sample_outputs(hp, x, n_samples, seed);

  rep.ks_per_output.resize(q);
  rep.degenerate = false;
  for (Eigen::Index i = 0; i < q; ++i) {
    const double var = out.Q(i, i);
    if (var <= 1e-300) {
      rep.ks_per_output[i] = 1.0;
      rep.degenerate = true;
      continue;
    }
    rep.ks_per_output[i] = ks_normal_distance(samples.col(i), out.M[i], std::sqrt(var));
  }

  // misclassification rate of the exact draws, by argmax counting
  Eigen::Index errors = 0;
  for (Eigen::Index h = 0; h < n_samples; ++h) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < q; ++i)
      if (samples(h, i) > samples(h, arg)) arg = i;
    if (arg != label - 1) ++errors;
  }
  rep.mc_loss = static_cast<double>(errors) / static_cast<double>(n_samples);
  rep.mc_loss_stderr =
      std::sqrt(rep.mc_loss * (1.0 - rep.mc_loss) / static_cast<double>(n_samples));

  if (q == 2) {
    rep.gauss_loss = binary_loss(out, label).value;
    rep.gauss_loss_stderr = 0.0;
  } else {
    const LossValue lv = multiclass_loss(out, label, 200000, mix_seed(seed, 0x6a5ull));
    rep.gauss_loss = lv.value;
    rep.gauss_loss_stderr = lv.mc_stderr;
  }
  rep.loss_gap = std::abs(rep.mc_loss - rep.gauss_loss);
  rep.convex_gap_bound = bentkus_diagnostic(hp, x).convex_set_gap;
  return rep;
}

ScalingStudy scaling_study(Eigen::Index p, Eigen::Index q, const std::vector<Eigen::Index>& n_grid,
                           const Eigen::VectorXd& x, const std::vector<std::uint64_t>& seeds,
                           ActivationKind activation) {
  require(n_grid.size() >= 4, "scaling_study: need at least 4 grid points");
  require(std::is_sorted(n_grid.begin(), n_grid.end()), "scaling_study: n_grid must be ascending");
  require(!seeds.empty(), "scaling_study: need at least one seed");
  require(x.size() == p, "scaling_study: input dimension mismatch");

  ScalingStudy study;
  study.points.resize(n_grid.size());
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    study.points[gi].n = n_grid[gi];
    study.points[gi].b_upper.reserve(seeds.size());
    study.points[gi].gap.reserve(seeds.size());
  }

  std::vector<double> ratios;
  for (std::uint64_t seed : seeds) {
    std::vector<double> log_n, log_gap;
    for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
      const HyperParams hp = init_hyperparams(p, n_grid[gi], q, activation, seed);
      const BentkusDiagnostic d = bentkus_diagnostic(hp, x);
      study.points[gi].b_upper.push_back(d.B_upper);
      study.points[gi].gap.push_back(d.convex_set_gap);
      log_n.push_back(std::log(static_cast<double>(n_grid[gi])));
      log_gap.push_back(std::log(d.convex_set_gap));
    }
    study.slope_per_seed.push_back(regression_slope(log_n, log_gap));
    ratios.push_back(study.points.back().b_upper.back() / study.points.front().b_upper.back());
  }

  for (auto& pt : study.points) {
    pt.b_upper_median = median(pt.b_upper);
    pt.gap_median = median(pt.gap);
  }
  study.slope_median = median(study.slope_per_seed);
  study.b_ratio_median = median(ratios);
  return study;
}

}  // namespace gausspac
