#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>

namespace gausspac {

/// Labeled dataset: one example per row of X, labels in {1..q}.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXi labels;
  int q = 0;
  std::string name;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index features() const { return X.cols(); }
  void validate() const;

  /// Front slice of the first `count` examples (file order).
  Dataset head(Eigen::Index count) const;
};

struct DatasetFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reads the big-endian IDX image/label pair. Pixels are mapped to [0,1]
/// by /255 and flattened; digit d becomes label d+1.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// Ten-class digits to two classes: digits 0-4 (labels 1-5) -> 1,
/// digits 5-9 (labels 6-10) -> 2.
Dataset binarize_labels(const Dataset& d);

/// Three Gaussian clusters in R^4 projected onto the unit sphere, q = 3.
/// Deterministic given the seed; a zero-norm draw is redrawn.
Dataset make_toy_clusters(Eigen::Index m_per_class, std::uint64_t seed,
                          const std::array<Eigen::Vector4d, 3>& centers,
                          const std::array<double, 3>& spreads);

/// Defaults: centers 3*e1, 3*e2, 3*e3 and spread 0.5 per cluster.
Dataset make_toy_clusters(Eigen::Index m_per_class, std::uint64_t seed);

/// Versioned binary cache; round-trips X and labels bit-exactly.
void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

}  // namespace gausspac
