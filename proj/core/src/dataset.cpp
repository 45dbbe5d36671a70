#include "gausspac/dataset.hpp"

#include <cstring>
#include <fstream>
#include <random>
#include <vector>

#include "gausspac/common.hpp"

namespace gausspac {

namespace {

std::uint32_t read_be32(std::istream& is, const std::string& what) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw DatasetFormatError("truncated IDX header while reading " + what);
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void Dataset::validate() const {
  require(X.rows() >= 1, "dataset must be nonempty");
  require(q >= 2, "dataset needs at least two classes");
  require(labels.size() == X.rows(), "dataset label count mismatch");
  require((labels.array() >= 1).all() && (labels.array() <= q).all(),
          "dataset labels out of range");
  require(X.allFinite(), "dataset features must be finite");
}

Dataset Dataset::head(Eigen::Index count) const {
  require(count >= 1 && count <= X.rows(), "head: count out of range");
  Dataset d;
  d.X = X.topRows(count);
  d.labels = labels.head(count);
  d.q = q;
  d.name = name + "[:" + std::to_string(count) + "]";
  return d;
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DatasetFormatError("cannot open image file: " + images_path);
  const std::uint32_t magic = read_be32(img, "image magic");
  if (magic != kIdxImagesMagic)
    throw DatasetFormatError("bad IDX image magic in " + images_path);
  const std::uint32_t count = read_be32(img, "image count");
  const std::uint32_t rows = read_be32(img, "image rows");
  const std::uint32_t cols = read_be32(img, "image cols");
  if (count == 0 || rows == 0 || cols == 0)
    throw DatasetFormatError("empty IDX image file: " + images_path);

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> raw(std::size_t(count) * pixels);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!img) throw DatasetFormatError("truncated IDX image payload in " + images_path);

  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw DatasetFormatError("cannot open label file: " + labels_path);
  const std::uint32_t lbl_magic = read_be32(lbl, "label magic");
  if (lbl_magic != kIdxLabelsMagic)
    throw DatasetFormatError("bad IDX label magic in " + labels_path);
  const std::uint32_t lbl_count = read_be32(lbl, "label count");
  if (lbl_count != count)
    throw DatasetFormatError("image/label count mismatch: " + std::to_string(count) + " vs " +
                             std::to_string(lbl_count));
  std::vector<unsigned char> raw_labels(lbl_count);
  lbl.read(reinterpret_cast<char*>(raw_labels.data()),
           static_cast<std::streamsize>(raw_labels.size()));
  if (!lbl) throw DatasetFormatError("truncated IDX label payload in " + labels_path);

  Dataset d;
  d.q = 10;
  d.name = "mnist[0,1]";
  d.X.resize(count, static_cast<Eigen::Index>(pixels));
  d.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < pixels; ++k)
      d.X(i, static_cast<Eigen::Index>(k)) = raw[std::size_t(i) * pixels + k] / 255.0;
    if (raw_labels[i] > 9)
      throw DatasetFormatError("label byte out of range in " + labels_path);
    d.labels[i] = int(raw_labels[i]) + 1;
  }
  d.validate();
  return d;
}

Dataset binarize_labels(const Dataset& d) {
  require(d.q == 10, "binarize_labels: expects a ten-class dataset");
  Dataset out = d;
  out.q = 2;
  out.name = "binary-" + d.name;
  for (Eigen::Index i = 0; i < out.labels.size(); ++i)
    out.labels[i] = out.labels[i] <= 5 ? 1 : 2;
  return out;
}

Dataset make_toy_clusters(Eigen::Index m_per_class, std::uint64_t seed,
                          const std::array<Eigen::Vector4d, 3>& centers,
                          const std::array<double, 3>& spreads) {
  require(m_per_class >= 1, "make_toy_clusters: m_per_class must be positive");
  for (const auto& c : centers) require(c.norm() > 0.0, "make_toy_clusters: centers must be nonzero");
  Dataset d;
  d.q = 3;
  d.name = "toy-clusters";
  d.X.resize(3 * m_per_class, 4);
  d.labels.resize(3 * m_per_class);
  std::mt19937_64 rng(mix_seed(seed, 0x70f0ull));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Index row = 0;
  for (int cls = 0; cls < 3; ++cls) {
    for (Eigen::Index i = 0; i < m_per_class; ++i, ++row) {
      Eigen::Vector4d v;
      do {
        for (int k = 0; k < 4; ++k) v[k] = centers[cls][k] + spreads[cls] * gauss(rng);
      } while (v.norm() == 0.0);
      d.X.row(row) = v.transpose() / v.norm();
      d.labels[row] = cls + 1;
    }
  }
  d.validate();
  return d;
}

Dataset make_toy_clusters(Eigen::Index m_per_class, std::uint64_t seed) {
  std::array<Eigen::Vector4d, 3> centers = {3.0 * Eigen::Vector4d::Unit(0),
                                            3.0 * Eigen::Vector4d::Unit(1),
                                            3.0 * Eigen::Vector4d::Unit(2)};
  return make_toy_clusters(m_per_class, seed, centers, {0.5, 0.5, 0.5});
}

void save_dataset(const std::string& path, const Dataset& d) {
  d.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open dataset cache for writing: " + path);
  os.write("GPDATA01", 8);
  write_pod(os, std::uint32_t{1});
  write_pod(os, static_cast<std::uint64_t>(d.size()));
  write_pod(os, static_cast<std::uint64_t>(d.features()));
  write_pod(os, static_cast<std::uint32_t>(d.q));
  write_pod(os, static_cast<std::uint32_t>(d.name.size()));
  os.write(d.name.data(), static_cast<std::streamsize>(d.name.size()));
  os.write(reinterpret_cast<const char*>(d.X.data()),
           static_cast<std::streamsize>(sizeof(double) * d.X.size()));
  os.write(reinterpret_cast<const char*>(d.labels.data()),
           static_cast<std::streamsize>(sizeof(int) * d.labels.size()));
  if (!os) throw std::runtime_error("dataset cache write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetFormatError("cannot open dataset cache: " + path);
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "GPDATA01", 8) != 0)
    throw DatasetFormatError("not a dataset cache: " + path);
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != 1) throw DatasetFormatError("unsupported dataset cache version");
  std::uint64_t m = 0, p = 0;
  std::uint32_t q = 0, name_len = 0;
  read_pod(is, m);
  read_pod(is, p);
  read_pod(is, q);
  read_pod(is, name_len);
  if (!is || m == 0 || p == 0 || q < 2 || name_len > 4096)
    throw DatasetFormatError("corrupt dataset cache header: " + path);
  Dataset d;
  d.q = static_cast<int>(q);
  d.name.resize(name_len);
  is.read(d.name.data(), name_len);
  d.X.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
  d.labels.resize(static_cast<Eigen::Index>(m));
  is.read(reinterpret_cast<char*>(d.X.data()),
          static_cast<std::streamsize>(sizeof(double) * d.X.size()));
  is.read(reinterpret_cast<char*>(d.labels.data()),
          static_cast<std::streamsize>(sizeof(int) * d.labels.size()));
  if (!is) throw DatasetFormatError("truncated dataset cache: " + path);
  d.validate();
  return d;
}

}  // namespace gausspac
