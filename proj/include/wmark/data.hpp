#pragma once

// Labeled datasets: IDX digit files and a seeded Gaussian-blob task.

#include "wmark/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmark {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<double> x;  // row-major (size, dim)
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }

  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }

  Tensor inputs(std::span<const std::size_t> idx) const {
    std::vector<double> out;
    out.reserve(idx.size() * dim);
    for (auto i : idx) out.insert(out.end(), x.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                  x.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    return Tensor::matrix(idx.size(), dim, std::move(out));
  }

  std::vector<int> labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(y[i]);
    return out;
  }

  Tensor all_inputs() const { return Tensor::matrix(size(), dim, x); }
};

struct TaskData {
  std::string name;
  Dataset train;
  Dataset test;
};

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DatasetError(what + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX3 unsigned-byte image stream into rows of pixels scaled to [0,1].
inline Dataset parse_idx_images(std::istream& in, const std::string& what = "idx images") {
  auto magic = detail::read_be32(in, what);
  if (magic != kIdxImageMagic) throw DatasetError(what + ": bad magic number");
  auto n = detail::read_be32(in, what);
  auto rows = detail::read_be32(in, what);
  auto cols = detail::read_be32(in, what);
  Dataset d;
  d.dim = std::size_t{rows} * cols;
  std::vector<unsigned char> raw(std::size_t{n} * d.dim);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DatasetError(what + ": truncated pixel data");
  d.x.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) d.x[i] = raw[i] / 255.0;
  d.y.assign(n, 0);
  return d;
}

inline std::vector<int> parse_idx_labels(std::istream& in, std::size_t classes,
                                         const std::string& what = "idx labels") {
  auto magic = detail::read_be32(in, what);
  if (magic != kIdxLabelMagic) throw DatasetError(what + ": bad magic number");
  auto n = detail::read_be32(in, what);
  std::vector<unsigned char> raw(n);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DatasetError(what + ": truncated label data");
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (raw[i] >= classes) throw DatasetError(what + ": label " + std::to_string(raw[i]) + " out of range");
    out[i] = raw[i];
  }
  return out;
}

inline Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels,
                             std::size_t classes = 10) {
  std::ifstream fi(images, std::ios::binary);
  if (!fi) throw DatasetError("cannot open " + images.string());
  std::ifstream fl(labels, std::ios::binary);
  if (!fl) throw DatasetError("cannot open " + labels.string());
  Dataset d = parse_idx_images(fi, images.string());
  d.y = parse_idx_labels(fl, classes, labels.string());
  if (d.y.size() * d.dim != d.x.size()) throw DatasetError("image and label counts differ");
  d.classes = classes;
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs

struct SyntheticSpec {
  std::size_t train = 3072;
  std::size_t test = 512;
  std::size_t dim = 64;
  std::size_t classes = 10;
  double center_scale = 0.5;  // per-coordinate std of the class centers
  double noise = 1.0;         // per-coordinate std around a center
  std::uint64_t seed = 20240917;
};

inline TaskData make_synthetic(const SyntheticSpec& spec = {}) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> centers(spec.classes * spec.dim);
  for (auto& c : centers) c = spec.center_scale * gauss(rng);

  auto draw = [&](std::size_t n) {
    Dataset d;
    d.dim = spec.dim;
    d.classes = spec.classes;
    d.x.resize(n * spec.dim);
    d.y.resize(n);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(spec.classes) - 1);
    for (std::size_t i = 0; i < n; ++i) {
      int c = pick(rng);
      d.y[i] = c;
      for (std::size_t j = 0; j < spec.dim; ++j)
        d.x[i * spec.dim + j] = centers[c * spec.dim + j] + spec.noise * gauss(rng);
    }
    return d;
  };
  TaskData task;
  task.name = "synthetic-gaussians";
  task.train = draw(spec.train);
  task.test = draw(spec.test);
  return task;
}

/// `digits-idx` reads the four standard IDX files from `path`; `synthetic-gaussians` ignores it.
inline TaskData load_dataset(const std::string& name, const std::filesystem::path& path = {}) {
  if (name == "synthetic-gaussians") return make_synthetic();
  if (name == "digits-idx") {
    TaskData t;
    t.name = name;
    t.train = load_idx_pair(path / "train-images-idx3-ubyte", path / "train-labels-idx1-ubyte");
    t.test = load_idx_pair(path / "t10k-images-idx3-ubyte", path / "t10k-labels-idx1-ubyte");
    return t;
  }
  throw DatasetError("unknown dataset '" + name + "'");
}

}  // namespace wmark
