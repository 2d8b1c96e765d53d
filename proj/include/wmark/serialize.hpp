#pragma once

// Binary weight container shared by every network type.
//
//   bytes  field
//   4      magic "WMNN"
//   u32    format version (1)
//   u32    network kind (1 classifier, 2 extractor, 3 detector)
//   u32    output activation (0 identity, 1 sigmoid)
//   u32    layer count L
//   u32    widths[L+1], input first
//   u64    seed
//   then per layer in declaration order: weight (out*in, row-major) and bias (out)
//
// All integers and 64-bit floats are little-endian.

#include "wmark/nets.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmark {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  std::array<unsigned char, sizeof(T)> b{};
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(b.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), sizeof(T))) throw FormatError("truncated weight file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return static_cast<T>(v);
}

inline void put_f64(std::ostream& out, double d) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

inline void put_f64s(std::ostream& out, std::span<const double> v) {
  for (double d : v) put_f64(out, d);
}

inline std::vector<double> get_f64s(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  for (auto& d : v) d = get_f64(in);
  return v;
}

}  // namespace io

inline constexpr std::array<char, 4> kWeightMagic{'W', 'M', 'N', 'N'};
inline constexpr std::uint32_t kWeightVersion = 1;

inline void write_mlp(std::ostream& out, const Mlp& net) {
  out.write(kWeightMagic.data(), 4);
  io::put_le<std::uint32_t>(out, kWeightVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.kind()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.output_activation()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_count()));
  for (auto d : net.dims()) io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  io::put_le<std::uint64_t>(out, net.seed());
  for (const auto& l : net.layers()) {
    io::put_f64s(out, l.weight.data());
    io::put_f64s(out, l.bias.data());
  }
  if (!out) throw FormatError("failed writing weights");
}

inline Mlp read_mlp(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw FormatError("truncated weight file");
  if (magic != kWeightMagic) throw FormatError("not a weight file (bad magic)");
  auto version = io::get_le<std::uint32_t>(in);
  if (version != kWeightVersion) throw FormatError("unsupported weight format version " + std::to_string(version));
  auto kind = io::get_le<std::uint32_t>(in);
  auto act = io::get_le<std::uint32_t>(in);
  if (kind < 1 || kind > 3) throw FormatError("unknown network kind " + std::to_string(kind));
  if (act > 1) throw FormatError("unknown output activation " + std::to_string(act));
  auto count = io::get_le<std::uint32_t>(in);
  if (count == 0 || count > 64) throw FormatError("implausible layer count " + std::to_string(count));
  std::vector<std::size_t> dims(count + 1);
  for (auto& d : dims) {
    d = io::get_le<std::uint32_t>(in);
    if (d == 0) throw FormatError("zero layer width");
  }
  auto seed = io::get_le<std::uint64_t>(in);
  std::vector<Dense> layers;
  for (std::size_t i = 0; i < count; ++i) {
    auto w = io::get_f64s(in, dims[i] * dims[i + 1]);
    auto b = io::get_f64s(in, dims[i + 1]);
    layers.emplace_back(Tensor::matrix(dims[i + 1], dims[i], std::move(w), true),
                        Tensor::vector(std::move(b), true));
  }
  return Mlp(static_cast<NetKind>(kind), static_cast<OutputActivation>(act), seed, std::move(layers));
}

inline void save_mlp(const std::filesystem::path& path, const Mlp& net) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  write_mlp(f, net);
}

inline Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return read_mlp(f);
}

/// Stable 64-bit FNV-1a over the width list; identifies an architecture across processes.
inline std::uint64_t architecture_hash(const std::vector<std::size_t>& dims) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto d : dims) {
    for (int i = 0; i < 4; ++i) {
      h ^= (d >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace wmark
