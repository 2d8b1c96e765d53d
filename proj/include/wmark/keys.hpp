#pragma once

// Extraction-key files. A short text header, a line reading "payload", then the
// binary payload:
//
//   wmark-key 1
//   scheme riga|uchida|deepsigns
//   kind bits|image
//   t <message length>
//   size <width> <height>          (0 0 for bit strings)
//   seed <u64>
//   feature weight-layer <layer>
//   feature activation <layer> <trigger count> <input dim>
//   payload
//   [trigger inputs, count*dim f64]  activation keys only
//   u32 tag (0 projection matrix, 1 extractor network)
//   projection: u32 rows, u32 cols, rows*cols f64
//   extractor:  the network in the weight-file format

#include "wmark/schemes.hpp"
#include "wmark/serialize.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace wmark {

inline void write_key(std::ostream& out, const ExtractionKey& key) {
  out << "wmark-key 1\n";
  out << "scheme " << to_string(key.scheme) << '\n';
  out << "kind " << to_string(key.kind) << '\n';
  out << "t " << key.t << '\n';
  out << "size " << key.width << ' ' << key.height << '\n';
  out << "seed " << key.seed << '\n';
  const ActivationKey* act = std::get_if<ActivationKey>(&key.fe.which);
  if (act) {
    out << "feature activation " << act->layer << ' ' << act->triggers->rows() << ' ' << act->triggers->cols() << '\n';
  } else {
    out << "feature weight-layer " << key.fe.layer() << '\n';
  }
  out << "payload\n";
  if (act) io::put_f64s(out, act->triggers->data());
  if (const auto* z = std::get_if<UchidaMatrix>(&key.me)) {
    io::put_le<std::uint32_t>(out, 0);
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(z->matrix.rows()));
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(z->matrix.cols()));
    io::put_f64s(out, z->matrix.data());
  } else {
    io::put_le<std::uint32_t>(out, 1);
    write_mlp(out, std::get<ExtractorParams>(key.me).net);
  }
  if (!out) throw FormatError("failed writing key");
}

namespace detail {

inline std::istringstream key_line(std::istream& in, const std::string& field) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("key file truncated before '" + field + "'");
  std::istringstream ls(line);
  std::string name;
  ls >> name;
  if (name != field) throw FormatError("key file: expected '" + field + "', found '" + name + "'");
  return ls;
}

}  // namespace detail

inline ExtractionKey read_key(std::istream& in) {
  ExtractionKey key;
  {
    auto ls = detail::key_line(in, "wmark-key");
    int version = 0;
    if (!(ls >> version) || version != 1) throw FormatError("unsupported key file version");
  }
  std::string word;
  detail::key_line(in, "scheme") >> word;
  key.scheme = scheme_from(word);
  detail::key_line(in, "kind") >> word;
  key.kind = message_kind_from(word);
  if (!(detail::key_line(in, "t") >> key.t) || key.t == 0) throw FormatError("key file: bad message length");
  if (!(detail::key_line(in, "size") >> key.width >> key.height)) throw FormatError("key file: bad size line");
  if (!(detail::key_line(in, "seed") >> key.seed)) throw FormatError("key file: bad seed");

  auto fl = detail::key_line(in, "feature");
  std::string variant;
  std::size_t layer = 0, count = 0, dim = 0;
  fl >> variant >> layer;
  if (!fl) throw FormatError("key file: bad feature line");
  bool activation = variant == "activation";
  if (activation) {
    if (!(fl >> count >> dim) || count == 0 || dim == 0) throw FormatError("key file: bad trigger dims");
  } else if (variant != "weight-layer") {
    throw FormatError("key file: unknown feature variant '" + variant + "'");
  }
  detail::key_line(in, "payload");

  if (activation) {
    key.fe = FeatureKey::activation(layer, Tensor::matrix(count, dim, io::get_f64s(in, count * dim)));
  } else {
    key.fe = FeatureKey::weight_layer(layer);
  }
  auto tag = io::get_le<std::uint32_t>(in);
  if (tag == 0) {
    auto rows = io::get_le<std::uint32_t>(in);
    auto cols = io::get_le<std::uint32_t>(in);
    key.me = UchidaMatrix{Tensor::matrix(rows, cols, io::get_f64s(in, std::size_t{rows} * cols))};
  } else if (tag == 1) {
    key.me = ExtractorParams{read_mlp(in)};
  } else {
    throw FormatError("key file: unknown payload tag " + std::to_string(tag));
  }
  std::size_t out = tag == 0 ? std::get<UchidaMatrix>(key.me).matrix.rows()
                             : std::get<ExtractorParams>(key.me).net.output_dim();
  if (out != key.t) throw FormatError("key file: payload output length does not match t");
  return key;
}

inline void save_key(const std::filesystem::path& path, const ExtractionKey& key) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  write_key(f, key);
}

inline ExtractionKey load_key(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return read_key(f);
}

}  // namespace wmark
