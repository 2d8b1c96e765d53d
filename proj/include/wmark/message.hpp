#pragma once

// Watermark messages and the metrics that compare an extracted message to one.

#include "wmark/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmark {

enum class MessageKind : std::uint32_t { Bits = 0, Image = 1 };

inline const char* to_string(MessageKind k) { return k == MessageKind::Bits ? "bits" : "image"; }

inline MessageKind message_kind_from(const std::string& s) {
  if (s == "bits") return MessageKind::Bits;
  if (s == "image") return MessageKind::Image;
  throw std::invalid_argument("unknown message kind '" + s + "'");
}

class WatermarkMessage {
 public:
  static WatermarkMessage bits(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("message must be nonempty");
    for (double v : values)
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("bit message values must be 0 or 1");
    WatermarkMessage m;
    m.kind_ = MessageKind::Bits;
    m.values_ = std::move(values);
    return m;
  }

  static WatermarkMessage image(std::size_t width, std::size_t height, std::vector<double> pixels) {
    if (width == 0 || height == 0) throw std::invalid_argument("image message must be nonempty");
    if (pixels.size() != width * height) throw std::invalid_argument("image pixel count != width*height");
    for (double v : pixels)
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image pixels must lie in [0,1]");
    WatermarkMessage m;
    m.kind_ = MessageKind::Image;
    m.values_ = std::move(pixels);
    m.width_ = width;
    m.height_ = height;
    return m;
  }

  static WatermarkMessage random_bits(std::size_t t, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    std::vector<double> v(t);
    for (auto& b : v) b = coin(rng) ? 1.0 : 0.0;
    return bits(std::move(v));
  }

  static WatermarkMessage random_image(std::size_t width, std::size_t height, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(width * height);
    for (auto& p : v) p = u(rng);
    return image(width, height, std::move(v));
  }

  /// A random message of the same variant and size as `like`.
  static WatermarkMessage random_like(const WatermarkMessage& like, std::mt19937_64& rng) {
    return like.kind() == MessageKind::Bits ? random_bits(like.size(), rng)
                                            : random_image(like.width(), like.height(), rng);
  }

  MessageKind kind() const { return kind_; }
  std::size_t size() const { return values_.size(); }
  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const std::vector<double>& values() const { return values_; }
  Tensor as_row() const { return Tensor::matrix(1, values_.size(), values_); }

  bool operator==(const WatermarkMessage&) const = default;

 private:
  MessageKind kind_ = MessageKind::Bits;
  std::vector<double> values_;
  std::size_t width_ = 0;
  std::size_t height_ = 0;
};

/// Extractor output: values in [0,1], tagged with the variant the key was trained for.
struct SoftMessage {
  MessageKind kind = MessageKind::Bits;
  std::vector<double> values;

  /// Hard decoding; 0.5 reads as 1.
  std::vector<int> hard_bits() const {
    std::vector<int> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] >= 0.5 ? 1 : 0;
    return out;
  }
};

/// Fraction of positions with |soft - target| > 0.5 (strict, so 0.5 counts as correct).
inline double ber(const std::vector<double>& extracted, const std::vector<double>& target) {
  if (extracted.size() != target.size() || target.empty())
    throw std::invalid_argument("ber: length mismatch (" + std::to_string(extracted.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (std::fabs(extracted[i] - target[i]) > 0.5) ++errors;
  return static_cast<double>(errors) / static_cast<double>(target.size());
}

inline double ber(const SoftMessage& extracted, const WatermarkMessage& m) {
  if (m.kind() != MessageKind::Bits) throw std::invalid_argument("ber: target is not a bit message");
  return ber(extracted.values, m.values());
}

/// Mean binary cross-entropy for bits, mean squared pixel error for images.
inline double embedding_loss(const SoftMessage& extracted, const WatermarkMessage& m) {
  if (extracted.kind != m.kind()) throw std::invalid_argument("embedding_loss: message variant mismatch");
  if (extracted.values.size() != m.size())
    throw std::invalid_argument("embedding_loss: length mismatch (" + std::to_string(extracted.values.size()) +
                                " vs " + std::to_string(m.size()) + ")");
  double total = 0.0;
  const auto& t = m.values();
  for (std::size_t i = 0; i < t.size(); ++i) {
    double p = extracted.values[i];
    if (m.kind() == MessageKind::Bits) {
      double q = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
      total += -(t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
    } else {
      total += (p - t[i]) * (p - t[i]);
    }
  }
  return total / static_cast<double>(t.size());
}

/// Training distance d(m, y) on an extractor output row: binary cross-entropy summed
/// over the bits, or mean squared pixel error for images.
inline Tensor message_distance(const Tensor& extracted, const WatermarkMessage& m) {
  Tensor target = Tensor(extracted.shape(), m.values());
  if (m.kind() == MessageKind::Bits)
    return scale(binary_cross_entropy(extracted, target), static_cast<double>(m.size()));
  return squared_error(extracted, target);
}

// ---------------------------------------------------------------------------
// Message files: a bit string is one ASCII line of 0/1; an image is
// "width height" followed by one pixel value per token.

inline void write_message(std::ostream& out, const WatermarkMessage& m) {
  if (m.kind() == MessageKind::Bits) {
    for (double v : m.values()) out << (v == 1.0 ? '1' : '0');
    out << '\n';
    return;
  }
  out << m.width() << ' ' << m.height() << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < m.size(); ++i) out << m.values()[i] << ((i + 1) % m.width() ? ' ' : '\n');
}

inline WatermarkMessage read_message(std::istream& in) {
  std::string line;
  while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  auto b = line.find_first_not_of(" \t\r");
  if (b == std::string::npos) throw std::runtime_error("message file is empty");
  auto e = line.find_last_not_of(" \t\r");
  std::string head = line.substr(b, e - b + 1);
  if (head.find_first_not_of("01") == std::string::npos) {
    std::vector<double> v;
    for (char c : head) v.push_back(c == '1' ? 1.0 : 0.0);
    return WatermarkMessage::bits(std::move(v));
  }
  std::istringstream hs(head);
  std::size_t width = 0, height = 0;
  if (!(hs >> width >> height)) throw std::runtime_error("image message: bad 'width height' header");
  std::vector<double> px(width * height);
  for (auto& p : px)
    if (!(in >> p)) throw std::runtime_error("image message: truncated pixel data");
  return WatermarkMessage::image(width, height, std::move(px));
}

inline void save_message(const std::string& path, const WatermarkMessage& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_message(f, m);
}

inline WatermarkMessage load_message(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return read_message(f);
}

}  // namespace wmark
