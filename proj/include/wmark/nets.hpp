#pragma once

// Fully-connected networks used by the toolkit: the target classifier, the
// neural message extractor, and the detector/critic. Also the feature
// extraction functions that select the watermark carrier from a classifier.

#include "wmark/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace wmark {

using WeightVector = std::vector<double>;

enum class NetKind : std::uint32_t { Classifier = 1, Extractor = 2, Detector = 3 };
enum class OutputActivation : std::uint32_t { Identity = 0, Sigmoid = 1 };

struct Dense {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)

  Dense() = default;
  Dense(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {}
  Dense(const Dense& o) : weight(o.weight.clone()), bias(o.bias.clone()) {}
  Dense& operator=(const Dense& o) {
    if (this != &o) {
      weight = o.weight.clone();
      bias = o.bias.clone();
    }
    return *this;
  }
  Dense(Dense&&) noexcept = default;
  Dense& operator=(Dense&&) noexcept = default;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
inline Dense init_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out), b(out);
  for (auto& v : w) v = u(rng);
  for (auto& v : b) v = u(rng);
  return Dense(Tensor::matrix(out, in, std::move(w), true), Tensor::vector(std::move(b), true));
}

/// Multilayer perceptron with relu hidden layers. Copies are deep.
class Mlp {
 public:
  Mlp() = default;

  Mlp(NetKind kind, std::vector<std::size_t> dims, OutputActivation out, std::uint64_t seed)
      : kind_(kind), output_(out), seed_(seed) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
    for (auto d : dims)
      if (d == 0) throw std::invalid_argument("Mlp layer widths must be positive");
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers_.push_back(init_dense(dims[i], dims[i + 1], rng));
  }

  Mlp(NetKind kind, OutputActivation out, std::uint64_t seed, std::vector<Dense> layers)
      : kind_(kind), output_(out), seed_(seed), layers_(std::move(layers)) {
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      if (layers_[i].in_dim() != layers_[i - 1].out_dim())
        throw ShapeError("Mlp layers " + std::to_string(i - 1) + " and " + std::to_string(i) +
                         " are not conformable");
    }
  }

  NetKind kind() const { return kind_; }
  OutputActivation output_activation() const { return output_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d{input_dim()};
    for (const auto& l : layers_) d.push_back(l.out_dim());
    return d;
  }

  const Dense& layer(std::size_t i) const { return layers_.at(i); }
  Dense& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Dense>& layers() const { return layers_; }

  /// Output of the whole network; `stop_after` returns the activation of that layer instead.
  Tensor forward(const Tensor& x, std::size_t stop_after = static_cast<std::size_t>(-1)) const {
    if (x.dim() != 2 || x.cols() != input_dim()) {
      throw ShapeError("network expects (batch, " + std::to_string(input_dim()) + ") input, got " +
                       shape_str(x.shape()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = linear(h, layers_[i].weight, layers_[i].bias);
      bool last = i + 1 == layers_.size();
      if (!last) {
        h = relu(h);
      } else if (output_ == OutputActivation::Sigmoid) {
        h = sigmoid(h);
      }
      if (i == stop_after) break;
    }
    return h;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps;
    for (const auto& l : layers_) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& l : layers_) {
      l.weight.set_requires_grad(on);
      l.bias.set_requires_grad(on);
    }
  }

  bool operator==(const Mlp& o) const {
    if (kind_ != o.kind_ || output_ != o.output_ || layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].weight.shape() != o.layers_[i].weight.shape()) return false;
      if (layers_[i].weight.values() != o.layers_[i].weight.values()) return false;
      if (layers_[i].bias.values() != o.layers_[i].bias.values()) return false;
    }
    return true;
  }

 private:
  NetKind kind_ = NetKind::Classifier;
  OutputActivation output_ = OutputActivation::Identity;
  std::uint64_t seed_ = 0;
  std::vector<Dense> layers_;
};

inline Mlp make_classifier(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  return Mlp(NetKind::Classifier, dims, OutputActivation::Identity, seed);
}

struct ExtractorShape {
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 256;
};

/// Three fully-connected layers ending in a sigmoid: features -> soft message.
inline Mlp make_extractor(std::size_t feature_len, std::size_t message_len, std::uint64_t seed,
                          ExtractorShape shape = {}) {
  return Mlp(NetKind::Extractor, {feature_len, shape.hidden1, shape.hidden2, message_len},
             OutputActivation::Sigmoid, seed);
}

enum class CriticMode : std::uint32_t { LogLoss = 0, WassersteinDifference = 1 };

struct DetectorShape {
  std::size_t hidden1 = 256;
  std::size_t hidden2 = 128;
};

/// Three fully-connected layers with a scalar head: sigmoid in log-loss mode, linear as a critic.
inline Mlp make_detector(std::size_t feature_len, CriticMode mode, std::uint64_t seed,
                         DetectorShape shape = {}) {
  return Mlp(NetKind::Detector, {feature_len, shape.hidden1, shape.hidden2, 1},
             mode == CriticMode::LogLoss ? OutputActivation::Sigmoid : OutputActivation::Identity, seed);
}

inline Tensor classify(const Mlp& model, const Tensor& batch) { return model.forward(batch); }

// ---------------------------------------------------------------------------
// Feature extraction (k_FE)

struct WeightLayerKey {
  std::size_t layer = 0;
};

struct ActivationKey {
  std::size_t layer = 0;
  std::shared_ptr<const Tensor> triggers;  // (count, input_dim), never mutated
};

struct FeatureKey {
  std::variant<WeightLayerKey, ActivationKey> which;

  static FeatureKey weight_layer(std::size_t layer) { return {WeightLayerKey{layer}}; }
  static FeatureKey activation(std::size_t layer, Tensor triggers) {
    return {ActivationKey{layer, std::make_shared<const Tensor>(triggers.detach())}};
  }
  bool is_weight_layer() const { return std::holds_alternative<WeightLayerKey>(which); }
  std::size_t layer() const {
    return std::visit([](const auto& k) { return k.layer; }, which);
  }
};

inline void validate_key(const Mlp& model, const FeatureKey& key) {
  if (key.layer() >= model.layer_count()) {
    throw std::out_of_range("feature key layer " + std::to_string(key.layer()) + " out of range for " +
                            std::to_string(model.layer_count()) + "-layer model");
  }
  if (const auto* act = std::get_if<ActivationKey>(&key.which)) {
    if (!act->triggers || act->triggers->dim() != 2 || act->triggers->cols() != model.input_dim())
      throw ShapeError("activation key triggers do not match model input width");
  }
}

/// Length of the feature vector the key selects from this architecture.
inline std::size_t feature_length(const Mlp& model, const FeatureKey& key) {
  validate_key(model, key);
  if (key.is_weight_layer()) return model.layer(key.layer()).weight.size();
  const auto& act = std::get<ActivationKey>(key.which);
  return act.triggers->rows() * model.layer(key.layer()).out_dim();
}

/// Differentiable features as a (1, n) row: the flattened weight matrix of the
/// selected layer, or the flattened activations of that layer on the triggers.
inline Tensor feature_tensor(const Mlp& model, const FeatureKey& key) {
  validate_key(model, key);
  if (const auto* wl = std::get_if<WeightLayerKey>(&key.which)) {
    const auto& w = model.layer(wl->layer).weight;
    return reshape(w, {1, w.size()});
  }
  const auto& act = std::get<ActivationKey>(key.which);
  Tensor a = model.forward(*act.triggers, act.layer);
  return reshape(a, {1, a.size()});
}

inline WeightVector extract_features(const Mlp& model, const FeatureKey& key) {
  NoGradGuard guard;
  return feature_tensor(model, key).values();
}

inline WeightVector sorted_features(WeightVector q) {
  std::sort(q.begin(), q.end(), std::greater<>());
  return q;
}

/// Sorted (descending) view of a feature row whose gradient routes back through
/// the permutation that produced it.
inline Tensor sorted_feature_tensor(const Tensor& q) {
  auto order = argsort_descending(q.data());
  Tensor s = gather(q, std::move(order));
  return reshape(s, {1, s.size()});
}

inline Tensor row_tensor(const WeightVector& q) { return Tensor::matrix(1, q.size(), q); }

/// Per-position affine map applied to sorted features before the detector.
struct FeatureScaler {
  std::vector<double> shift, scale;

  static FeatureScaler identity() { return {}; }

  static FeatureScaler fit(const std::vector<WeightVector>& sorted_rows) {
    if (sorted_rows.size() < 2) throw std::invalid_argument("feature scaler needs at least two rows");
    FeatureScaler s;
    std::size_t n = sorted_rows.front().size();
    s.shift.assign(n, 0.0);
    s.scale.assign(n, 0.0);
    for (const auto& r : sorted_rows)
      for (std::size_t i = 0; i < n; ++i) s.shift[i] += r[i];
    for (auto& v : s.shift) v /= static_cast<double>(sorted_rows.size());
    for (const auto& r : sorted_rows)
      for (std::size_t i = 0; i < n; ++i) s.scale[i] += (r[i] - s.shift[i]) * (r[i] - s.shift[i]);
    for (auto& v : s.scale) v = 1.0 / (std::sqrt(v / static_cast<double>(sorted_rows.size())) + 1e-8);
    return s;
  }

  bool is_identity() const { return shift.empty(); }

  WeightVector apply(WeightVector sorted) const {
    if (shift.empty()) return sorted;
    for (std::size_t i = 0; i < sorted.size(); ++i) sorted[i] = (sorted[i] - shift[i]) * scale[i];
    return sorted;
  }

  /// Differentiable version for a (1, n) row.
  Tensor apply(const Tensor& row) const {
    if (shift.empty()) return row;
    if (row.size() != shift.size()) throw ShapeError("feature scaler: length mismatch");
    return mul(sub(row, Tensor(row.shape(), shift)), Tensor(row.shape(), scale));
  }
};

inline Tensor rows_tensor(const std::vector<WeightVector>& rows) {
  if (rows.empty()) throw ShapeError("rows_tensor of no rows");
  std::vector<double> data;
  data.reserve(rows.size() * rows[0].size());
  for (const auto& r : rows) {
    if (r.size() != rows[0].size()) throw ShapeError("rows_tensor: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor::matrix(rows.size(), rows[0].size(), std::move(data));
}

}  // namespace wmark
