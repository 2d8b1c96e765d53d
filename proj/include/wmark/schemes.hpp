#pragma once

// White-box watermarking schemes expressed as Extract = e(g_w(w, k_FE), k_ME)
// and Embed = regularised training:
//
//   * Uchida:    q = weights of one layer,        e = sigmoid(Z q)
//   * DeepSigns: q = activations on a trigger set, e = sigmoid(Z q)
//   * RIGA:      q = weights of one layer,        e = extractor network,
//                co-trained with the target, optionally with an adversarial
//                detector that pulls w towards the non-watermarked population.

#include "wmark/message.hpp"
#include "wmark/nets.hpp"
#include "wmark/train.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace wmark {

enum class Scheme : std::uint32_t { Uchida = 0, DeepSigns = 1, Riga = 2 };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::Uchida: return "uchida";
    case Scheme::DeepSigns: return "deepsigns";
    case Scheme::Riga: return "riga";
  }
  return "?";
}

inline Scheme scheme_from(const std::string& s) {
  if (s == "uchida") return Scheme::Uchida;
  if (s == "deepsigns") return Scheme::DeepSigns;
  if (s == "riga") return Scheme::Riga;
  throw std::invalid_argument("unknown scheme '" + s + "'");
}

struct UchidaMatrix {
  Tensor matrix;  // (t, feature_len)
};

struct ExtractorParams {
  Mlp net;
};

struct ExtractionKey {
  Scheme scheme = Scheme::Riga;
  FeatureKey fe;
  std::variant<UchidaMatrix, ExtractorParams> me;
  MessageKind kind = MessageKind::Bits;
  std::size_t t = 0;
  std::size_t width = 0;   // image messages only
  std::size_t height = 0;  // image messages only
  std::uint64_t seed = 0;

  std::size_t feature_len() const {
    if (const auto* z = std::get_if<UchidaMatrix>(&me)) return z->matrix.cols();
    return std::get<ExtractorParams>(me).net.input_dim();
  }
};

/// Validates k_ME against k_FE's feature length and the message length.
inline void check_key_dims(const ExtractionKey& key, std::size_t feature_len) {
  if (key.feature_len() != feature_len) {
    throw ShapeError("extraction key expects " + std::to_string(key.feature_len()) + " features, got " +
                     std::to_string(feature_len));
  }
  std::size_t out = std::holds_alternative<UchidaMatrix>(key.me)
                        ? std::get<UchidaMatrix>(key.me).matrix.rows()
                        : std::get<ExtractorParams>(key.me).net.output_dim();
  if (out != key.t) throw ShapeError("extraction key output length does not match message length");
}

// ---------------------------------------------------------------------------
// Message extractors e(q, k_ME)

inline SoftMessage uchida_extract(const WeightVector& q, const UchidaMatrix& key,
                                  MessageKind kind = MessageKind::Bits) {
  if (key.matrix.cols() != q.size()) {
    throw ShapeError("uchida_extract: matrix " + shape_str(key.matrix.shape()) + " does not fit " +
                     std::to_string(q.size()) + " features");
  }
  NoGradGuard guard;
  Tensor y = sigmoid(matmul(key.matrix, Tensor::matrix(q.size(), 1, q)));
  return {kind, y.values()};
}

inline SoftMessage riga_extract(const WeightVector& q, const ExtractorParams& key,
                                MessageKind kind = MessageKind::Bits) {
  if (key.net.input_dim() != q.size()) {
    throw ShapeError("riga_extract: extractor takes " + std::to_string(key.net.input_dim()) + " features, got " +
                     std::to_string(q.size()));
  }
  NoGradGuard guard;
  return {kind, key.net.forward(row_tensor(q)).values()};
}

inline SoftMessage extract_from_features(const WeightVector& q, const ExtractionKey& key) {
  if (const auto* z = std::get_if<UchidaMatrix>(&key.me)) return uchida_extract(q, *z, key.kind);
  return riga_extract(q, std::get<ExtractorParams>(key.me), key.kind);
}

/// Extract(w, k) = e(g_w(w, k_FE), k_ME).
inline SoftMessage extract(const Mlp& model, const ExtractionKey& key) {
  return extract_from_features(extract_features(model, key.fe), key);
}

struct WatermarkMetrics {
  double ber = 0.0;  // only meaningful for bit messages
  double embedding_loss = 0.0;
};

inline WatermarkMetrics watermark_metrics(const Mlp& model, const ExtractionKey& key, const WatermarkMessage& m) {
  auto soft = extract(model, key);
  WatermarkMetrics out;
  out.embedding_loss = embedding_loss(soft, m);
  out.ber = m.kind() == MessageKind::Bits ? ber(soft, m) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Embedding results

struct EpochRecord {
  std::size_t epoch = 0;
  double task_loss = 0.0;  // mean E_o over the epoch's minibatches
  double wm_loss = 0.0;    // mean E_wm
  double det_loss = 0.0;   // mean E_det (0 when hiding is off)
  double test_accuracy = 0.0;
  double embedding_loss = 0.0;  // after the epoch, on the full key
  double ber = 0.0;
};

struct EmbedResult {
  Mlp model;
  ExtractionKey key;
  WatermarkMessage message;
  std::vector<EpochRecord> curves;
  double final_embedding_loss = 0.0;
  double final_ber = 0.0;
  double final_accuracy = 0.0;
  bool converged = true;
  std::string status;
};

// ---------------------------------------------------------------------------
// Linear-projection schemes (Uchida, DeepSigns principle)

struct LinearSchemeConfig {
  double lambda = 0.01;
  TrainConfig train;
  std::size_t feature_layer = 1;
  std::size_t trigger_count = 16;  // DeepSigns only
  std::vector<std::size_t> dims{64, 128, 64, 10};
};

inline UchidaMatrix random_projection(std::size_t t, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> z(t * n);
  for (auto& v : z) v = g(rng);
  return {Tensor::matrix(t, n, std::move(z))};
}

/// Differentiable E_wm for the linear schemes: binary cross-entropy summed over the t bits.
inline Tensor projection_loss(const Mlp& model, const ExtractionKey& key, const WatermarkMessage& m) {
  const auto& z = std::get<UchidaMatrix>(key.me).matrix;
  Tensor q = feature_tensor(model, key.fe);
  Tensor y = sigmoid(matmul(z, reshape(q, {q.size(), 1})));
  return scale(binary_cross_entropy(y, Tensor({m.size(), 1}, m.values())), static_cast<double>(m.size()));
}

namespace detail {

inline EmbedResult embed_linear(Scheme scheme, const TaskData& task, const WatermarkMessage& m,
                                const LinearSchemeConfig& cfg, std::uint64_t seed,
                                std::optional<Mlp> initial, const EpochObserver& observer) {
  if (m.kind() != MessageKind::Bits) throw std::invalid_argument("linear schemes embed bit messages only");
  if (cfg.train.epochs < 1) throw std::invalid_argument("embed: epochs must be at least 1");
  Mlp model = initial ? std::move(*initial) : make_classifier(cfg.dims, derive_seed(seed, streams::kInit));

  ExtractionKey key;
  key.scheme = scheme;
  key.kind = MessageKind::Bits;
  key.t = m.size();
  key.seed = seed;
  std::uint64_t key_seed = derive_seed(seed, streams::kKey);
  if (scheme == Scheme::DeepSigns) {
    std::mt19937_64 rng(key_seed);
    std::uniform_int_distribution<std::size_t> pick(0, task.train.size() - 1);
    std::vector<std::size_t> idx(cfg.trigger_count);
    for (auto& i : idx) i = pick(rng);
    key.fe = FeatureKey::activation(cfg.feature_layer, task.train.inputs(idx));
  } else {
    key.fe = FeatureKey::weight_layer(cfg.feature_layer);
  }
  std::size_t n = feature_length(model, key.fe);
  if (m.size() > n) {
    throw std::invalid_argument("message of " + std::to_string(m.size()) + " bits exceeds " + std::to_string(n) +
                                " features");
  }
  key.me = random_projection(m.size(), n, derive_seed(key_seed, 1));

  EmbedResult result{model, key, m, {}, 0, 0, 0, true, ""};
  TaskLoss loss = design_loss(task.train);
  TrainHooks hooks;
  if (cfg.lambda > 0.0) {
    hooks.regularizer = [&](const Mlp& w) { return scale(projection_loss(w, key, m), cfg.lambda); };
  }
  hooks.on_epoch = [&](std::size_t epoch, std::size_t steps, const Mlp& w) {
    auto metrics = watermark_metrics(w, key, m);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.test_accuracy = accuracy(w, task.test);
    rec.embedding_loss = metrics.embedding_loss;
    rec.ber = metrics.ber;
    result.curves.push_back(rec);
    if (observer) observer(epoch, steps, w);
  };
  auto hist = train_in_place(loss, model, cfg.train, derive_seed(seed, streams::kShuffle), hooks);
  for (std::size_t i = 0; i < result.curves.size(); ++i) {
    result.curves[i].task_loss = hist.task_loss[i];
    result.curves[i].wm_loss = cfg.lambda > 0.0 ? hist.reg_loss[i] / cfg.lambda : 0.0;
  }
  result.model = std::move(model);
  result.final_embedding_loss = result.curves.back().embedding_loss;
  result.final_ber = result.curves.back().ber;
  result.final_accuracy = result.curves.back().test_accuracy;
  return result;
}

}  // namespace detail

/// Trains E_o + lambda * sum BCE(m, sigmoid(Z w_l)) with a Gaussian Z drawn from the key seed.
inline EmbedResult uchida_embed(const TaskData& task, const WatermarkMessage& m, const LinearSchemeConfig& cfg,
                                std::uint64_t seed, std::optional<Mlp> initial = std::nullopt,
                                const EpochObserver& observer = {}) {
  return detail::embed_linear(Scheme::Uchida, task, m, cfg, seed, std::move(initial), observer);
}

/// Same contract as uchida_embed with q = activations of the feature layer on a trigger set.
inline EmbedResult deepsigns_embed(const TaskData& task, const WatermarkMessage& m, const LinearSchemeConfig& cfg,
                                   std::uint64_t seed, std::optional<Mlp> initial = std::nullopt,
                                   const EpochObserver& observer = {}) {
  return detail::embed_linear(Scheme::DeepSigns, task, m, cfg, seed, std::move(initial), observer);
}

inline SoftMessage deepsigns_extract(const Mlp& model, const ExtractionKey& key) {
  if (key.fe.is_weight_layer()) throw std::invalid_argument("deepsigns_extract needs an activation key");
  return extract(model, key);
}

// ---------------------------------------------------------------------------
// Watermark hiding (adversarial detector / critic)

struct HidingConfig {
  double lambda1 = 0.01;
  double lambda2 = 0.1;
  double clip_limit = 0.01;
  CriticMode critic_mode = CriticMode::LogLoss;
  bool standardize = true;  // z-score detector inputs with w_non statistics per sorted position

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("lambda1 and lambda2 must be non-negative");
    if (!(clip_limit > 0.0)) throw std::invalid_argument("clip limit must be positive");
  }
};

struct HidingState {
  Mlp detector;
  AdamState optimizer;
  std::vector<Tensor> params;
  FeatureScaler scaler;  // identity unless fitted on the pool

  HidingState(Mlp det, AdamState opt, FeatureScaler sc = FeatureScaler::identity())
      : detector(std::move(det)), optimizer(std::move(opt)), scaler(std::move(sc)) {
    params = detector.parameters();
  }
  HidingState(const HidingState&) = delete;
  HidingState& operator=(const HidingState&) = delete;
};

/// Detector objective on one (non-watermarked, watermarked) pair of sorted feature rows.
/// Log-loss: -(log D(w_non) + log(1 - D(w))). Critic: -(D(w_non) - D(w)).
inline Tensor detector_loss(const Mlp& detector, const Tensor& sorted_non, const Tensor& sorted_wm, CriticMode mode) {
  Tensor d_non = detector.forward(sorted_non);
  Tensor d_wm = detector.forward(sorted_wm);
  if (mode == CriticMode::LogLoss) {
    return add(binary_cross_entropy(d_non, Tensor(d_non.shape(), std::vector<double>(d_non.size(), 1.0))),
               binary_cross_entropy(d_wm, Tensor(d_wm.shape(), std::vector<double>(d_wm.size(), 0.0))));
  }
  return sub(mean(d_wm), mean(d_non));
}

/// Generator-side E_det on a differentiable sorted feature row: -log D(w), or -D(w) for a critic.
inline Tensor detection_loss(const Mlp& detector, const Tensor& sorted_wm, CriticMode mode) {
  Tensor d = detector.forward(sorted_wm);
  if (mode == CriticMode::LogLoss)
    return binary_cross_entropy(d, Tensor(d.shape(), std::vector<double>(d.size(), 1.0)));
  return neg(mean(d));
}

/// One detector ascent step against the current target weights followed by the
/// generator term E_det, which stays differentiable in the target's parameters.
inline Tensor hide_step(const Mlp& target, const FeatureKey& fe, HidingState& state, const WeightVector& nonwm_sample,
                        const HidingConfig& cfg) {
  cfg.validate();
  if (nonwm_sample.empty()) throw std::invalid_argument("hide_step: empty non-watermarked sample");
  Tensor q = feature_tensor(target, fe);
  if (q.size() != nonwm_sample.size() || state.detector.input_dim() != q.size()) {
    throw ShapeError("hide_step: detector/feature/sample lengths disagree");
  }
  Tensor sorted_non = row_tensor(state.scaler.apply(sorted_features(nonwm_sample)));
  Tensor sorted_wm_fixed = row_tensor(state.scaler.apply(sorted_features(q.values())));
  backward(detector_loss(state.detector, sorted_non, sorted_wm_fixed, cfg.critic_mode));
  adam_step(state.params, state.optimizer);
  clamp_weights(state.params, cfg.clip_limit);

  state.detector.set_requires_grad(false);
  Tensor e_det = detection_loss(state.detector, state.scaler.apply(sorted_feature_tensor(q)), cfg.critic_mode);
  state.detector.set_requires_grad(true);
  return e_det;
}

// ---------------------------------------------------------------------------
// RIGA

struct RigaConfig {
  HidingConfig hiding;
  bool hiding_on = true;
  TrainConfig train;            // train.epochs is the minimum number of epochs
  std::size_t max_epochs = 100;  // cap when the stopping rule is not met
  double loss_tolerance = 1e-3;  // embedding-loss threshold of the stopping rule
  double min_accuracy = 0.0;     // test accuracy the model must reach to stop
  double pool_tolerance = 0.1;   // every pool model must also decode to its random message
  std::size_t feature_layer = 1;
  ExtractorShape extractor;
  DetectorShape detector;
  std::vector<std::size_t> dims{64, 128, 64, 10};
};

/// Non-watermarked feature population supplying w_non.
struct NonWatermarkedPool {
  std::vector<WeightVector> features;
  bool empty() const { return features.empty(); }
  std::size_t size() const { return features.size(); }
};

namespace detail {

inline SoftMessage soft_of(const Mlp& extractor, const Tensor& row, MessageKind kind) {
  NoGradGuard guard;
  return {kind, extractor.forward(row).values()};
}

}  // namespace detail

/// Co-trains target and extractor (and, with hiding on, the detector), one step
/// of each per minibatch:
///   extractor: min d(m, F_ext(w)) + d(m_r, F_ext(w_non)) over theta
///   detector:  hide_step (hiding on)
///   target:    min E_o + lambda1 d(m, F_ext(w)) [+ lambda2 E_det] over w
/// The target stops after train.epochs once embedding loss < tolerance and
/// accuracy >= floor. If some pool model does not yet decode to its random message
/// within pool_tolerance, the target is frozen and only the extractor keeps
/// training (one row per extra epoch in the curves) until it does. Either phase
/// gives up at max_epochs with converged = false.
inline EmbedResult riga_embed(const TaskData& task, const WatermarkMessage& m, const NonWatermarkedPool& pool,
                              const RigaConfig& cfg, std::uint64_t seed, std::optional<Mlp> initial = std::nullopt,
                              const EpochObserver& observer = {}) {
  cfg.hiding.validate();
  if (pool.empty()) throw std::invalid_argument("riga_embed: non-watermarked pool is empty");
  if (cfg.train.epochs < 1) throw std::invalid_argument("riga_embed: epochs must be at least 1");
  Mlp target = initial ? std::move(*initial) : make_classifier(cfg.dims, derive_seed(seed, streams::kInit));
  FeatureKey fe = FeatureKey::weight_layer(cfg.feature_layer);
  const std::size_t n = feature_length(target, fe);
  for (const auto& w : pool.features)
    if (w.size() != n) throw ShapeError("riga_embed: pool features do not match the watermark layer");

  Mlp extractor = make_extractor(n, m.size(), derive_seed(seed, streams::kExtractor), cfg.extractor);
  auto ext_params = extractor.parameters();
  AdamState ext_opt = cfg.train.optimizer();

  std::optional<HidingState> hiding;
  if (cfg.hiding_on) {
    FeatureScaler scaler = FeatureScaler::identity();
    if (cfg.hiding.standardize && pool.size() >= 2) {
      std::vector<WeightVector> sorted_pool;
      for (const auto& w : pool.features) sorted_pool.push_back(sorted_features(w));
      scaler = FeatureScaler::fit(sorted_pool);
    }
    hiding.emplace(make_detector(n, cfg.hiding.critic_mode, derive_seed(seed, streams::kDetector), cfg.detector),
                   cfg.train.optimizer(), std::move(scaler));
    clamp_weights(hiding->params, cfg.hiding.clip_limit);
  }

  // One fixed random message per pool model.
  std::mt19937_64 pool_rng(derive_seed(seed, streams::kPool));
  std::vector<WatermarkMessage> random_messages;
  for (std::size_t i = 0; i < pool.size(); ++i) random_messages.push_back(WatermarkMessage::random_like(m, pool_rng));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

  TaskLoss loss = design_loss(task.train);
  BatchSchedule schedule(task.train.size(), cfg.train.batch_size, derive_seed(seed, streams::kShuffle));
  auto target_params = target.parameters();
  AdamState target_opt = cfg.train.optimizer();

  EmbedResult result;
  result.message = m;
  result.key.scheme = Scheme::Riga;
  result.key.fe = fe;
  result.key.kind = m.kind();
  result.key.t = m.size();
  result.key.width = m.width();
  result.key.height = m.height();
  result.key.seed = seed;
  result.converged = false;

  auto worst_pool_loss = [&] {
    double worst = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i)
      worst = std::max(worst, embedding_loss(detail::soft_of(extractor, row_tensor(pool.features[i]), m.kind()),
                                             random_messages[i]));
    return worst;
  };

  auto extractor_step = [&](const Tensor& q, std::size_t j) {
    Tensor q_non = row_tensor(pool.features[j]);
    Tensor l = add(message_distance(extractor.forward(q), m), message_distance(extractor.forward(q_non), random_messages[j]));
    backward(l);
    adam_step(ext_params, ext_opt);
  };

  std::size_t steps = 0;
  bool target_done = false;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    schedule.shuffle();
    double task_sum = 0.0, wm_sum = 0.0, det_sum = 0.0;
    for (std::size_t b = 0; b < schedule.batches(); ++b) {
      std::size_t j = pick(pool_rng);

      // (a) extractor step
      extractor_step(row_tensor(extract_features(target, fe)), j);

      // (b) detector step, yielding E_det
      Tensor e_det;
      if (hiding) e_det = hide_step(target, fe, *hiding, pool.features[j], cfg.hiding);

      // (c) target step
      extractor.set_requires_grad(false);
      Tensor e_o = loss(target, schedule.batch(b));
      Tensor e_wm = message_distance(extractor.forward(feature_tensor(target, fe)), m);
      Tensor total = add(e_o, scale(e_wm, cfg.hiding.lambda1));
      if (hiding) total = add(total, scale(e_det, cfg.hiding.lambda2));
      backward(total);
      adam_step(target_params, target_opt);
      extractor.set_requires_grad(true);

      task_sum += e_o.item();
      wm_sum += e_wm.item();
      if (hiding) det_sum += e_det.item();
      ++steps;
    }

    double nb = static_cast<double>(schedule.batches());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.task_loss = task_sum / nb;
    rec.wm_loss = wm_sum / nb;
    rec.det_loss = det_sum / nb;
    rec.test_accuracy = accuracy(target, task.test);
    auto soft = detail::soft_of(extractor, row_tensor(extract_features(target, fe)), m.kind());
    rec.embedding_loss = embedding_loss(soft, m);
    rec.ber = m.kind() == MessageKind::Bits ? ber(soft, m) : 0.0;
    result.curves.push_back(rec);
    if (observer) observer(epoch, steps, target);

    if (epoch >= cfg.train.epochs && rec.embedding_loss < cfg.loss_tolerance && rec.test_accuracy >= cfg.min_accuracy) {
      target_done = true;
      break;
    }
  }

  // Extractor-only epochs: w is fixed, so q is computed once.
  if (target_done) {
    Tensor q = row_tensor(extract_features(target, fe));
    const EpochRecord frozen = result.curves.back();
    for (std::size_t extra = 0;; ++extra) {
      auto soft = detail::soft_of(extractor, q, m.kind());
      if (embedding_loss(soft, m) < cfg.loss_tolerance && worst_pool_loss() < cfg.pool_tolerance) {
        result.converged = true;
        break;
      }
      if (extra == cfg.max_epochs) break;
      double wm_sum = 0.0;
      for (std::size_t b = 0; b < schedule.batches(); ++b) {
        extractor_step(q, pick(pool_rng));
        NoGradGuard guard;
        wm_sum += message_distance(extractor.forward(q), m).item();
      }
      EpochRecord rec = frozen;
      rec.epoch = result.curves.size() + 1;
      rec.wm_loss = wm_sum / static_cast<double>(schedule.batches());
      soft = detail::soft_of(extractor, q, m.kind());
      rec.embedding_loss = embedding_loss(soft, m);
      rec.ber = m.kind() == MessageKind::Bits ? ber(soft, m) : 0.0;
      result.curves.push_back(rec);
    }
  }

  result.key.me = ExtractorParams{extractor};
  result.model = std::move(target);
  const auto& last = result.curves.back();
  result.final_embedding_loss = last.embedding_loss;
  result.final_ber = last.ber;
  result.final_accuracy = last.test_accuracy;
  if (!result.converged) {
    result.status = "stopping rule not met after " + std::to_string(result.curves.size()) +
                    " epochs (embedding loss " + std::to_string(last.embedding_loss) + ", accuracy " +
                    std::to_string(last.test_accuracy) + ", worst pool loss " + std::to_string(worst_pool_loss()) +
                    ")";
  }
  return result;
}

}  // namespace wmark
