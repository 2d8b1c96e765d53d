#pragma once

// Watermark removal and detection attacks. Each attack owns a copy of the
// victim; the defender's key is only ever handed to the per-checkpoint probe.

#include "wmark/schemes.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace wmark {

inline constexpr double kBerThreshold = 0.15;
inline constexpr double kLossThreshold = 0.1;

/// Defender-side view used to score checkpoints: true key, true message, test data.
struct WatermarkProbe {
  const ExtractionKey* key = nullptr;
  const WatermarkMessage* message = nullptr;
  const Dataset* test = nullptr;
};

struct ReportRow {
  std::size_t step = 0;
  double lr = 0.0;
  double accuracy = 0.0;
  double ber = 0.0;
  double embedding_loss = 0.0;
  double ratio = 0.0;  // pruning ratio; 0 for training-based attacks
};

struct Crossing {
  std::size_t step = 0;
  double accuracy = 0.0;
};

struct AttackReport {
  std::string scheme;
  std::string attack;
  std::uint64_t seed = 0;
  std::size_t epoch_cap = 0;
  std::vector<ReportRow> rows;

  /// First checkpoint with BER > 15% or embedding loss > 0.1; empty means N/A.
  std::optional<Crossing> crossing() const {
    for (const auto& r : rows)
      if (r.ber > kBerThreshold || r.embedding_loss > kLossThreshold) return Crossing{r.step, r.accuracy};
    return std::nullopt;
  }

  const ReportRow& last() const { return rows.back(); }

  std::string stem() const { return scheme + "_" + attack + "_seed" + std::to_string(seed); }

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "step,lr,accuracy,ber,embedding_loss,ratio\n";
    for (const auto& r : rows)
      os << r.step << ',' << r.lr << ',' << r.accuracy << ',' << r.ber << ',' << r.embedding_loss << ',' << r.ratio
         << '\n';
    return os.str();
  }

  nlohmann::json summary() const {
    nlohmann::json j;
    j["scheme"] = scheme;
    j["attack"] = attack;
    j["seed"] = seed;
    j["epoch_cap"] = epoch_cap;
    j["checkpoints"] = rows.size();
    j["ber_threshold"] = kBerThreshold;
    j["embedding_loss_threshold"] = kLossThreshold;
    if (auto c = crossing()) {
      j["crossing"] = {{"step", c->step}, {"accuracy", c->accuracy}};
    } else {
      j["crossing"] = "N/A";
    }
    if (!rows.empty()) {
      j["final"] = {{"accuracy", last().accuracy}, {"ber", last().ber}, {"embedding_loss", last().embedding_loss}};
    }
    return j;
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / (stem() + ".csv")) << csv();
    std::ofstream(dir / (stem() + ".json")) << summary().dump(2) << '\n';
  }
};

inline ReportRow probe_row(const Mlp& model, const WatermarkProbe& probe, std::size_t step, double lr) {
  auto metrics = watermark_metrics(model, *probe.key, *probe.message);
  return {step, lr, accuracy(model, *probe.test), metrics.ber, metrics.embedding_loss, 0.0};
}

struct AttackOutcome {
  Mlp model;
  AttackReport report;
};

// ---------------------------------------------------------------------------
// Overwriting

struct OverwriteConfig {
  Scheme scheme = Scheme::Riga;  // scheme the attacker embeds with
  MessageKind kind = MessageKind::Bits;
  std::size_t t = 64;  // message length (bits) or width*height
  std::size_t width = 0, height = 0;
  std::size_t epochs = 50;
  LinearSchemeConfig linear;  // for Uchida/DeepSigns overwrites; feature_layer is set from k_FE
  RigaConfig riga;            // for RIGA overwrites; hiding is not used by the attacker
};

namespace detail {

/// The attacker's side of an overwrite: sees the model and k_FE only.
inline Mlp overwrite_attacker(Mlp model, const FeatureKey& fe, const TaskData& task, const NonWatermarkedPool& pool,
                              const OverwriteConfig& cfg, std::uint64_t seed, const EpochObserver& observer) {
  std::mt19937_64 rng(derive_seed(seed, streams::kMessage));
  std::size_t steps = 0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    WatermarkMessage m = cfg.kind == MessageKind::Bits ? WatermarkMessage::random_bits(cfg.t, rng)
                                                       : WatermarkMessage::random_image(cfg.width, cfg.height, rng);
    std::uint64_t epoch_seed = derive_seed(seed, 100 + e);
    EmbedResult r;
    if (cfg.scheme == Scheme::Riga) {
      RigaConfig rc = cfg.riga;
      rc.hiding_on = false;
      rc.feature_layer = fe.layer();
      rc.train.epochs = 1;
      rc.max_epochs = 1;
      r = riga_embed(task, m, pool, rc, epoch_seed, std::move(model));
    } else {
      LinearSchemeConfig lc = cfg.linear;
      lc.feature_layer = fe.layer();
      lc.train.epochs = 1;
      r = cfg.scheme == Scheme::Uchida ? uchida_embed(task, m, lc, epoch_seed, std::move(model))
                                       : deepsigns_embed(task, m, lc, epoch_seed, std::move(model));
    }
    model = std::move(r.model);
    std::size_t batch = cfg.scheme == Scheme::Riga ? cfg.riga.train.batch_size : cfg.linear.train.batch_size;
    steps += (task.train.size() + batch - 1) / batch;
    if (observer) observer(e, steps, model);
  }
  return model;
}

}  // namespace detail

/// Re-embeds a fresh random message under a fresh random key every epoch on the
/// watermarked layer. The original watermark is scored after each epoch.
inline AttackOutcome overwrite(const Mlp& victim, const WatermarkProbe& probe, const TaskData& task,
                               const NonWatermarkedPool& attacker_pool, const OverwriteConfig& cfg,
                               std::uint64_t seed) {
  if (cfg.epochs < 1) throw std::invalid_argument("overwrite: epochs must be at least 1");
  AttackReport report{to_string(probe.key->scheme), std::string("overwrite-") + to_string(cfg.scheme) + "-" +
                                                        std::to_string(cfg.t),
                      seed, cfg.epochs, {}};
  double lr = cfg.scheme == Scheme::Riga ? cfg.riga.train.lr : cfg.linear.train.lr;
  report.rows.push_back(probe_row(victim, probe, 0, lr));
  FeatureKey fe = probe.key->fe;
  Mlp out = detail::overwrite_attacker(Mlp(victim), fe, task, attacker_pool, cfg, seed,
                                       [&](std::size_t, std::size_t steps, const Mlp& w) {
                                         report.rows.push_back(probe_row(w, probe, steps, lr));
                                       });
  return {std::move(out), std::move(report)};
}

// ---------------------------------------------------------------------------
// Fine-tuning

enum class FineTuneMode { FTAL, RTAL };

struct FixedLr {
  double lr = 1e-4;
};
struct RefitLr {
  double initial = 0.05;
  double decay = 0.9;
  std::size_t decay_every = 500;  // minibatch steps
};
struct DoublingLr {
  double start = 1e-4;
  std::size_t double_every = 10;  // epochs
};
using LrPlan = std::variant<FixedLr, RefitLr, DoublingLr>;

inline double lr_at(const LrPlan& plan, std::size_t step, std::size_t epoch) {
  if (const auto* f = std::get_if<FixedLr>(&plan)) return f->lr;
  if (const auto* r = std::get_if<RefitLr>(&plan))
    return r->initial * std::pow(r->decay, static_cast<double>(step / r->decay_every));
  const auto& d = std::get<DoublingLr>(plan);
  return d.start * std::pow(2.0, static_cast<double>(epoch / d.double_every));
}

inline std::string plan_name(const LrPlan& plan) {
  std::ostringstream os;
  if (const auto* f = std::get_if<FixedLr>(&plan)) os << "fixed" << f->lr;
  else if (const auto* r = std::get_if<RefitLr>(&plan)) os << "refit" << r->initial;
  else os << "doubling" << std::get<DoublingLr>(plan).start;
  return os.str();
}

struct FineTuneConfig {
  FineTuneMode mode = FineTuneMode::FTAL;
  LrPlan plan = FixedLr{};
  std::size_t epochs = 100;
  TrainConfig train;  // batch size and Adam moments; lr comes from the plan
};

inline void validate(const FineTuneConfig& cfg) {
  bool ok = std::visit(
      [](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FixedLr>) return p.lr > 0.0;
        else if constexpr (std::is_same_v<P, RefitLr>) return p.initial > 0.0 && p.decay > 0.0 && p.decay_every > 0;
        else return p.start > 0.0 && p.double_every > 0;
      },
      cfg.plan);
  if (!ok) throw std::invalid_argument("fine-tune learning-rate plan must use positive rates and periods");
}

/// RTAL: redraw the output layer from the initializer family used for training.
inline void reinitialize_output_layer(Mlp& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto& last = model.layer(model.layer_count() - 1);
  Dense fresh = init_dense(last.in_dim(), last.out_dim(), rng);
  std::copy(fresh.weight.values().begin(), fresh.weight.values().end(), last.weight.data().begin());
  std::copy(fresh.bias.values().begin(), fresh.bias.values().end(), last.bias.data().begin());
}

namespace detail {

inline AttackOutcome finetune_from(Mlp model, const WatermarkProbe& probe, const TaskData& task,
                                   const FineTuneConfig& cfg, std::uint64_t seed, AttackReport report,
                                   const std::function<void(Mlp&)>& after_step = {}) {
  validate(cfg);
  if (cfg.mode == FineTuneMode::RTAL) reinitialize_output_layer(model, derive_seed(seed, streams::kInit));
  double lr0 = lr_at(cfg.plan, 0, 0);
  report.rows.push_back(probe_row(model, probe, 0, lr0));
  if (cfg.epochs == 0) return {std::move(model), std::move(report)};

  TrainConfig tc = cfg.train;
  tc.epochs = cfg.epochs;
  tc.lr = lr0;
  double current_lr = lr0;
  TrainHooks hooks;
  hooks.schedule = [&](std::size_t step, std::size_t epoch) { return current_lr = lr_at(cfg.plan, step, epoch); };
  hooks.on_epoch = [&](std::size_t, std::size_t steps, const Mlp& w) {
    report.rows.push_back(probe_row(w, probe, steps, current_lr));
  };
  hooks.after_step = after_step;
  train_in_place(design_loss(task.train), model, tc, derive_seed(seed, streams::kShuffle), hooks);
  return {std::move(model), std::move(report)};
}

}  // namespace detail

/// Fine-tunes the entire model on E_o alone, checkpointing every epoch.
inline AttackOutcome finetune(const Mlp& victim, const WatermarkProbe& probe, const TaskData& task,
                              const FineTuneConfig& cfg, std::uint64_t seed) {
  AttackReport report{to_string(probe.key->scheme),
                      std::string(cfg.mode == FineTuneMode::FTAL ? "ftal-" : "rtal-") + plan_name(cfg.plan), seed,
                      cfg.epochs, {}};
  return detail::finetune_from(Mlp(victim), probe, task, cfg, seed, std::move(report));
}

// ---------------------------------------------------------------------------
// Magnitude pruning

enum class PruneOrder { Ascending, Descending };  // smallest-first / largest-first

inline const char* to_string(PruneOrder o) { return o == PruneOrder::Ascending ? "ascending" : "descending"; }

/// Ensures round(ratio * n) entries of every weight matrix are zero. Already-zero
/// entries count toward the quota; the rest are taken by |value| in the given
/// order, lower flat index first on ties. Biases are left alone.
inline Mlp prune_weights(Mlp model, double ratio, PruneOrder order) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("prune ratio must lie in [0,1]");
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    auto w = model.layer(l).weight.data();
    std::size_t n = w.size();
    auto quota = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    std::size_t zeros = static_cast<std::size_t>(std::count(w.begin(), w.end(), 0.0));
    if (zeros >= quota) continue;
    std::vector<std::size_t> idx;
    idx.reserve(n - zeros);
    for (std::size_t i = 0; i < n; ++i)
      if (w[i] != 0.0) idx.push_back(i);
    auto key_less = [&](std::size_t a, std::size_t b) {
      double fa = std::fabs(w[a]), fb = std::fabs(w[b]);
      if (fa != fb) return order == PruneOrder::Ascending ? fa < fb : fa > fb;
      return a < b;
    };
    std::size_t take = quota - zeros;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), key_less);
    for (std::size_t i = 0; i < take; ++i) w[idx[i]] = 0.0;
  }
  return model;
}

/// One row per ratio, each pruned independently from the victim.
inline AttackReport prune(const Mlp& victim, const WatermarkProbe& probe, const std::vector<double>& ratios,
                          PruneOrder order, std::uint64_t seed = 0) {
  AttackReport report{to_string(probe.key->scheme), std::string("prune-") + to_string(order), seed, 0, {}};
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    Mlp pruned = prune_weights(Mlp(victim), ratios[i], order);
    ReportRow row = probe_row(pruned, probe, i, 0.0);
    row.ratio = ratios[i];
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Fine-pruning

struct FinePruneConfig {
  double max_prune_ratio = 0.9;       // upper bound on the fraction of units removed
  double accuracy_drop_limit = 0.02;  // stop before test accuracy falls by more than this
  FineTuneConfig finetune;
};

/// Mean activation of each unit of the last hidden layer over a dataset.
inline std::vector<double> mean_activations(const Mlp& model, const Dataset& data) {
  if (model.layer_count() < 2) throw std::invalid_argument("fine-pruning needs a hidden layer");
  NoGradGuard guard;
  std::size_t layer = model.layer_count() - 2;
  std::vector<double> acc(model.layer(layer).out_dim(), 0.0);
  constexpr std::size_t chunk = 1024;
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    std::vector<std::size_t> idx(std::min(data.size(), lo + chunk) - lo);
    std::iota(idx.begin(), idx.end(), lo);
    Tensor a = model.forward(data.inputs(idx), layer);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += a.at(r, c);
  }
  for (auto& v : acc) v /= static_cast<double>(std::max<std::size_t>(1, data.size()));
  return acc;
}

/// Removes whole units of the last hidden layer: incoming row, bias and outgoing column.
inline void remove_units(Mlp& model, const std::vector<std::size_t>& units) {
  std::size_t layer = model.layer_count() - 2;
  auto& in = model.layer(layer);
  auto& out = model.layer(layer + 1);
  auto w_in = in.weight.data();
  auto b_in = in.bias.data();
  auto w_out = out.weight.data();
  std::size_t fan_in = in.in_dim(), width = in.out_dim();
  for (auto u : units) {
    std::fill_n(w_in.begin() + static_cast<std::ptrdiff_t>(u * fan_in), fan_in, 0.0);
    b_in[u] = 0.0;
    for (std::size_t r = 0; r < out.out_dim(); ++r) w_out[r * width + u] = 0.0;
  }
}

struct FinePruneOutcome {
  AttackOutcome outcome;
  std::vector<std::size_t> pruned_units;
  double accuracy_before = 0.0;
  double accuracy_after_pruning = 0.0;
};

/// Prunes the least-activated units until accuracy drops noticeably, then fine-tunes
/// with the pruned units held at zero.
inline FinePruneOutcome fine_prune(const Mlp& victim, const WatermarkProbe& probe, const TaskData& task,
                                   const FinePruneConfig& cfg, std::uint64_t seed) {
  if (!(cfg.max_prune_ratio >= 0.0 && cfg.max_prune_ratio <= 1.0))
    throw std::invalid_argument("fine-prune ratio must lie in [0,1]");
  FinePruneOutcome result;
  result.accuracy_before = accuracy(victim, *probe.test);
  auto act = mean_activations(victim, task.train);
  std::vector<std::size_t> order(act.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return act[a] < act[b]; });
  auto budget = static_cast<std::size_t>(std::floor(cfg.max_prune_ratio * static_cast<double>(order.size())));

  Mlp model(victim);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < budget; ++k) {
    Mlp trial(model);
    remove_units(trial, {order[k]});
    if (result.accuracy_before - accuracy(trial, *probe.test) > cfg.accuracy_drop_limit) break;
    model = std::move(trial);
    kept.push_back(order[k]);
  }
  result.pruned_units = kept;
  result.accuracy_after_pruning = accuracy(model, *probe.test);

  AttackReport report{to_string(probe.key->scheme),
                      std::string("fineprune-") + (cfg.finetune.mode == FineTuneMode::FTAL ? "ftal-" : "rtal-") +
                          plan_name(cfg.finetune.plan),
                      seed, cfg.finetune.epochs, {}};
  std::function<void(Mlp&)> mask;
  if (!kept.empty()) mask = [kept](Mlp& w) { remove_units(w, kept); };
  result.outcome = detail::finetune_from(std::move(model), probe, task, cfg.finetune, seed, std::move(report), mask);
  return result;
}

// ---------------------------------------------------------------------------
// Property inference

struct PropertyInferenceConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  DetectorShape shape;
  bool shuffle_labels = false;  // null experiment
  bool standardize = true;      // z-score each sorted position with training-corpus statistics
};

/// Labeled corpus of raw feature vectors; label 1 = watermarked.
struct FeatureCorpus {
  std::vector<WeightVector> features;
  std::vector<int> labels;

  void add(std::vector<WeightVector> rows, int label) {
    for (auto& r : rows) {
      features.push_back(std::move(r));
      labels.push_back(label);
    }
  }
  std::size_t count(int label) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label)); }
};

struct PropertyInferenceResult {
  std::vector<double> train_accuracy;  // per epoch
  std::vector<double> test_accuracy;   // per epoch, held-out models
  Mlp detector;
  FeatureScaler scaler;
  double final_accuracy() const { return test_accuracy.back(); }
};

/// Probability the detector assigns to "watermarked" for one raw feature vector.
inline double detector_score(const Mlp& detector, const WeightVector& features,
                             const FeatureScaler& scaler = FeatureScaler::identity()) {
  NoGradGuard guard;
  return detector.forward(row_tensor(scaler.apply(sorted_features(features)))).item();
}

inline double detector_accuracy(const Mlp& detector, const FeatureCorpus& corpus,
                                const FeatureScaler& scaler = FeatureScaler::identity()) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < corpus.features.size(); ++i) {
    int guess = detector_score(detector, corpus.features[i], scaler) >= 0.5 ? 1 : 0;
    if (guess == corpus.labels[i]) ++correct;
  }
  return corpus.features.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(corpus.features.size());
}

/// Trains a fresh detector network as a binary classifier on sorted features and
/// scores it on held-out models after every epoch.
inline PropertyInferenceResult property_inference(const FeatureCorpus& train_set, const FeatureCorpus& test_set,
                                                  const PropertyInferenceConfig& cfg, std::uint64_t seed) {
  for (int label : {0, 1}) {
    if (train_set.count(label) < 8 || test_set.count(label) < 8)
      throw std::invalid_argument("property inference needs at least 8 models per class in each split");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("property inference: bad epochs/batch");
  std::size_t n = train_set.features.front().size();
  for (const auto* c : {&train_set, &test_set})
    for (const auto& f : c->features)
      if (f.size() != n) throw ShapeError("property inference: feature lengths differ");

  std::vector<WeightVector> sorted;
  sorted.reserve(train_set.features.size());
  for (const auto& f : train_set.features) sorted.push_back(sorted_features(f));
  FeatureScaler scaler = cfg.standardize ? FeatureScaler::fit(sorted) : FeatureScaler::identity();
  for (auto& r : sorted) r = scaler.apply(std::move(r));
  std::vector<int> labels = train_set.labels;
  std::mt19937_64 rng(derive_seed(seed, streams::kShuffle));
  if (cfg.shuffle_labels) std::shuffle(labels.begin(), labels.end(), rng);

  PropertyInferenceResult out{
      {}, {}, make_detector(n, CriticMode::LogLoss, derive_seed(seed, streams::kDetector), cfg.shape), scaler};
  auto params = out.detector.parameters();
  AdamState opt = AdamState::with(cfg.lr, cfg.beta1, cfg.beta2);
  BatchSchedule schedule(sorted.size(), cfg.batch_size, derive_seed(seed, streams::kShuffle));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    schedule.shuffle();
    for (std::size_t b = 0; b < schedule.batches(); ++b) {
      auto idx = schedule.batch(b);
      std::vector<WeightVector> rows;
      std::vector<double> y;
      for (auto i : idx) {
        rows.push_back(sorted[i]);
        y.push_back(labels[i]);
      }
      Tensor p = out.detector.forward(rows_tensor(rows));
      backward(binary_cross_entropy(p, Tensor(p.shape(), y)));
      adam_step(params, opt);
    }
    FeatureCorpus shuffled_train{train_set.features, labels};
    out.train_accuracy.push_back(detector_accuracy(out.detector, shuffled_train, scaler));
    out.test_accuracy.push_back(detector_accuracy(out.detector, test_set, scaler));
  }
  return out;
}

/// Runs `job(i)` for i in [0, n) on up to `threads` workers; each job must be independent.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Watermarked-model factory for corpus building: returns the watermarked model for a seed.
using Embedder = std::function<Mlp(std::uint64_t seed)>;

/// Feature vectors of `count` models produced by `make` from seeds base_seed + i.
inline std::vector<WeightVector> build_features(const Embedder& make, std::size_t count, std::uint64_t base_seed,
                                                const FeatureKey& fe, std::size_t threads = default_threads()) {
  std::vector<WeightVector> out(count);
  parallel_for(count, threads, [&](std::size_t i) { out[i] = extract_features(make(base_seed + i), fe); });
  return out;
}

}  // namespace wmark
