#pragma once

// Task loss, minibatch schedule and the plain training loop (Train / TrainBatch).

#include "wmark/data.hpp"
#include "wmark/nets.hpp"
#include "wmark/optim.hpp"

#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace wmark {

/// splitmix64 finalizer; derives independent stream seeds from one experiment seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kKey = 3;
inline constexpr std::uint64_t kExtractor = 4;
inline constexpr std::uint64_t kDetector = 5;
inline constexpr std::uint64_t kPool = 6;
inline constexpr std::uint64_t kMessage = 7;
}  // namespace streams

/// Categorical cross-entropy over minibatches of one labeled dataset (E_o).
class TaskLoss {
 public:
  explicit TaskLoss(const Dataset& data) : data_(&data) {}

  Tensor operator()(const Mlp& model, std::span<const std::size_t> batch) const {
    auto labels = data_->labels(batch);
    return softmax_cross_entropy(model.forward(data_->inputs(batch)), labels);
  }

  const Dataset& data() const { return *data_; }

 private:
  const Dataset* data_;
};

inline TaskLoss design_loss(const Dataset& train_set) {
  if (train_set.empty()) throw std::invalid_argument("design_loss: empty training set");
  return TaskLoss(train_set);
}

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 100;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;

  AdamState optimizer() const { return AdamState::with(lr, beta1, beta2); }
};

/// Reshuffles the example order once per epoch from a dedicated stream.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : order_(n), batch_(batch_size), rng_(seed) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  void shuffle() { std::shuffle(order_.begin(), order_.end(), rng_); }
  std::size_t batches() const { return (order_.size() + batch_ - 1) / batch_; }
  std::span<const std::size_t> batch(std::size_t b) const {
    std::size_t lo = b * batch_;
    std::size_t hi = std::min(order_.size(), lo + batch_);
    return {order_.data() + lo, hi - lo};
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::mt19937_64 rng_;
};

inline double accuracy(const Mlp& model, const Dataset& data) {
  NoGradGuard guard;
  std::size_t correct = 0;
  constexpr std::size_t chunk = 1024;
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    std::size_t hi = std::min(data.size(), lo + chunk);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    Tensor logits = model.forward(data.inputs(idx));
    std::size_t c = logits.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto row = logits.data().subspan(r * c, c);
      auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == data.y[idx[r]]) ++correct;
    }
  }
  return data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

inline double mean_task_loss(const Mlp& model, const Dataset& data) {
  NoGradGuard guard;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return softmax_cross_entropy(model.forward(data.inputs(idx)), data.labels(idx)).item();
}

/// Extra loss term added to E_o on every step; receives the model being trained.
using Regularizer = std::function<Tensor(const Mlp&)>;
/// Called after every epoch with the 1-based epoch number and the cumulative step count.
using EpochObserver = std::function<void(std::size_t epoch, std::size_t steps, const Mlp&)>;
/// Learning rate to use before a given 0-based step (schedules); nullptr keeps cfg.lr.
using LrSchedule = std::function<double(std::size_t step, std::size_t epoch)>;

struct TrainHistory {
  std::vector<double> task_loss;  // per-epoch mean E_o
  std::vector<double> reg_loss;   // per-epoch mean regularizer value (0 without one)
  std::size_t steps = 0;
};

struct TrainHooks {
  Regularizer regularizer;
  EpochObserver on_epoch;
  LrSchedule schedule;
  std::function<void(Mlp&)> after_step;  // e.g. re-applying a pruning mask
};

/// Train(E_o + R) from the model's current weights; TrainBatch is one Adam step on a minibatch.
inline TrainHistory train_in_place(const TaskLoss& loss, Mlp& model, const TrainConfig& cfg,
                                   std::uint64_t shuffle_seed, const TrainHooks& hooks = {}) {
  BatchSchedule schedule(loss.data().size(), cfg.batch_size, shuffle_seed);
  auto params = model.parameters();
  AdamState opt = cfg.optimizer();
  TrainHistory hist;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    schedule.shuffle();
    double task_sum = 0.0, reg_sum = 0.0;
    for (std::size_t b = 0; b < schedule.batches(); ++b) {
      if (hooks.schedule) opt.lr = hooks.schedule(hist.steps, epoch);
      Tensor total = loss(model, schedule.batch(b));
      task_sum += total.item();
      if (hooks.regularizer) {
        Tensor r = hooks.regularizer(model);
        reg_sum += r.item();
        total = add(total, r);
      }
      backward(total);
      adam_step(params, opt);
      if (hooks.after_step) hooks.after_step(model);
      ++hist.steps;
    }
    hist.task_loss.push_back(task_sum / static_cast<double>(schedule.batches()));
    hist.reg_loss.push_back(reg_sum / static_cast<double>(schedule.batches()));
    if (hooks.on_epoch) hooks.on_epoch(epoch + 1, hist.steps, model);
  }
  return hist;
}

/// Train(E_o) from the given initial weights; deterministic in `seed`.
inline Mlp train(const TaskLoss& loss, Mlp model, const TrainConfig& cfg, std::uint64_t seed,
                 TrainHistory* history = nullptr) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
  auto h = train_in_place(loss, model, cfg, derive_seed(seed, streams::kShuffle));
  if (history) *history = std::move(h);
  return model;
}

/// Train(E_o) from a freshly initialised classifier.
inline Mlp train(const TaskLoss& loss, const std::vector<std::size_t>& dims, const TrainConfig& cfg,
                 std::uint64_t seed, TrainHistory* history = nullptr) {
  return train(loss, make_classifier(dims, derive_seed(seed, streams::kInit)), cfg, seed, history);
}

}  // namespace wmark
