#pragma once

#include "wmark/attacks.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmark {

// ---------------------------------------------------------------------------
// Covertness game

struct GameOutcome {
  std::size_t trials = 0;
  std::size_t wins = 0;
  double advantage() const { return trials ? static_cast<double>(wins) / static_cast<double>(trials) - 0.5 : 0.0; }
};

/// Guesses 1 (watermarked) or 0 from a model's raw feature vector.
using Distinguisher = std::function<int(const WeightVector&)>;

inline Distinguisher constant_guess(int bit) {
  return [bit](const WeightVector&) { return bit; };
}

inline Distinguisher detector_distinguisher(Mlp detector, FeatureScaler scaler = FeatureScaler::identity()) {
  return [det = std::move(detector), sc = std::move(scaler)](const WeightVector& q) {
    return detector_score(det, q, sc) >= 0.5 ? 1 : 0;
  };
}

/// Each trial flips a fair coin, builds a fresh baseline (b = 0) or watermarked
/// (b = 1) model from an unused seed and asks the adversary for b. The adversary
/// must have been trained on models outside [seed_base, seed_base + trials).
inline GameOutcome covertness_game(const Embedder& baseline, const Embedder& watermarked, const FeatureKey& fe,
                                   const Distinguisher& adversary, std::size_t trials, std::uint64_t seed_base,
                                   std::size_t threads = default_threads()) {
  if (trials < 20) throw std::invalid_argument("covertness game needs at least 20 trials");
  std::mt19937_64 coin_rng(derive_seed(seed_base, streams::kKey));
  std::bernoulli_distribution coin(0.5);
  std::vector<int> bits(trials);
  for (auto& b : bits) b = coin(coin_rng) ? 1 : 0;
  std::vector<int> correct(trials, 0);
  parallel_for(trials, threads, [&](std::size_t i) {
    const Embedder& make = bits[i] ? watermarked : baseline;
    correct[i] = adversary(extract_features(make(seed_base + i), fe)) == bits[i] ? 1 : 0;
  });
  GameOutcome g;
  g.trials = trials;
  g.wins = static_cast<std::size_t>(std::accumulate(correct.begin(), correct.end(), 0));
  return g;
}

// ---------------------------------------------------------------------------
// Validity and non-trivial ownership

struct ValidityResult {
  double own_loss = 0.0;    // extractor A on model A
  double cross_loss = 0.0;  // extractor A on model B
  double ratio() const { return own_loss > 0.0 ? cross_loss / own_loss : std::numeric_limits<double>::infinity(); }
};

/// Two RIGA embeddings of the same message that differ only in their seed.
inline ValidityResult validity_experiment(const TaskData& task, const WatermarkMessage& m,
                                          const NonWatermarkedPool& pool, const RigaConfig& cfg, std::uint64_t seed_a,
                                          std::uint64_t seed_b) {
  EmbedResult a = riga_embed(task, m, pool, cfg, seed_a);
  EmbedResult b = seed_b == seed_a ? a : riga_embed(task, m, pool, cfg, seed_b);
  ValidityResult r;
  r.own_loss = embedding_loss(extract(a.model, a.key), m);
  r.cross_loss = embedding_loss(extract(b.model, a.key), m);
  return r;
}

/// BER of the key's extraction against its message on each foreign model.
inline std::vector<double> nontrivial_ownership(const ExtractionKey& key, const WatermarkMessage& m,
                                                const std::vector<Mlp>& foreign_models) {
  if (foreign_models.size() < 20) throw std::invalid_argument("non-trivial ownership needs at least 20 models");
  std::vector<double> out;
  out.reserve(foreign_models.size());
  for (const auto& model : foreign_models) out.push_back(ber(extract(model, key), m));
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean of empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Earth mover's distance: exact 1-D oracle and the clipped-critic estimate

/// Exact W1 between two equal-size empirical measures on the line.
inline double emd_oracle_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("emd_oracle_1d: sample sizes differ");
  if (a.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct CriticConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  double lr = 5e-4;
  double clip_limit = 0.01;
  DetectorShape shape{64, 64};
};

struct CriticEstimate {
  double raw_difference = 0.0;  // mean D(b) - mean D(a) of the clipped critic
  double lipschitz = 0.0;       // largest |dD/dx| over both samples
  double emd() const { return lipschitz > 0.0 ? raw_difference / lipschitz : 0.0; }
};

/// Trains a weight-clipped critic to separate b from a and rescales its
/// difference by the critic's empirical Lipschitz constant.
inline CriticEstimate critic_emd_estimate(const std::vector<double>& a, const std::vector<double>& b,
                                          const CriticConfig& cfg, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw std::invalid_argument("critic estimate needs nonempty samples");
  Mlp critic = make_detector(1, CriticMode::WassersteinDifference, derive_seed(seed, streams::kDetector), cfg.shape);
  auto params = critic.parameters();
  clamp_weights(params, cfg.clip_limit);
  AdamState opt = AdamState::with(cfg.lr);
  std::mt19937_64 rng(derive_seed(seed, streams::kShuffle));
  std::uniform_int_distribution<std::size_t> pa(0, a.size() - 1), pb(0, b.size() - 1);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    std::vector<double> xa(cfg.batch), xb(cfg.batch);
    for (auto& v : xa) v = a[pa(rng)];
    for (auto& v : xb) v = b[pb(rng)];
    // Critic treats b as "non-watermarked" (scored high) and a as "watermarked".
    backward(detector_loss(critic, Tensor::matrix(cfg.batch, 1, xb), Tensor::matrix(cfg.batch, 1, xa),
                           CriticMode::WassersteinDifference));
    adam_step(params, opt);
    clamp_weights(params, cfg.clip_limit);
  }

  CriticEstimate est;
  critic.set_requires_grad(false);
  auto score = [&](const std::vector<double>& xs, double& mean_out) {
    Tensor x = Tensor::matrix(xs.size(), 1, xs, true);
    Tensor d = critic.forward(x);
    mean_out = mean(d).item();
    backward(sum(d));
    for (double g : x.grad()) est.lipschitz = std::max(est.lipschitz, std::fabs(g));
  };
  double ma = 0.0, mb = 0.0;
  score(a, ma);
  score(b, mb);
  critic.set_requires_grad(true);
  est.raw_difference = mb - ma;
  return est;
}

// ---------------------------------------------------------------------------
// Verdicts

struct Verdict {
  std::string requirement;
  std::string metric;
  std::string comparison;  // "<", "<=", ">=", ">", "in"
  nlohmann::json threshold;
  double observed = 0.0;
  bool pass = false;

  nlohmann::json to_json() const {
    return {{"requirement", requirement}, {"metric", metric},     {"comparison", comparison},
            {"threshold", threshold},     {"observed", observed}, {"pass", pass}};
  }
};

inline Verdict make_verdict(std::string requirement, std::string metric, const std::string& cmp, double threshold,
                            double observed) {
  bool pass = cmp == "<"    ? observed < threshold
              : cmp == "<=" ? observed <= threshold
              : cmp == ">=" ? observed >= threshold
              : cmp == ">"  ? observed > threshold
                            : throw std::invalid_argument("unknown comparison '" + cmp + "'");
  return {std::move(requirement), std::move(metric), cmp, threshold, observed, pass};
}

inline Verdict make_range_verdict(std::string requirement, std::string metric, double lo, double hi,
                                  double observed) {
  return {std::move(requirement), std::move(metric), "in", nlohmann::json::array({lo, hi}), observed,
          observed >= lo && observed <= hi};
}

inline void save_verdicts(const std::filesystem::path& path, const std::vector<Verdict>& verdicts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : verdicts) arr.push_back(v.to_json());
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream(path) << arr.dump(2) << '\n';
}

}  // namespace wmark
