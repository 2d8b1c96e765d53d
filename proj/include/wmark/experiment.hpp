#pragma once

// End-to-end pipeline: embed, verify, attack, and write every artifact under one directory.

#include "wmark/config.hpp"
#include "wmark/keys.hpp"
#include "wmark/verify.hpp"
#include "wmark/zoo.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace wmark {

inline WatermarkMessage make_message(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.message_file.empty()) return load_message(cfg.message_file.string());
  std::mt19937_64 rng(derive_seed(seed, streams::kMessage));
  return cfg.message_kind == MessageKind::Bits ? WatermarkMessage::random_bits(cfg.message_bits, rng)
                                               : WatermarkMessage::random_image(cfg.image_width, cfg.image_height, rng);
}

/// Embeds `m` with the configured scheme. `accuracy_floor` feeds RIGA's stopping rule.
inline EmbedResult embed_with(const ExperimentConfig& cfg, const TaskData& task, const WatermarkMessage& m,
                              const NonWatermarkedPool& pool, std::uint64_t seed, double accuracy_floor = 0.0) {
  switch (cfg.scheme) {
    case Scheme::Uchida: return uchida_embed(task, m, cfg.linear(), seed);
    case Scheme::DeepSigns: return deepsigns_embed(task, m, cfg.linear(), seed);
    case Scheme::Riga: {
      RigaConfig rc = cfg.riga();
      rc.min_accuracy = accuracy_floor;
      return riga_embed(task, m, pool, rc, seed);
    }
  }
  throw std::logic_error("unreachable scheme");
}

// ---------------------------------------------------------------------------
// Property inference corpus

struct PropertyInferenceRun {
  PropertyInferenceResult result;
  FeatureCorpus train_set;
  FeatureCorpus test_set;
};

/// Baseline feature vectors for a corpus, from a seed range disjoint from the zoo.
inline std::vector<WeightVector> baseline_features(const ExperimentConfig& cfg, const TaskData& task,
                                                   std::size_t count, std::uint64_t base_seed) {
  TaskLoss loss = design_loss(task.train);
  Embedder make = [&](std::uint64_t s) { return train(loss, cfg.dims, cfg.train, s); };
  return build_features(make, count, base_seed, FeatureKey::weight_layer(cfg.feature_layer), cfg.worker_threads());
}

inline std::vector<WeightVector> watermarked_features(const ExperimentConfig& cfg, const TaskData& task,
                                                      const NonWatermarkedPool& pool, std::size_t count,
                                                      std::uint64_t base_seed) {
  Embedder make = [&](std::uint64_t s) {
    std::mt19937_64 rng(derive_seed(s, streams::kMessage));
    WatermarkMessage m = cfg.message_kind == MessageKind::Bits
                             ? WatermarkMessage::random_bits(cfg.message_bits, rng)
                             : WatermarkMessage::random_image(cfg.image_width, cfg.image_height, rng);
    return embed_with(cfg, task, m, pool, s).model;
  };
  return build_features(make, count, base_seed, FeatureKey::weight_layer(cfg.feature_layer), cfg.worker_threads());
}

/// Seed ranges for corpus models; all far from zoo_seed() and experiment seeds.
struct CorpusSeeds {
  std::uint64_t baseline_train = 5'000'000;
  std::uint64_t baseline_test = 6'000'000;
  std::uint64_t watermarked_train = 7'000'000;
  std::uint64_t watermarked_test = 8'000'000;
};

/// Builds (or reuses) baseline features and trains the attacker's detector on the
/// configured scheme's watermarked models.
inline PropertyInferenceRun run_property_inference(const ExperimentConfig& cfg, const TaskData& task,
                                                   const NonWatermarkedPool& pool, std::uint64_t seed,
                                                   const std::vector<WeightVector>* shared_base_train = nullptr,
                                                   const std::vector<WeightVector>* shared_base_test = nullptr,
                                                   CorpusSeeds seeds = {}) {
  if (cfg.pi_train_per_class < 8 || cfg.pi_test_per_class < 8)
    throw std::invalid_argument("property inference needs at least 8 models per class in each split");
  PropertyInferenceRun run;
  run.train_set.add(shared_base_train ? *shared_base_train
                                      : baseline_features(cfg, task, cfg.pi_train_per_class, seeds.baseline_train),
                    0);
  run.test_set.add(shared_base_test ? *shared_base_test
                                    : baseline_features(cfg, task, cfg.pi_test_per_class, seeds.baseline_test),
                   0);
  run.train_set.add(watermarked_features(cfg, task, pool, cfg.pi_train_per_class, seeds.watermarked_train), 1);
  run.test_set.add(watermarked_features(cfg, task, pool, cfg.pi_test_per_class, seeds.watermarked_test), 1);
  run.result = property_inference(run.train_set, run.test_set, cfg.pi, seed);
  return run;
}

// ---------------------------------------------------------------------------
// Plot data

/// Long-format rows: figure, series, x, y.
class PlotData {
 public:
  void add(const std::string& figure, const std::string& series, double x, double y) {
    rows_.push_back({figure, series, x, y});
  }

  void add_report(const AttackReport& r) {
    bool pruning = r.attack.rfind("prune", 0) == 0;
    bool overwriting = r.attack.rfind("overwrite", 0) == 0;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      const auto& row = r.rows[i];
      if (pruning) {
        add("ber_vs_prune_ratio", r.attack, row.ratio, row.ber);
        add("accuracy_vs_prune_ratio", r.attack, row.ratio, row.accuracy);
      } else if (overwriting) {
        add("embedding_loss_vs_overwrite_epoch", r.attack, static_cast<double>(i), row.embedding_loss);
        add("ber_vs_overwrite_epoch", r.attack, static_cast<double>(i), row.ber);
      } else {
        add("accuracy_vs_finetune_epoch", r.attack, static_cast<double>(i), row.accuracy);
        add("ber_vs_finetune_epoch", r.attack, static_cast<double>(i), row.ber);
      }
    }
  }

  void add_detection(const std::string& series, const PropertyInferenceResult& r) {
    for (std::size_t e = 0; e < r.test_accuracy.size(); ++e)
      add("detection_accuracy_vs_epoch", series, static_cast<double>(e + 1), r.test_accuracy[e]);
  }

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "figure,series,x,y\n";
    for (const auto& r : rows_) os << r.figure << ',' << r.series << ',' << r.x << ',' << r.y << '\n';
    return os.str();
  }

  std::size_t size() const { return rows_.size(); }

 private:
  struct Row {
    std::string figure, series;
    double x, y;
  };
  std::vector<Row> rows_;
};

inline std::string curves_csv(const EmbedResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,task_loss,wm_loss,det_loss,test_accuracy,embedding_loss,ber\n";
  for (const auto& c : r.curves)
    os << c.epoch << ',' << c.task_loss << ',' << c.wm_loss << ',' << c.det_loss << ',' << c.test_accuracy << ','
       << c.embedding_loss << ',' << c.ber << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Attacks by name

inline std::vector<std::string> known_attacks() {
  return {"overwrite", "overwrite-double", "ftal", "rtal", "refit", "doubling",
          "prune-ascending", "prune-descending", "fineprune", "property-inference"};
}

/// Runs one named attack; property inference is handled by the caller.
inline std::vector<AttackReport> run_attack(const std::string& name, const ExperimentConfig& cfg,
                                            const TaskData& task, const Mlp& victim, const WatermarkProbe& probe,
                                            const NonWatermarkedPool& attacker_pool, std::uint64_t seed) {
  std::vector<AttackReport> out;
  auto ft = [&](FineTuneMode mode, LrPlan plan) {
    FineTuneConfig c;
    c.mode = mode;
    c.plan = plan;
    c.epochs = cfg.finetune_epochs;
    c.train = cfg.train;
    return c;
  };
  if (name == "overwrite" || name == "overwrite-double") {
    OverwriteConfig oc;
    oc.scheme = probe.key->scheme;
    oc.kind = probe.message->kind();
    std::size_t factor = name == "overwrite" ? 1 : 2;
    oc.t = probe.message->size() * factor;
    oc.width = probe.message->width() * factor;
    oc.height = probe.message->height();
    oc.epochs = cfg.overwrite_epochs;
    oc.linear = cfg.linear();
    oc.riga = cfg.riga();
    out.push_back(overwrite(victim, probe, task, attacker_pool, oc, seed).report);
  } else if (name == "ftal") {
    out.push_back(finetune(victim, probe, task, ft(FineTuneMode::FTAL, FixedLr{cfg.train.lr}), seed).report);
  } else if (name == "rtal") {
    out.push_back(finetune(victim, probe, task, ft(FineTuneMode::RTAL, FixedLr{cfg.train.lr}), seed).report);
  } else if (name == "refit") {
    for (double lr : cfg.refit_lrs)
      out.push_back(finetune(victim, probe, task, ft(FineTuneMode::FTAL, RefitLr{lr, 0.9, 500}), seed).report);
  } else if (name == "doubling") {
    out.push_back(finetune(victim, probe, task, ft(FineTuneMode::FTAL, DoublingLr{cfg.train.lr, 10}), seed).report);
  } else if (name == "prune-ascending") {
    out.push_back(prune(victim, probe, cfg.prune_ratios, PruneOrder::Ascending, seed));
  } else if (name == "prune-descending") {
    out.push_back(prune(victim, probe, cfg.prune_ratios, PruneOrder::Descending, seed));
  } else if (name == "fineprune") {
    FinePruneConfig fc;
    fc.finetune = ft(FineTuneMode::FTAL, FixedLr{cfg.train.lr});
    out.push_back(fine_prune(victim, probe, task, fc, seed).outcome.report);
    fc.finetune = ft(FineTuneMode::FTAL, RefitLr{cfg.refit_lrs.empty() ? 0.05 : cfg.refit_lrs.back(), 0.9, 500});
    out.push_back(fine_prune(victim, probe, task, fc, seed).outcome.report);
  } else {
    throw std::invalid_argument("unknown attack '" + name + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct ResultBundle {
  std::filesystem::path dir;
  EmbedResult embed;
  double baseline_accuracy = 0.0;
  std::vector<AttackReport> reports;
  std::vector<Verdict> verdicts;
  bool ok = true;
  std::string failed_stage;
  std::string error;
};

/// The zoo as configured, built on first use. Rejects an existing zoo of another architecture.
inline ZooManifest ensure_zoo(const ExperimentConfig& cfg, const TaskData& task) {
  if (std::filesystem::exists(cfg.zoo_path / kManifestName)) return load_zoo(cfg.zoo_path, cfg.dims);
  return build_zoo(cfg, task, cfg.zoo_count, cfg.zoo_path);
}

inline std::vector<Verdict> embed_verdicts(const ExperimentConfig& cfg, const EmbedResult& r, double baseline,
                                           const std::vector<Mlp>& foreign) {
  std::vector<Verdict> v;
  v.push_back(make_verdict("functionality-preserving", "test_accuracy_minus_baseline", ">=", -cfg.accuracy_gap,
                           r.final_accuracy - baseline));
  v.push_back(make_verdict("extraction", "embedding_loss", "<", cfg.loss_tolerance, r.final_embedding_loss));
  if (r.message.kind() == MessageKind::Bits) {
    v.push_back(make_verdict("extraction", "ber", "<=", 0.0, r.final_ber));
    if (foreign.size() >= 20) {
      v.push_back(make_range_verdict("non-trivial-ownership", "mean_ber_foreign_models", 0.35, 0.65,
                                     mean_of(nontrivial_ownership(r.key, r.message, foreign))));
    }
  }
  return v;
}

inline void write_failure(const std::filesystem::path& dir, const std::string& stage, const std::string& error) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "failure.json") << nlohmann::json{{"stage", stage}, {"error", error}}.dump(2) << '\n';
}

/// embed -> verify -> attacks; on a stage failure the earlier outputs stay on disk
/// and failure.json records the stage and message.
inline ResultBundle run_experiment(const ExperimentConfig& cfg) {
  ResultBundle b;
  b.dir = cfg.output_dir / cfg.name;
  std::filesystem::create_directories(b.dir);
  std::ofstream(b.dir / "config.ini") << config_text(cfg);
  std::string stage = "setup";
  try {
    TaskData task = load_dataset(cfg.dataset, cfg.dataset_path);
    FeatureKey fe = FeatureKey::weight_layer(cfg.feature_layer);
    ZooManifest zoo = ensure_zoo(cfg, task);
    std::vector<Mlp> zoo_models = load_zoo_models(zoo);
    NonWatermarkedPool pool = zoo_pool(zoo_models, fe);
    b.baseline_accuracy = mean_zoo_accuracy(zoo);

    stage = "embed";
    WatermarkMessage m = make_message(cfg, cfg.seed);
    b.embed = embed_with(cfg, task, m, pool, cfg.seed, b.baseline_accuracy - cfg.accuracy_gap);
    save_mlp(b.dir / "watermarked.wmnn", b.embed.model);
    save_key(b.dir / "key.wmk", b.embed.key);
    save_message((b.dir / "message.txt").string(), m);
    std::ofstream(b.dir / "embed_curves.csv") << curves_csv(b.embed);
    std::ofstream(b.dir / "embed.json") << nlohmann::json{{"scheme", to_string(cfg.scheme)},
                                                          {"converged", b.embed.converged},
                                                          {"status", b.embed.status},
                                                          {"epochs", b.embed.curves.size()},
                                                          {"final_accuracy", b.embed.final_accuracy},
                                                          {"final_embedding_loss", b.embed.final_embedding_loss},
                                                          {"final_ber", b.embed.final_ber},
                                                          {"baseline_accuracy", b.baseline_accuracy}}
                                               .dump(2)
                                        << '\n';

    stage = "verify";
    b.verdicts = embed_verdicts(cfg, b.embed, b.baseline_accuracy, zoo_models);
    save_verdicts(b.dir / "verdicts.json", b.verdicts);

    PlotData plot;
    for (const auto& c : b.embed.curves) {
      plot.add("embedding_loss_vs_epoch", "embed", static_cast<double>(c.epoch), c.embedding_loss);
      plot.add("accuracy_vs_epoch", "embed", static_cast<double>(c.epoch), c.test_accuracy);
    }
    WatermarkProbe probe{&b.embed.key, &b.embed.message, &task.test};
    for (const auto& name : cfg.attacks) {
      stage = "attack:" + name;
      if (name == "property-inference") {
        auto run = run_property_inference(cfg, task, pool, cfg.seed);
        plot.add_detection(std::string(to_string(cfg.scheme)) + (cfg.hiding ? "-hiding" : ""), run.result);
        b.verdicts.push_back(make_verdict("covertness", "property_inference_accuracy", "<=", 0.65,
                                          run.result.final_accuracy()));
        save_verdicts(b.dir / "verdicts.json", b.verdicts);
        continue;
      }
      for (auto& report : run_attack(name, cfg, task, b.embed.model, probe, pool, cfg.seed)) {
        report.save(b.dir / "attacks");
        plot.add_report(report);
        b.reports.push_back(std::move(report));
      }
    }
    std::ofstream(b.dir / "plot_data.csv") << plot.csv();
  } catch (const std::exception& e) {
    b.ok = false;
    b.failed_stage = stage;
    b.error = e.what();
    write_failure(b.dir, stage, e.what());
  }
  return b;
}

}  // namespace wmark
