#pragma once

// Non-watermarked model zoo: trained baselines on disk plus a JSON manifest.

#include "wmark/config.hpp"
#include "wmark/serialize.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace wmark {

struct ZooEntry {
  std::string file;  // relative to the zoo directory
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::uint64_t architecture = 0;
};

struct ZooManifest {
  std::filesystem::path dir;
  std::vector<ZooEntry> entries;
  std::string config_snapshot;

  std::uint64_t architecture() const { return entries.empty() ? 0 : entries.front().architecture; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config_snapshot;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
      j["entries"].push_back({{"file", e.file}, {"seed", e.seed}, {"accuracy", e.accuracy},
                              {"architecture_hash", e.architecture}});
    return j;
  }
};

inline constexpr const char* kManifestName = "manifest.json";

/// Seeds of zoo models live in their own range so they never collide with experiment seeds.
inline std::uint64_t zoo_seed(std::uint64_t base, std::size_t i) { return derive_seed(base, 1000 + i); }

/// Trains `count` baselines with distinct seeds, writes their weights and the manifest.
inline ZooManifest build_zoo(const ExperimentConfig& cfg, const TaskData& task, std::size_t count,
                             const std::filesystem::path& dir) {
  if (count < 8) throw std::invalid_argument("a zoo needs at least 8 models");
  std::filesystem::create_directories(dir);
  ZooManifest manifest;
  manifest.dir = dir;
  manifest.config_snapshot = config_text(cfg);
  manifest.entries.resize(count);
  TaskLoss loss = design_loss(task.train);
  std::uint64_t arch = architecture_hash(cfg.dims);
  parallel_for(count, cfg.worker_threads(), [&](std::size_t i) {
    std::uint64_t seed = zoo_seed(cfg.seed, i);
    Mlp model = train(loss, cfg.dims, cfg.train, seed);
    std::string file = "model_" + std::to_string(i) + ".wmnn";
    try {
      save_mlp(dir / file, model);
    } catch (const std::exception& e) {
      throw FormatError("zoo entry " + std::to_string(i) + ": " + e.what());
    }
    manifest.entries[i] = {file, seed, accuracy(model, task.test), arch};
  });
  std::ofstream(dir / kManifestName) << manifest.to_json().dump(2) << '\n';
  return manifest;
}

/// Reads the manifest; rejects a zoo whose architecture differs from `dims`.
inline ZooManifest load_zoo(const std::filesystem::path& dir, const std::vector<std::size_t>& dims) {
  std::ifstream f(dir / kManifestName);
  if (!f) throw FormatError("no zoo manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("zoo manifest: ") + e.what());
  }
  ZooManifest m;
  m.dir = dir;
  m.config_snapshot = j.value("config", "");
  std::uint64_t expected = architecture_hash(dims);
  for (const auto& e : j.at("entries")) {
    ZooEntry entry{e.at("file").get<std::string>(), e.at("seed").get<std::uint64_t>(), e.at("accuracy").get<double>(),
                   e.at("architecture_hash").get<std::uint64_t>()};
    if (entry.architecture != expected)
      throw FormatError("zoo architecture hash does not match the configured model dims");
    m.entries.push_back(std::move(entry));
  }
  if (m.entries.empty()) throw FormatError("zoo manifest lists no models");
  return m;
}

inline std::vector<Mlp> load_zoo_models(const ZooManifest& m) {
  std::vector<Mlp> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_mlp(m.dir / e.file));
  return out;
}

inline NonWatermarkedPool zoo_pool(const std::vector<Mlp>& models, const FeatureKey& fe) {
  NonWatermarkedPool pool;
  for (const auto& model : models) pool.features.push_back(extract_features(model, fe));
  return pool;
}

inline double mean_zoo_accuracy(const ZooManifest& m) {
  double s = 0.0;
  for (const auto& e : m.entries) s += e.accuracy;
  return m.entries.empty() ? 0.0 : s / static_cast<double>(m.entries.size());
}

}  // namespace wmark
