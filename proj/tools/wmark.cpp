#include "wmark/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using namespace wmark;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (INI)");
  cmd->add_option("--seed", c.seed, "experiment seed (overrides the config)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (const char* root = std::getenv("WMARK_OUTPUT_ROOT")) {
    cfg.output_dir = std::filesystem::path(root) / cfg.output_dir.filename();
    if (cfg.zoo_path.is_relative()) cfg.zoo_path = std::filesystem::path(root) / cfg.zoo_path;
  }
  return cfg;
}

std::filesystem::path run_dir(const ExperimentConfig& cfg) { return cfg.output_dir / cfg.name; }

void print_verdicts(const std::vector<Verdict>& verdicts) {
  for (const auto& v : verdicts)
    std::cout << (v.pass ? "PASS " : "FAIL ") << v.requirement << ' ' << v.metric << ' ' << v.comparison << ' '
              << v.threshold.dump() << " observed " << v.observed << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"White-box neural network watermarking toolkit"};
  app.require_subcommand(1);

  Common zoo_opts, embed_opts, extract_opts, attack_opts, verify_opts, report_opts;
  std::size_t zoo_count = 0;
  auto* zoo_cmd = app.add_subcommand("zoo", "train and persist a zoo of non-watermarked models");
  add_common(zoo_cmd, zoo_opts);
  zoo_cmd->add_option("--count", zoo_count, "number of models (default from config)");

  auto* embed_cmd = app.add_subcommand("embed", "embed a watermark and save model, key and message");
  add_common(embed_cmd, embed_opts);

  std::string model_path, key_path, message_path;
  auto* extract_cmd = app.add_subcommand("extract", "extract a message from a model with a key");
  add_common(extract_cmd, extract_opts);
  extract_cmd->add_option("--model", model_path, "weight file")->required();
  extract_cmd->add_option("--key", key_path, "key file")->required();
  extract_cmd->add_option("--message", message_path, "message file to compare against");

  std::vector<std::string> attack_names;
  auto* attack_cmd = app.add_subcommand("attack", "attack the model produced by 'embed'");
  add_common(attack_cmd, attack_opts);
  attack_cmd->add_option("--attack", attack_names, "attack names (default: the config's list)")
      ->check(CLI::IsMember(known_attacks()));

  auto* verify_cmd = app.add_subcommand("verify", "score the embedded model against the requirements");
  add_common(verify_cmd, verify_opts);

  auto* report_cmd = app.add_subcommand("report", "run embed, verify and all configured attacks");
  add_common(report_cmd, report_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*zoo_cmd) {
      auto cfg = resolve(zoo_opts);
      auto task = load_dataset(cfg.dataset, cfg.dataset_path);
      auto manifest = build_zoo(cfg, task, zoo_count ? zoo_count : cfg.zoo_count, cfg.zoo_path);
      std::cout << "zoo: " << manifest.entries.size() << " models in " << cfg.zoo_path.string()
                << ", mean accuracy " << mean_zoo_accuracy(manifest) << '\n';
    } else if (*embed_cmd) {
      auto cfg = resolve(embed_opts);
      auto task = load_dataset(cfg.dataset, cfg.dataset_path);
      auto zoo = ensure_zoo(cfg, task);
      auto pool = zoo_pool(load_zoo_models(zoo), FeatureKey::weight_layer(cfg.feature_layer));
      auto m = make_message(cfg, cfg.seed);
      auto r = embed_with(cfg, task, m, pool, cfg.seed, mean_zoo_accuracy(zoo) - cfg.accuracy_gap);
      auto dir = run_dir(cfg);
      std::filesystem::create_directories(dir);
      save_mlp(dir / "watermarked.wmnn", r.model);
      save_key(dir / "key.wmk", r.key);
      save_message((dir / "message.txt").string(), m);
      std::ofstream(dir / "embed_curves.csv") << curves_csv(r);
      std::cout << "embedded " << to_string(cfg.scheme) << " watermark: accuracy " << r.final_accuracy
                << ", embedding loss " << r.final_embedding_loss << ", BER " << r.final_ber << " after "
                << r.curves.size() << " epochs" << (r.converged ? "" : " (" + r.status + ")") << '\n';
    } else if (*extract_cmd) {
      auto model = load_mlp(model_path);
      auto key = load_key(key_path);
      auto soft = extract(model, key);
      if (soft.kind == MessageKind::Bits) {
        for (int b : soft.hard_bits()) std::cout << b;
        std::cout << '\n';
      } else {
        for (std::size_t i = 0; i < soft.values.size(); ++i)
          std::cout << soft.values[i] << ((i + 1) % std::max<std::size_t>(1, key.width) ? ' ' : '\n');
      }
      if (!message_path.empty()) {
        auto m = load_message(message_path);
        std::cout << "embedding loss " << embedding_loss(soft, m);
        if (m.kind() == MessageKind::Bits) std::cout << ", BER " << ber(soft, m);
        std::cout << '\n';
      }
    } else if (*attack_cmd) {
      auto cfg = resolve(attack_opts);
      auto dir = run_dir(cfg);
      auto task = load_dataset(cfg.dataset, cfg.dataset_path);
      auto victim = load_mlp(dir / "watermarked.wmnn");
      auto key = load_key(dir / "key.wmk");
      auto m = load_message((dir / "message.txt").string());
      auto pool = zoo_pool(load_zoo_models(load_zoo(cfg.zoo_path, cfg.dims)),
                           FeatureKey::weight_layer(cfg.feature_layer));
      WatermarkProbe probe{&key, &m, &task.test};
      for (const auto& name : attack_names.empty() ? cfg.attacks : attack_names) {
        if (name == "property-inference") {
          auto run = run_property_inference(cfg, task, pool, cfg.seed);
          std::cout << "property-inference: held-out detection accuracy " << run.result.final_accuracy() << '\n';
          continue;
        }
        for (const auto& report : run_attack(name, cfg, task, victim, probe, pool, cfg.seed)) {
          report.save(dir / "attacks");
          auto c = report.crossing();
          std::cout << report.attack << ": final BER " << report.last().ber << ", embedding loss "
                    << report.last().embedding_loss << ", crossing "
                    << (c ? "at accuracy " + std::to_string(c->accuracy) : std::string("N/A")) << '\n';
        }
      }
    } else if (*verify_cmd) {
      auto cfg = resolve(verify_opts);
      auto dir = run_dir(cfg);
      auto task = load_dataset(cfg.dataset, cfg.dataset_path);
      EmbedResult r;
      r.model = load_mlp(dir / "watermarked.wmnn");
      r.key = load_key(dir / "key.wmk");
      r.message = load_message((dir / "message.txt").string());
      auto metrics = watermark_metrics(r.model, r.key, r.message);
      r.final_ber = metrics.ber;
      r.final_embedding_loss = metrics.embedding_loss;
      r.final_accuracy = accuracy(r.model, task.test);
      auto zoo = load_zoo(cfg.zoo_path, cfg.dims);
      auto verdicts = embed_verdicts(cfg, r, mean_zoo_accuracy(zoo), load_zoo_models(zoo));
      save_verdicts(dir / "verdicts.json", verdicts);
      print_verdicts(verdicts);
    } else if (*report_cmd) {
      auto cfg = resolve(report_opts);
      auto bundle = run_experiment(cfg);
      print_verdicts(bundle.verdicts);
      if (!bundle.ok) {
        std::cerr << "stage " << bundle.failed_stage << " failed: " << bundle.error << '\n';
        return 2;
      }
      std::cout << "results in " << bundle.dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
