#pragma once

// Experiment configuration read from INI-style text ("key = value" under
// [section] headers). Every key is optional; missing keys keep the defaults.

#include "wmark/attacks.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace wmark {

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";

  std::string dataset = "synthetic-gaussians";
  std::filesystem::path dataset_path;

  std::vector<std::size_t> dims{64, 128, 64, 10};
  std::size_t feature_layer = 1;

  MessageKind message_kind = MessageKind::Bits;
  std::size_t message_bits = 64;
  std::size_t image_width = 8, image_height = 8;
  std::filesystem::path message_file;  // overrides the random message when set

  Scheme scheme = Scheme::Riga;
  bool hiding = true;
  bool hiding_standardize = true;
  CriticMode critic = CriticMode::LogLoss;
  double lambda1 = 0.01;
  double lambda2 = 0.1;
  double clip_limit = 0.01;
  double uchida_lambda = 0.01;
  std::size_t trigger_count = 16;
  ExtractorShape extractor;
  DetectorShape detector;
  double loss_tolerance = 1e-3;
  double accuracy_gap = 0.01;
  std::size_t max_epochs = 100;

  TrainConfig train;  // epochs = baseline epochs and minimum embedding epochs

  std::filesystem::path zoo_path = "zoo";
  std::size_t zoo_count = 32;
  std::size_t threads = 0;  // 0 = hardware concurrency

  std::vector<std::string> attacks;
  std::size_t overwrite_epochs = 50;
  std::size_t finetune_epochs = 100;
  std::vector<double> refit_lrs{0.03, 0.05};
  std::vector<double> prune_ratios{0.25, 0.5, 0.75, 0.9};

  std::size_t pi_train_per_class = 64;
  std::size_t pi_test_per_class = 16;
  PropertyInferenceConfig pi;

  std::size_t worker_threads() const { return threads ? threads : default_threads(); }

  RigaConfig riga() const {
    RigaConfig c;
    c.hiding = {lambda1, lambda2, clip_limit, critic, hiding_standardize};
    c.hiding_on = hiding;
    c.train = train;
    c.max_epochs = max_epochs;
    c.loss_tolerance = loss_tolerance;
    c.feature_layer = feature_layer;
    c.extractor = extractor;
    c.detector = detector;
    c.dims = dims;
    return c;
  }

  LinearSchemeConfig linear() const {
    LinearSchemeConfig c;
    c.lambda = uchida_lambda;
    c.train = train;
    c.feature_layer = feature_layer;
    c.trigger_count = trigger_count;
    c.dims = dims;
    return c;
  }
};

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    auto e = item.find_last_not_of(" \t");
    std::istringstream is(item.substr(b, e - b + 1));
    T v{};
    if (!(is >> v)) throw std::invalid_argument("config: bad list element '" + item + "'");
    out.push_back(v);
  }
  return out;
}

template <>
inline std::vector<std::string> parse_list<std::string>(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.lambda1 < 0 || c.lambda2 < 0) throw std::invalid_argument("config: lambda1/lambda2 must be >= 0");
  if (!(c.clip_limit > 0)) throw std::invalid_argument("config: clip must be > 0");
  if (!(c.train.lr > 0) || c.train.batch_size == 0 || c.train.epochs == 0)
    throw std::invalid_argument("config: lr, batch and epochs must be positive");
  if (c.dims.size() < 2) throw std::invalid_argument("config: model dims need at least two widths");
  if (c.feature_layer + 1 >= c.dims.size()) throw std::invalid_argument("config: feature layer out of range");
  for (double r : c.prune_ratios)
    if (r < 0 || r > 1) throw std::invalid_argument("config: prune ratios must lie in [0,1]");
  for (double r : c.refit_lrs)
    if (!(r > 0)) throw std::invalid_argument("config: refit rates must be positive");
}

inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  auto str = [&](const char* key, const std::string& def) { return tree.get<std::string>(key, def); };

  c.name = str("experiment.name", c.name);
  c.seed = tree.get("experiment.seed", c.seed);
  c.output_dir = str("experiment.output", c.output_dir.string());
  c.threads = tree.get("experiment.threads", c.threads);

  c.dataset = str("data.dataset", c.dataset);
  c.dataset_path = str("data.path", c.dataset_path.string());

  if (auto d = tree.get_optional<std::string>("model.dims")) c.dims = detail::parse_list<std::size_t>(*d);
  c.feature_layer = tree.get("model.feature_layer", c.feature_layer);

  c.message_kind = message_kind_from(str("message.kind", to_string(c.message_kind)));
  c.message_bits = tree.get("message.bits", c.message_bits);
  c.image_width = tree.get("message.width", c.image_width);
  c.image_height = tree.get("message.height", c.image_height);
  c.message_file = str("message.file", c.message_file.string());

  c.scheme = scheme_from(str("scheme.name", to_string(c.scheme)));
  c.hiding = tree.get("scheme.hiding", c.hiding);
  c.hiding_standardize = tree.get("scheme.hiding_standardize", c.hiding_standardize);
  std::string critic = str("scheme.critic", c.critic == CriticMode::LogLoss ? "logloss" : "wasserstein");
  if (critic == "logloss") c.critic = CriticMode::LogLoss;
  else if (critic == "wasserstein") c.critic = CriticMode::WassersteinDifference;
  else throw std::invalid_argument("config: unknown critic '" + critic + "'");
  c.lambda1 = tree.get("scheme.lambda1", c.lambda1);
  c.lambda2 = tree.get("scheme.lambda2", c.lambda2);
  c.clip_limit = tree.get("scheme.clip", c.clip_limit);
  c.uchida_lambda = tree.get("scheme.uchida_lambda", c.uchida_lambda);
  c.trigger_count = tree.get("scheme.triggers", c.trigger_count);
  if (auto e = tree.get_optional<std::string>("scheme.extractor")) {
    auto v = detail::parse_list<std::size_t>(*e);
    if (v.size() != 2) throw std::invalid_argument("config: extractor needs two hidden widths");
    c.extractor = {v[0], v[1]};
  }
  if (auto d = tree.get_optional<std::string>("scheme.detector")) {
    auto v = detail::parse_list<std::size_t>(*d);
    if (v.size() != 2) throw std::invalid_argument("config: detector needs two hidden widths");
    c.detector = {v[0], v[1]};
  }
  c.loss_tolerance = tree.get("scheme.loss_tolerance", c.loss_tolerance);
  c.accuracy_gap = tree.get("scheme.accuracy_gap", c.accuracy_gap);
  c.max_epochs = tree.get("scheme.max_epochs", c.max_epochs);

  c.train.epochs = tree.get("train.epochs", c.train.epochs);
  c.train.batch_size = tree.get("train.batch", c.train.batch_size);
  c.train.lr = tree.get("train.lr", c.train.lr);
  c.train.beta1 = tree.get("train.beta1", c.train.beta1);
  c.train.beta2 = tree.get("train.beta2", c.train.beta2);

  c.zoo_path = str("zoo.path", c.zoo_path.string());
  c.zoo_count = tree.get("zoo.count", c.zoo_count);

  if (auto a = tree.get_optional<std::string>("attacks.list")) c.attacks = detail::parse_list<std::string>(*a);
  c.overwrite_epochs = tree.get("attacks.overwrite_epochs", c.overwrite_epochs);
  c.finetune_epochs = tree.get("attacks.finetune_epochs", c.finetune_epochs);
  if (auto r = tree.get_optional<std::string>("attacks.refit_lrs")) c.refit_lrs = detail::parse_list<double>(*r);
  if (auto r = tree.get_optional<std::string>("attacks.prune_ratios")) c.prune_ratios = detail::parse_list<double>(*r);

  c.pi_train_per_class = tree.get("property_inference.train_per_class", c.pi_train_per_class);
  c.pi_test_per_class = tree.get("property_inference.test_per_class", c.pi_test_per_class);
  c.pi.epochs = tree.get("property_inference.epochs", c.pi.epochs);
  c.pi.batch_size = tree.get("property_inference.batch", c.pi.batch_size);
  c.pi.lr = tree.get("property_inference.lr", c.pi.lr);

  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config " + path.string());
  return parse_config(f);
}

/// Writes every field back in the same INI layout (a full snapshot of the effective config).
inline std::string config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(10);
  os << "[experiment]\nname = " << c.name << "\nseed = " << c.seed << "\noutput = " << c.output_dir.string()
     << "\nthreads = " << c.threads << "\n\n";
  os << "[data]\ndataset = " << c.dataset << "\npath = " << c.dataset_path.string() << "\n\n";
  os << "[model]\ndims = " << detail::join_list(c.dims) << "\nfeature_layer = " << c.feature_layer << "\n\n";
  os << "[message]\nkind = " << to_string(c.message_kind) << "\nbits = " << c.message_bits
     << "\nwidth = " << c.image_width << "\nheight = " << c.image_height << "\nfile = " << c.message_file.string()
     << "\n\n";
  os << "[scheme]\nname = " << to_string(c.scheme) << "\nhiding = " << (c.hiding ? "true" : "false")
     << "\nhiding_standardize = " << (c.hiding_standardize ? "true" : "false")
     << "\ncritic = " << (c.critic == CriticMode::LogLoss ? "logloss" : "wasserstein") << "\nlambda1 = " << c.lambda1
     << "\nlambda2 = " << c.lambda2 << "\nclip = " << c.clip_limit << "\nuchida_lambda = " << c.uchida_lambda
     << "\ntriggers = " << c.trigger_count << "\nextractor = " << c.extractor.hidden1 << ',' << c.extractor.hidden2
     << "\ndetector = " << c.detector.hidden1 << ',' << c.detector.hidden2
     << "\nloss_tolerance = " << c.loss_tolerance << "\naccuracy_gap = " << c.accuracy_gap
     << "\nmax_epochs = " << c.max_epochs << "\n\n";
  os << "[train]\nepochs = " << c.train.epochs << "\nbatch = " << c.train.batch_size << "\nlr = " << c.train.lr
     << "\nbeta1 = " << c.train.beta1 << "\nbeta2 = " << c.train.beta2 << "\n\n";
  os << "[zoo]\npath = " << c.zoo_path.string() << "\ncount = " << c.zoo_count << "\n\n";
  os << "[attacks]\nlist = " << detail::join_list(c.attacks) << "\noverwrite_epochs = " << c.overwrite_epochs
     << "\nfinetune_epochs = " << c.finetune_epochs << "\nrefit_lrs = " << detail::join_list(c.refit_lrs)
     << "\nprune_ratios = " << detail::join_list(c.prune_ratios) << "\n\n";
  os << "[property_inference]\ntrain_per_class = " << c.pi_train_per_class
     << "\ntest_per_class = " << c.pi_test_per_class << "\nepochs = " << c.pi.epochs << "\nbatch = " << c.pi.batch_size
     << "\nlr = " << c.pi.lr << "\n";
  return os.str();
}

}  // namespace wmark
