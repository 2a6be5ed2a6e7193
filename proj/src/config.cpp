#include "allmatch/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace allmatch {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& scope,
                const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError("config: expected an object at '" + scope + "'");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key()))
      throw ConfigError("config: unknown key '" +
                        (scope.empty() ? item.key() : scope + "." + item.key()) +
                        "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out,
                const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" +
                      (scope.empty() ? key : scope + "." + std::string(key)) +
                      "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  static const std::set<std::string> kStrategies = {
      "fixmatch", "flexmatch", "freematch", "softmatch", "allmatch"};
  if (!kStrategies.count(strategy))
    throw ConfigError("config: unknown strategy '" + strategy + "'");
  if (lambda_u < 0.0 || lambda_b < 0.0)
    throw ConfigError("config: lambda_u and lambda_b must be >= 0");
  if (total_iterations < 1)
    throw ConfigError("config: total_iterations must be >= 1");
  if (batch_labeled < 1) throw ConfigError("config: batch_labeled must be >= 1");
  if (batch_unlabeled < 0)
    throw ConfigError("config: batch_unlabeled must be >= 0");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
    throw ConfigError("config: ema_momentum outside [0,1]");
  if (!(model_ema_decay >= 0.0 && model_ema_decay <= 1.0))
    throw ConfigError("config: model_ema_decay outside [0,1]");
  if (candidate_cap < 1) throw ConfigError("config: candidate_cap must be >= 1");
  if (clamp_range) {
    auto [lo, hi] = *clamp_range;
    if (!(0.0 <= lo && lo <= hi && hi <= 1.0))
      throw ConfigError("config: clamp_range must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(fixmatch_tau > 0.0 && fixmatch_tau < 1.0))
    throw ConfigError("config: fixmatch_tau outside (0,1)");
  if (softmatch_n <= 0.0) throw ConfigError("config: softmatch_n must be > 0");
  if (optimizer.base_lr <= 0.0) throw ConfigError("config: base_lr must be > 0");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0)
    throw ConfigError("config: optimizer.momentum outside [0,1)");
  for (int h : model.hidden_dims)
    if (h < 1) throw ConfigError("config: hidden_dims entries must be >= 1");
  if (dataset.kind != "gaussian" && dataset.kind != "long_tailed" &&
      dataset.kind != "csv")
    throw ConfigError("config: unknown dataset.kind '" + dataset.kind + "'");
  if (dataset.kind == "csv" && dataset.path.empty())
    throw ConfigError("config: dataset.path required for csv datasets");
  try {
    dataset.augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (seeds.empty()) throw ConfigError("config: at least one seed required");
  if (eval_every < 1) throw ConfigError("config: eval_every must be >= 1");
  if (log_every < 1) throw ConfigError("config: log_every must be >= 1");
  if (checkpoint_every < 0)
    throw ConfigError("config: checkpoint_every must be >= 0");
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig cfg;
  check_keys(j, "",
             {"strategy", "lambda_u", "lambda_b", "total_iterations",
              "batch_labeled", "batch_unlabeled", "ema_momentum",
              "model_ema_decay", "candidate_cap", "clamp_range", "fixmatch_tau",
              "softmatch_n", "optimizer", "model", "dataset", "seeds",
              "eval_every", "log_every", "checkpoint_every"});
  read_field(j, "strategy", cfg.strategy, "");
  read_field(j, "lambda_u", cfg.lambda_u, "");
  read_field(j, "lambda_b", cfg.lambda_b, "");
  read_field(j, "total_iterations", cfg.total_iterations, "");
  read_field(j, "batch_labeled", cfg.batch_labeled, "");
  read_field(j, "batch_unlabeled", cfg.batch_unlabeled, "");
  read_field(j, "ema_momentum", cfg.ema_momentum, "");
  read_field(j, "model_ema_decay", cfg.model_ema_decay, "");
  read_field(j, "candidate_cap", cfg.candidate_cap, "");
  read_field(j, "fixmatch_tau", cfg.fixmatch_tau, "");
  read_field(j, "softmatch_n", cfg.softmatch_n, "");
  read_field(j, "seeds", cfg.seeds, "");
  read_field(j, "eval_every", cfg.eval_every, "");
  read_field(j, "log_every", cfg.log_every, "");
  read_field(j, "checkpoint_every", cfg.checkpoint_every, "");

  if (j.contains("clamp_range") && !j.at("clamp_range").is_null()) {
    const json& cr = j.at("clamp_range");
    if (!cr.is_array() || cr.size() != 2 || !cr[0].is_number() ||
        !cr[1].is_number())
      throw ConfigError("config: clamp_range must be null or [lo, hi]");
    cfg.clamp_range = {cr[0].get<double>(), cr[1].get<double>()};
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, "optimizer", {"base_lr", "momentum"});
    read_field(o, "base_lr", cfg.optimizer.base_lr, "optimizer");
    read_field(o, "momentum", cfg.optimizer.momentum, "optimizer");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"hidden_dims"});
    read_field(m, "hidden_dims", cfg.model.hidden_dims, "model");
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"kind", "num_classes", "dim", "per_class_labeled",
                "per_class_unlabeled", "separation", "test_per_class",
                "head_labeled", "head_unlabeled", "gamma", "path", "augment"});
    read_field(d, "kind", cfg.dataset.kind, "dataset");
    read_field(d, "num_classes", cfg.dataset.num_classes, "dataset");
    read_field(d, "dim", cfg.dataset.dim, "dataset");
    read_field(d, "per_class_labeled", cfg.dataset.per_class_labeled, "dataset");
    read_field(d, "per_class_unlabeled", cfg.dataset.per_class_unlabeled,
               "dataset");
    read_field(d, "separation", cfg.dataset.separation, "dataset");
    read_field(d, "test_per_class", cfg.dataset.test_per_class, "dataset");
    read_field(d, "head_labeled", cfg.dataset.head_labeled, "dataset");
    read_field(d, "head_unlabeled", cfg.dataset.head_unlabeled, "dataset");
    read_field(d, "gamma", cfg.dataset.gamma, "dataset");
    read_field(d, "path", cfg.dataset.path, "dataset");
    if (d.contains("augment")) {
      const json& a = d.at("augment");
      check_keys(a, "dataset.augment",
                 {"weak_sigma", "strong_sigma", "dropout_prob"});
      read_field(a, "weak_sigma", cfg.dataset.augment.weak_noise_sigma,
                 "dataset.augment");
      read_field(a, "strong_sigma", cfg.dataset.augment.strong_noise_sigma,
                 "dataset.augment");
      read_field(a, "dropout_prob", cfg.dataset.augment.feature_dropout_prob,
                 "dataset.augment");
    }
  }
  cfg.validate();
  return cfg;
}

json TrainConfig::to_json() const {
  json j;
  j["strategy"] = strategy;
  j["lambda_u"] = lambda_u;
  j["lambda_b"] = lambda_b;
  j["total_iterations"] = total_iterations;
  j["batch_labeled"] = batch_labeled;
  j["batch_unlabeled"] = batch_unlabeled;
  j["ema_momentum"] = ema_momentum;
  j["model_ema_decay"] = model_ema_decay;
  j["candidate_cap"] = candidate_cap;
  j["clamp_range"] =
      clamp_range ? json{clamp_range->first, clamp_range->second} : json();
  j["fixmatch_tau"] = fixmatch_tau;
  j["softmatch_n"] = softmatch_n;
  j["optimizer"] = {{"base_lr", optimizer.base_lr},
                    {"momentum", optimizer.momentum}};
  j["model"] = {{"hidden_dims", model.hidden_dims}};
  json d;
  d["kind"] = dataset.kind;
  d["num_classes"] = dataset.num_classes;
  d["dim"] = dataset.dim;
  d["per_class_labeled"] = dataset.per_class_labeled;
  d["per_class_unlabeled"] = dataset.per_class_unlabeled;
  d["separation"] = dataset.separation;
  d["test_per_class"] = dataset.test_per_class;
  d["head_labeled"] = dataset.head_labeled;
  d["head_unlabeled"] = dataset.head_unlabeled;
  d["gamma"] = dataset.gamma;
  d["path"] = dataset.path;
  d["augment"] = {{"weak_sigma", dataset.augment.weak_noise_sigma},
                  {"strong_sigma", dataset.augment.strong_noise_sigma},
                  {"dropout_prob", dataset.augment.feature_dropout_prob}};
  j["dataset"] = d;
  j["seeds"] = seeds;
  j["eval_every"] = eval_every;
  j["log_every"] = log_every;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

void apply_override(json& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value, got '" + assignment +
                      "'");
  const std::string dotted = assignment.substr(0, eq);
  const std::string raw_value = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw_value);
  } catch (const json::exception&) {
    value = raw_value;  // plain string
  }

  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty())
      throw ConfigError("override has an empty key segment: '" + dotted + "'");
    parts.push_back(part);
  }
  json* node = &config;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i)
    node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

TrainConfig load_config_file(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  for (const std::string& o : overrides) apply_override(j, o);
  return TrainConfig::from_json(j);
}

SslDataset build_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == "gaussian") {
    return make_gaussian_mixture(cfg.num_classes, cfg.per_class_labeled,
                                 cfg.per_class_unlabeled, cfg.dim,
                                 cfg.separation, seed, cfg.test_per_class);
  }
  if (cfg.kind == "long_tailed") {
    LongTailSpec spec;
    spec.head_labeled = cfg.head_labeled;
    spec.head_unlabeled = cfg.head_unlabeled;
    spec.gamma = cfg.gamma;
    spec.num_classes = cfg.num_classes;
    return make_long_tailed(spec, cfg.dim, cfg.separation, seed,
                            cfg.test_per_class);
  }
  if (cfg.kind == "csv") return load_csv(cfg.path);
  throw ConfigError("config: unknown dataset.kind '" + cfg.kind + "'");
}

}  // namespace allmatch
