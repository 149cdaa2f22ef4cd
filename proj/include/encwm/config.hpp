#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "encwm/contrastive.hpp"
#include "encwm/datasets.hpp"
#include "encwm/downstream.hpp"
#include "encwm/verify.hpp"
#include "encwm/watermark.hpp"

namespace encwm {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct TriggerConfig {
  TriggerKind kind = TriggerKind::Checkerboard;
  std::size_t size = 4;
};

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::size_t side = 16;
  std::vector<std::size_t> pretrain_families{0, 1, 2, 3};
  std::size_t pretrain_per_class = 200;
  std::vector<std::size_t> downstream_families{0, 1, 2, 3};
  std::size_t downstream_train_per_class = 100;
  std::size_t downstream_test_per_class = 50;
  std::size_t verify_per_class = 50;
  std::string cifar10_path;        // one binary batch file
  std::size_t cifar10_records = 0;  // 0 = all
};

struct DownstreamStageConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
};

struct AttackStageConfig {
  std::vector<double> prune_ratios{0.2, 0.4, 0.6, 0.8, 0.9, 0.95};
  std::vector<PruneMethod> prune_methods{PruneMethod::L1, PruneMethod::Random};
  std::vector<AttackKind> finetune{AttackKind::Rtll, AttackKind::Ftal};
  std::size_t ftal_epochs = 10;
  std::optional<double> ftal_learning_rate;  // default: head learning rate / 10
  std::optional<std::size_t> rtll_epochs;    // default: head epochs
  std::optional<double> rtll_learning_rate;  // default: head learning rate
};

struct VerifyStageConfig {
  double threshold = kDefaultThreshold;
  std::vector<TriggerConfig> wrong_triggers{{TriggerKind::WhiteSquare, 4},
                                            {TriggerKind::GreenSquare, 4},
                                            {TriggerKind::Cross, 4}};
};

struct ExperimentConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::string output_dir;
  DatasetConfig dataset;
  PretrainConfig pretrain;
  WatermarkConfig watermark;  // trigger field is filled from `trigger`
  TriggerConfig trigger;
  DownstreamStageConfig downstream;
  AttackStageConfig attack;
  VerifyStageConfig verify;

  double ftal_learning_rate() const {
    return attack.ftal_learning_rate.value_or(downstream.learning_rate / 10.0);
  }
  std::size_t rtll_epochs() const { return attack.rtll_epochs.value_or(downstream.epochs); }
  double rtll_learning_rate() const {
    return attack.rtll_learning_rate.value_or(downstream.learning_rate);
  }

  // Per-stage seeds derived from the master seed.
  std::uint64_t stage_seed(std::uint64_t salt) const { return Rng::mix(seed * 0x100000001b3ULL + salt); }
};

namespace detail {

// Reads a JSON object while recording which keys were consumed, so unknown
// keys can be reported with their full path.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(child(key) + ": wrong type " + std::string(j_.at(key).type_name()));
    }
  }

  template <typename T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const nlohmann::json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()) + ": unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void get_enum(ObjectReader& r, const std::string& key, Enum& out, Parse parse) {
  std::string s;
  bool present = r.sub(key) != nullptr;
  if (!present) return;
  r.get(key, s);
  try {
    out = parse(s);
  } catch (const Error& e) {
    throw ConfigError(r.child(key) + ": " + e.what());
  }
}

inline TriggerConfig parse_trigger(const nlohmann::json& j, const std::string& path) {
  TriggerConfig t;
  ObjectReader r(j, path);
  get_enum(r, "kind", t.kind, trigger_kind_from_string);
  r.get("size", t.size);
  r.finish();
  return t;
}

inline nlohmann::json trigger_json(const TriggerConfig& t) {
  return {{"kind", to_string(t.kind)}, {"size", t.size}};
}

inline void parse_augment(const nlohmann::json& j, const std::string& path, AugmentConfig& a) {
  ObjectReader r(j, path);
  r.get("crop_min", a.crop_min);
  r.get("crop_max", a.crop_max);
  r.get("flip_prob", a.flip_prob);
  r.get("jitter", a.jitter);
  r.get("noise_sigma", a.noise_sigma);
  r.finish();
}

}  // namespace detail

// Fills the fields computed from other fields.
// Must be called again after changing any field it derives from.
inline void resolve_derived(ExperimentConfig& c) {
  c.pretrain.arch.input_dim = c.dataset.side * c.dataset.side * 3;
  c.pretrain.seed = c.stage_seed(1);
  c.pretrain.augment.seed = c.stage_seed(2);
  c.watermark.seed = c.stage_seed(3);
  if (c.trigger.size >= 1 && c.trigger.size <= c.dataset.side)
    c.watermark.trigger = make_trigger(c.trigger.kind, c.trigger.size, c.dataset.side);
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader root(j, "");
  root.get("run_id", c.run_id);
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  if (auto* d = root.sub("dataset")) {
    ObjectReader r(*d, "dataset");
    r.get("source", c.dataset.source);
    r.get("side", c.dataset.side);
    r.get("pretrain_families", c.dataset.pretrain_families);
    r.get("pretrain_per_class", c.dataset.pretrain_per_class);
    r.get("downstream_families", c.dataset.downstream_families);
    r.get("downstream_train_per_class", c.dataset.downstream_train_per_class);
    r.get("downstream_test_per_class", c.dataset.downstream_test_per_class);
    r.get("verify_per_class", c.dataset.verify_per_class);
    r.get("cifar10_path", c.dataset.cifar10_path);
    r.get("cifar10_records", c.dataset.cifar10_records);
    r.finish();
  }
  if (auto* p = root.sub("pretrain")) {
    ObjectReader r(*p, "pretrain");
    detail::get_enum(r, "algorithm", c.pretrain.algorithm, contrastive_algorithm_from_string);
    r.get("batch_size", c.pretrain.batch_size);
    r.get("epochs", c.pretrain.epochs);
    r.get("temperature", c.pretrain.temperature);
    r.get("momentum", c.pretrain.momentum);
    r.get("queue_capacity", c.pretrain.queue_capacity);
    r.get("learning_rate", c.pretrain.learning_rate);
    detail::get_enum(r, "optimizer", c.pretrain.optimizer, optimizer_kind_from_string);
    r.get("hidden", c.pretrain.arch.hidden);
    r.get("feature_dim", c.pretrain.arch.feature_dim);
    r.get("projection_dim", c.pretrain.arch.projection_dim);
    if (auto* a = r.sub("augment")) detail::parse_augment(*a, "pretrain.augment", c.pretrain.augment);
    r.finish();
  }
  if (auto* w = root.sub("watermark")) {
    ObjectReader r(*w, "watermark");
    r.get("eta", c.watermark.eta);
    r.get("epochs", c.watermark.epochs);
    r.get("batch_size", c.watermark.batch_size);
    r.get("learning_rate", c.watermark.learning_rate);
    r.get("dropout", c.watermark.dropout);
    detail::get_enum(r, "optimizer", c.watermark.optimizer, optimizer_kind_from_string);
    if (auto* t = r.sub("trigger")) c.trigger = detail::parse_trigger(*t, "watermark.trigger");
    r.finish();
  }
  if (auto* d = root.sub("downstream")) {
    ObjectReader r(*d, "downstream");
    r.get("epochs", c.downstream.epochs);
    r.get("learning_rate", c.downstream.learning_rate);
    r.get("batch_size", c.downstream.batch_size);
    r.finish();
  }
  if (auto* a = root.sub("attack")) {
    ObjectReader r(*a, "attack");
    r.get("prune_ratios", c.attack.prune_ratios);
    if (auto* m = r.sub("prune_methods")) {
      c.attack.prune_methods.clear();
      std::vector<std::string> names;
      r.get("prune_methods", names);
      for (const auto& n : names) {
        try {
          c.attack.prune_methods.push_back(prune_method_from_string(n));
        } catch (const Error& e) {
          throw ConfigError("attack.prune_methods: " + std::string(e.what()));
        }
      }
      (void)m;
    }
    if (r.sub("finetune")) {
      c.attack.finetune.clear();
      std::vector<std::string> names;
      r.get("finetune", names);
      for (const auto& n : names) {
        AttackKind k;
        try {
          k = attack_kind_from_string(n);
        } catch (const Error& e) {
          throw ConfigError("attack.finetune: " + std::string(e.what()));
        }
        if (k != AttackKind::Ftal && k != AttackKind::Rtll)
          throw ConfigError("attack.finetune: only ftal and rtll are fine-tuning attacks");
        c.attack.finetune.push_back(k);
      }
    }
    r.get("ftal_epochs", c.attack.ftal_epochs);
    r.get_optional("ftal_learning_rate", c.attack.ftal_learning_rate);
    r.get_optional("rtll_epochs", c.attack.rtll_epochs);
    r.get_optional("rtll_learning_rate", c.attack.rtll_learning_rate);
    r.finish();
  }
  if (auto* v = root.sub("verify")) {
    ObjectReader r(*v, "verify");
    r.get("threshold", c.verify.threshold);
    if (auto* wt = r.sub("wrong_triggers")) {
      if (!wt->is_array()) throw ConfigError("verify.wrong_triggers: expected an array");
      c.verify.wrong_triggers.clear();
      for (std::size_t i = 0; i < wt->size(); ++i)
        c.verify.wrong_triggers.push_back(
            detail::parse_trigger((*wt)[i], "verify.wrong_triggers[" + std::to_string(i) + "]"));
    }
    r.finish();
  }
  root.finish();
  resolve_derived(c);
  return c;
}

// Field-level validation; messages carry the offending path.
inline void validate_config(const ExperimentConfig& c) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(!c.run_id.empty(), "run_id: must not be empty");
  check(c.run_id.find_first_of(",\n\r\"") == std::string::npos,
        "run_id: must not contain commas, quotes or line breaks");
  check(c.dataset.source == "synthetic" || c.dataset.source == "cifar10",
        "dataset.source: expected synthetic or cifar10");
  check(c.dataset.side >= 8, "dataset.side: must be at least 8");
  if (c.dataset.source == "synthetic") {
    check(c.dataset.pretrain_families.size() >= 2, "dataset.pretrain_families: need at least 2");
    check(c.dataset.downstream_families.size() >= 2, "dataset.downstream_families: need at least 2");
    check(c.dataset.pretrain_per_class > 0, "dataset.pretrain_per_class: must be positive");
    check(c.dataset.downstream_train_per_class > 0, "dataset.downstream_train_per_class: must be positive");
    check(c.dataset.downstream_test_per_class > 0, "dataset.downstream_test_per_class: must be positive");
    check(c.dataset.verify_per_class > 0, "dataset.verify_per_class: must be positive");
  } else {
    check(!c.dataset.cifar10_path.empty(), "dataset.cifar10_path: required for cifar10");
    check(32 % c.dataset.side == 0, "dataset.side: must divide 32 for cifar10");
  }
  try {
    c.pretrain.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("pretrain: ") + e.what());
  }
  check(c.trigger.size >= 1 && c.trigger.size <= c.dataset.side,
        "watermark.trigger.size: must lie in [1, dataset.side]");
  try {
    c.watermark.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("watermark: ") + e.what());
  }
  check(c.downstream.learning_rate > 0.0, "downstream.learning_rate: must be positive");
  check(c.downstream.batch_size > 0, "downstream.batch_size: must be positive");
  for (double r : c.attack.prune_ratios)
    check(r >= 0.0 && r <= 1.0, "attack.prune_ratios: ratios must lie in [0, 1]");
  check(c.ftal_learning_rate() >= 0.0, "attack.ftal_learning_rate: must be non-negative");
  check(c.verify.threshold > 0.0 && c.verify.threshold < 1.0, "verify.threshold: must lie in (0, 1)");
  for (const auto& t : c.verify.wrong_triggers)
    check(t.size >= 1 && t.size <= c.dataset.side, "verify.wrong_triggers: size out of range");
}

// Fully resolved configuration (all defaults filled in).
inline nlohmann::json config_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;
  j["dataset"] = {{"source", c.dataset.source},
                  {"side", c.dataset.side},
                  {"pretrain_families", c.dataset.pretrain_families},
                  {"pretrain_per_class", c.dataset.pretrain_per_class},
                  {"downstream_families", c.dataset.downstream_families},
                  {"downstream_train_per_class", c.dataset.downstream_train_per_class},
                  {"downstream_test_per_class", c.dataset.downstream_test_per_class},
                  {"verify_per_class", c.dataset.verify_per_class},
                  {"cifar10_path", c.dataset.cifar10_path},
                  {"cifar10_records", c.dataset.cifar10_records}};
  const auto& p = c.pretrain;
  j["pretrain"] = {{"algorithm", to_string(p.algorithm)},
                   {"batch_size", p.batch_size},
                   {"epochs", p.epochs},
                   {"temperature", p.temperature},
                   {"momentum", p.momentum},
                   {"queue_capacity", p.queue_capacity},
                   {"learning_rate", p.learning_rate},
                   {"optimizer", to_string(p.optimizer)},
                   {"hidden", p.arch.hidden},
                   {"feature_dim", p.arch.feature_dim},
                   {"projection_dim", p.arch.projection_dim},
                   {"augment",
                    {{"crop_min", p.augment.crop_min},
                     {"crop_max", p.augment.crop_max},
                     {"flip_prob", p.augment.flip_prob},
                     {"jitter", p.augment.jitter},
                     {"noise_sigma", p.augment.noise_sigma}}}};
  const auto& w = c.watermark;
  j["watermark"] = {{"eta", w.eta},
                    {"epochs", w.epochs},
                    {"batch_size", w.batch_size},
                    {"learning_rate", w.learning_rate},
                    {"dropout", w.dropout},
                    {"optimizer", to_string(w.optimizer)},
                    {"trigger", detail::trigger_json(c.trigger)}};
  j["downstream"] = {{"epochs", c.downstream.epochs},
                     {"learning_rate", c.downstream.learning_rate},
                     {"batch_size", c.downstream.batch_size}};
  std::vector<std::string> methods, tunes;
  for (auto m : c.attack.prune_methods) methods.push_back(to_string(m));
  for (auto k : c.attack.finetune) tunes.push_back(to_string(k));
  j["attack"] = {{"prune_ratios", c.attack.prune_ratios},
                 {"prune_methods", methods},
                 {"finetune", tunes},
                 {"ftal_epochs", c.attack.ftal_epochs},
                 {"ftal_learning_rate", c.ftal_learning_rate()},
                 {"rtll_epochs", c.rtll_epochs()},
                 {"rtll_learning_rate", c.rtll_learning_rate()}};
  nlohmann::json wrong = nlohmann::json::array();
  for (const auto& t : c.verify.wrong_triggers) wrong.push_back(detail::trigger_json(t));
  j["verify"] = {{"threshold", c.verify.threshold}, {"wrong_triggers", wrong}};
  return j;
}

// FNV-1a 64 over the canonical (sorted-key) dump of the resolved config.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string text = config_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  auto c = parse_config(j);
  validate_config(c);
  return c;
}

}  // namespace encwm
