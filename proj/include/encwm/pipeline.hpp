#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "encwm/checkpoint.hpp"
#include "encwm/config.hpp"
#include "encwm/contrastive.hpp"
#include "encwm/downstream.hpp"
#include "encwm/verify.hpp"
#include "encwm/watermark.hpp"

namespace encwm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- metrics

struct MetricRow {
  std::string run_id;
  std::string stage;
  std::string dataset;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kMetricsHeader = "run_id,stage,dataset,metric,value,seed";

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order{"pretrain", "embed", "downstream", "attack", "verify"};
  return order;
}

inline std::size_t stage_rank(const std::string& stage) {
  const auto& o = stage_order();
  return static_cast<std::size_t>(std::find(o.begin(), o.end(), stage) - o.begin());
}

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::vector<MetricRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read metrics file '" + path.string() + "'");
  std::vector<MetricRow> rows;
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw Error("metrics file '" + path.string() + "' lacks the header '" + kMetricsHeader + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) {
      throw Error("metrics file '" + path.string() + "' line " + std::to_string(lineno) +
                  ": expected 6 fields, got " + std::to_string(f.size()));
    }
    try {
      rows.push_back({f[0], f[1], f[2], f[3], std::stod(f[4]), std::stoull(f[5])});
    } catch (const std::exception&) {
      throw Error("metrics file '" + path.string() + "' line " + std::to_string(lineno) +
                  ": bad number");
    }
  }
  return rows;
}

inline void write_metrics(const fs::path& path, const std::vector<MetricRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write metrics file '" + path.string() + "'");
    out << kMetricsHeader << "\n";
    for (const auto& r : rows) {
      out << r.run_id << ',' << r.stage << ',' << r.dataset << ',' << r.metric << ','
          << format_value(r.value) << ',' << r.seed << "\n";
    }
  }
  fs::rename(tmp, path);
}

// Replaces the rows of (run_id, stage) with `fresh`, keeping all others.
// Rows stay grouped by run and ordered by pipeline stage.
inline void merge_metrics(const fs::path& path, const std::vector<MetricRow>& fresh) {
  if (fresh.empty()) return;
  std::vector<MetricRow> rows = fs::exists(path) ? read_metrics(path) : std::vector<MetricRow>{};
  const auto& run = fresh.front().run_id;
  const auto& stage = fresh.front().stage;
  std::erase_if(rows, [&](const MetricRow& r) { return r.run_id == run && r.stage == stage; });
  rows.insert(rows.end(), fresh.begin(), fresh.end());
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    if (a.run_id != b.run_id) return a.run_id < b.run_id;
    return stage_rank(a.stage) < stage_rank(b.stage);
  });
  write_metrics(path, rows);
}

// ---------------------------------------------------------------- datasets

struct PipelineData {
  std::string pretrain_name;
  std::string downstream_name;
  LabeledDataset pretrain;  // labels unused by pre-training and embedding
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset verify;  // held out from every training stage
};

namespace detail {

inline std::string family_name(const std::vector<std::size_t>& fams) {
  std::string s = "synthetic:";
  for (std::size_t i = 0; i < fams.size(); ++i) s += (i ? "-" : "") + std::to_string(fams[i]);
  return s;
}

inline LabeledDataset slice(const LabeledDataset& ds, std::size_t begin, std::size_t end) {
  LabeledDataset out;
  out.class_count = ds.class_count;
  out.images.assign(ds.images.begin() + long(begin), ds.images.begin() + long(end));
  out.labels.assign(ds.labels.begin() + long(begin), ds.labels.begin() + long(end));
  return out;
}

inline std::string fingerprint(const LabeledDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    feed(ds.images[i].pixels.data(), ds.images[i].pixels.size() * sizeof(float));
    const std::uint64_t l = ds.labels[i];
    feed(&l, sizeof(l));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

// Splits are drawn from independent seeds (synthetic) or disjoint record
// ranges (CIFAR-10: 60% pre-training, 20% train, 10% test, 10% verify).
inline PipelineData build_datasets(const ExperimentConfig& c) {
  PipelineData d;
  const auto& ds = c.dataset;
  if (ds.source == "synthetic") {
    d.pretrain_name = detail::family_name(ds.pretrain_families);
    d.downstream_name = detail::family_name(ds.downstream_families);
    d.pretrain = gen_synthetic_families(ds.pretrain_families, ds.pretrain_per_class, ds.side,
                                        c.stage_seed(10));
    d.train = gen_synthetic_families(ds.downstream_families, ds.downstream_train_per_class, ds.side,
                                     c.stage_seed(11));
    d.test = gen_synthetic_families(ds.downstream_families, ds.downstream_test_per_class, ds.side,
                                    c.stage_seed(12));
    d.verify = gen_synthetic_families(ds.downstream_families, ds.verify_per_class, ds.side,
                                      c.stage_seed(13));
    return d;
  }
  const auto all = cifar10::load_batch(ds.cifar10_path, ds.side, ds.cifar10_records);
  const std::size_t n = all.size();
  const std::size_t a = n * 6 / 10, b = n * 8 / 10, e = n * 9 / 10;
  if (a == 0 || b == a || e == b || n == e) {
    throw Error("CIFAR-10 batch '" + ds.cifar10_path + "' has too few records (" +
                std::to_string(n) + ") to split");
  }
  d.pretrain_name = d.downstream_name = "cifar10";
  d.pretrain = detail::slice(all, 0, a);
  d.train = detail::slice(all, a, b);
  d.test = detail::slice(all, b, e);
  d.verify = detail::slice(all, e, n);
  return d;
}

inline nlohmann::json dataset_sidecar(const ExperimentConfig& c, const PipelineData& d) {
  auto split = [](const std::string& name, const LabeledDataset& s) {
    return nlohmann::json{{"dataset", name},
                          {"size", s.size()},
                          {"class_count", s.class_count},
                          {"fingerprint", detail::fingerprint(s)}};
  };
  return {{"source", c.dataset.source},
          {"side", c.dataset.side},
          {"generator", config_json(c).at("dataset")},
          {"seeds",
           {{"pretrain", c.stage_seed(10)},
            {"train", c.stage_seed(11)},
            {"test", c.stage_seed(12)},
            {"verify", c.stage_seed(13)}}},
          {"splits",
           {{"pretrain", split(d.pretrain_name, d.pretrain)},
            {"train", split(d.downstream_name, d.train)},
            {"test", split(d.downstream_name, d.test)},
            {"verify", split(d.downstream_name, d.verify)}}}};
}

// ---------------------------------------------------------------- stages

namespace files {
inline constexpr const char* kClean = "clean.ckpt";
inline constexpr const char* kWatermarked = "wm.ckpt";
inline constexpr const char* kDownstream = "downstream.ckpt";
inline constexpr const char* kDownstreamClean = "downstream_clean.ckpt";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kVerify = "verify.json";
inline constexpr const char* kDataset = "dataset.json";
inline constexpr const char* kConfig = "config.resolved.json";
}  // namespace files

using LogFn = std::function<void(const std::string&)>;

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, fs::path out, LogFn log = {})
      : cfg_(std::move(cfg)), out_(std::move(out)), log_(std::move(log)) {
    resolve_derived(cfg_);
    validate_config(cfg_);
    hash_ = config_hash(cfg_);
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  const fs::path& out() const { return out_; }

  void run(const std::string& stage) {
    if (stage == "pretrain") return pretrain();
    if (stage == "embed") return embed();
    if (stage == "downstream") return downstream();
    if (stage == "attack") return attack();
    if (stage == "verify") return verify();
    if (stage == "all") return all();
    throw Error("unknown stage '" + stage + "'");
  }

  void all() {
    pretrain();
    embed();
    downstream();
    attack();
    verify();
  }

  void pretrain() {
    prepare();
    const auto data = datasets();
    log("pretrain: " + to_string(cfg_.pretrain.algorithm) + " on " +
        std::to_string(data.pretrain.size()) + " images");
    auto res = encwm::pretrain(data.pretrain.images, cfg_.pretrain, [this](std::size_t e, double l) {
      log("pretrain: epoch " + std::to_string(e) + " loss " + format_value(l));
    });
    checkpoint::save(res.model, path(files::kClean),
                     meta("pretrain", {{"algorithm", to_string(cfg_.pretrain.algorithm)}}));
    merge({row("pretrain", data.pretrain_name, "loss.first_epoch", res.epoch_losses.front()),
           row("pretrain", data.pretrain_name, "loss.last_epoch", res.epoch_losses.back())});
  }

  void embed() {
    prepare();
    const auto data = datasets();
    auto clean = load_encoder(files::kClean);
    WatermarkedEncoder wm;
    try {
      wm = embed_watermark(clean, data.pretrain.images, cfg_.watermark,
                           [this](std::size_t e, const WatermarkEpoch& w) {
                             log("embed: epoch " + std::to_string(e) + " L_u " +
                                 format_value(w.uniqueness) + " L_p " + format_value(w.preserving));
                           });
    } catch (const DivergenceError& e) {
      throw Error(std::string("embed aborted: ") + e.what() + " (last finite epoch " +
                  std::to_string(e.last_finite_epoch()) + ")");
    }
    wm.source_id = source_id(files::kClean);
    wm.config_hash = hash_;
    checkpoint::save(wm.model, path(files::kWatermarked),
                     meta("embed", {{"source", wm.source_id}, {"trigger", wm.trigger_id}}));
    std::vector<MetricRow> rows;
    if (!wm.history.empty()) {
      rows.push_back(row("embed", data.pretrain_name, "objective.first_epoch", wm.history.front().objective));
      rows.push_back(row("embed", data.pretrain_name, "objective.last_epoch", wm.history.back().objective));
    }
    rows.push_back(row("embed", data.pretrain_name, "loss_uniqueness.final", wm.final_uniqueness));
    rows.push_back(row("embed", data.pretrain_name, "loss_preserving.final", wm.final_preserving));
    merge(rows);
  }

  void downstream() {
    prepare();
    const auto data = datasets();
    HeadTrainConfig hc{cfg_.downstream.epochs, cfg_.downstream.learning_rate,
                       cfg_.downstream.batch_size, cfg_.stage_seed(20)};
    auto clean = load_encoder(files::kClean);
    auto wm = load_encoder(files::kWatermarked);
    log("downstream: training heads on " + std::to_string(data.train.size()) + " labeled images");
    Classifier clf_clean = train_head(clean, data.train, hc);
    Classifier clf_wm = train_head(wm, data.train, hc);
    clf_clean.provenance = "clean";
    clf_wm.provenance = "watermarked";
    checkpoint::save(clf_clean, path(files::kDownstreamClean),
                     meta("downstream", {{"source", source_id(files::kClean)}}));
    checkpoint::save(clf_wm, path(files::kDownstream),
                     meta("downstream", {{"source", source_id(files::kWatermarked)}}));
    merge({row("downstream", data.downstream_name, "acc.clean", acc(clf_clean, data.test)),
           row("downstream", data.downstream_name, "acc.watermarked", acc(clf_wm, data.test))});
  }

  void attack() {
    prepare();
    const auto data = datasets();
    const auto target = load_classifier(files::kDownstream);
    const auto& trig = cfg_.watermark.trigger;
    std::vector<MetricRow> rows;
    auto record = [&](const std::string& variant, const Classifier& m) {
      rows.push_back(row("attack", data.downstream_name, "acc." + variant, acc(m, data.test)));
      rows.push_back(row("attack", data.downstream_name, "wacc." + variant, wacc(m, data.verify.images, trig)));
    };
    for (auto method : cfg_.attack.prune_methods) {
      for (double ratio : cfg_.attack.prune_ratios) {
        log("attack: prune " + to_string(method) + " ratio " + ratio_str(ratio));
        record("prune_" + to_string(method) + "@" + ratio_str(ratio),
               prune(target, ratio, method, cfg_.stage_seed(30)));
      }
    }
    for (auto kind : cfg_.attack.finetune) {
      AttackConfig ac;
      ac.kind = kind;
      ac.batch_size = cfg_.downstream.batch_size;
      if (kind == AttackKind::Ftal) {
        ac.epochs = cfg_.attack.ftal_epochs;
        ac.learning_rate = cfg_.ftal_learning_rate();
        ac.seed = cfg_.stage_seed(31);
      } else {
        ac.epochs = cfg_.rtll_epochs();
        ac.learning_rate = cfg_.rtll_learning_rate();
        ac.seed = cfg_.stage_seed(32);
      }
      log("attack: " + to_string(kind));
      const Classifier attacked = finetune(target, ac, data.train);
      record(to_string(kind), attacked);
      rows.push_back(row("attack", data.downstream_name, "encoder_unchanged." + to_string(kind),
                         attacked.encoder.same_parameters(target.encoder) ? 1.0 : 0.0));
    }
    merge(rows);
  }

  void verify() {
    prepare();
    const auto data = datasets();
    const auto clf_clean = load_classifier(files::kDownstreamClean);
    const auto clf_wm = load_classifier(files::kDownstream);
    const double t = cfg_.verify.threshold;
    const auto& trig = cfg_.watermark.trigger;
    const auto* labeled = &data.test;
    auto r_clean = verify_ownership(clf_clean, data.verify.images, trig, t, files::kDownstreamClean);
    auto r_wm = verify_ownership(clf_wm, data.verify.images, trig, t, files::kDownstream);
    r_clean.acc = acc(clf_clean, *labeled);
    r_wm.acc = acc(clf_wm, *labeled);
    const auto& name = data.downstream_name;
    std::vector<MetricRow> rows{
        row("verify", name, "wacc.clean", r_clean.wacc),
        row("verify", name, "wacc.watermarked", r_wm.wacc),
        row("verify", name, "plagiarized.clean", r_clean.decision == Decision::Plagiarized),
        row("verify", name, "plagiarized.watermarked", r_wm.decision == Decision::Plagiarized)};
    nlohmann::json wrong = nlohmann::json::array();
    for (const auto& tc : cfg_.verify.wrong_triggers) {
      const auto wt = make_trigger(tc.kind, tc.size, cfg_.dataset.side);
      auto r = verify_ownership(clf_wm, data.verify.images, wt, t, files::kDownstream);
      rows.push_back(row("verify", name, "wacc.wrong_trigger:" + wt.id, r.wacc));
      wrong.push_back(r.to_json());
    }
    nlohmann::json doc{{"run_id", cfg_.run_id},
                       {"seed", cfg_.seed},
                       {"config_hash", hash_},
                       {"dataset", name},
                       {"trigger", trig.id},
                       {"threshold", t},
                       {"clean", r_clean.to_json()},
                       {"watermarked", r_wm.to_json()},
                       {"wrong_triggers", wrong}};
    write_text(path(files::kVerify), doc.dump(2) + "\n");
    log("verify: watermarked WACC " + format_value(r_wm.wacc) + " -> " + to_string(r_wm.decision) +
        ", clean WACC " + format_value(r_clean.wacc) + " -> " + to_string(r_clean.decision));
    merge(rows);
  }

 private:
  static std::string ratio_str(double r) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", r);
    return buf;
  }

  fs::path path(const char* name) const { return out_ / name; }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  static void write_text(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error("cannot write '" + p.string() + "'");
      out << text;
    }
    fs::rename(tmp, p);
  }

  void prepare() const {
    fs::create_directories(out_);
    write_text(path(files::kConfig), config_json(cfg_).dump(2) + "\n");
  }

  PipelineData datasets() const {
    auto d = build_datasets(cfg_);
    write_text(path(files::kDataset), dataset_sidecar(cfg_, d).dump(2) + "\n");
    return d;
  }

  checkpoint::Meta meta(const std::string& stage, nlohmann::json extra) const {
    checkpoint::Meta m;
    m.config_hash = hash_;
    m.provenance = std::move(extra);
    m.provenance["stage"] = stage;
    m.provenance["run_id"] = cfg_.run_id;
    m.provenance["seed"] = cfg_.seed;
    return m;
  }

  std::string source_id(const char* name) const { return std::string(name) + "@" + hash_; }

  // A checkpoint resolves only if it exists and was produced by this config.
  void require(const char* name, const checkpoint::Meta& m) const {
    if (m.config_hash != hash_) {
      throw CheckpointError("checkpoint '" + path(name).string() + "' was produced by config " +
                            m.config_hash + ", current config is " + hash_ +
                            "; rerun the producing stage");
    }
  }

  void require_exists(const char* name) const {
    if (!fs::exists(path(name))) {
      throw CheckpointError("missing checkpoint '" + path(name).string() +
                            "'; run the producing stage first");
    }
  }

  EncoderModel load_encoder(const char* name) const {
    require_exists(name);
    checkpoint::Meta m;
    auto model = checkpoint::load_encoder(path(name).string(), &m);
    require(name, m);
    return model;
  }

  Classifier load_classifier(const char* name) const {
    require_exists(name);
    checkpoint::Meta m;
    auto clf = checkpoint::load_classifier(path(name).string(), &m);
    require(name, m);
    return clf;
  }

  MetricRow row(const std::string& stage, const std::string& dataset, const std::string& metric,
                double value) const {
    return {cfg_.run_id, stage, dataset, metric, value, cfg_.seed};
  }

  void merge(const std::vector<MetricRow>& rows) const { merge_metrics(path(files::kMetrics), rows); }

  ExperimentConfig cfg_;
  fs::path out_;
  LogFn log_;
  std::string hash_;
};

// ---------------------------------------------------------------- report

// All metrics.csv files under `dir` (including `dir` itself), sorted by path.
inline std::vector<MetricRow> collect_metrics(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("metrics directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == files::kMetrics) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MetricRow> rows;
  for (const auto& f : files) {
    auto part = read_metrics(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw Error("no metrics found under '" + dir.string() + "'");
  return rows;
}

struct ReportTable {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
  return buf;
}

struct RunKey {
  std::string run_id, dataset;
  std::uint64_t seed;
  auto operator<=>(const RunKey&) const = default;
};

}  // namespace detail

// One comparison table per result kind with a row per run and attack variant.
inline std::vector<ReportTable> build_report(const std::vector<MetricRow>& rows) {
  using detail::pct;
  std::map<detail::RunKey, std::map<std::string, double>> by_run;
  std::map<detail::RunKey, std::vector<std::string>> order;
  for (const auto& r : rows) {
    if (r.stage == "pretrain" || r.stage == "embed") continue;
    detail::RunKey k{r.run_id, r.dataset, r.seed};
    if (!by_run[k].count(r.metric)) order[k].push_back(r.metric);
    by_run[k][r.metric] = r.value;
  }
  auto get = [](const std::map<std::string, double>& m, const std::string& key) -> std::optional<double> {
    auto it = m.find(key);
    if (it == m.end()) return std::nullopt;
    return it->second;
  };
  ReportTable uniq{"WACC (%) with the correct trigger",
                   {"run_id", "dataset", "seed", "Clean model", "Watermarked model"}, {}};
  ReportTable wrong{"WACC (%) of the watermarked model",
                    {"run_id", "dataset", "seed", "Wrong trigger", "WACC wrong", "WACC correct"}, {}};
  ReportTable func{"ACC (%) on clean samples",
                   {"run_id", "dataset", "seed", "Clean", "Watermarked"}, {}};
  ReportTable pruning{"Robustness to pruning",
                      {"run_id", "dataset", "seed", "Method", "Pruning ratio", "ACC (%)", "WACC (%)"}, {}};
  ReportTable tuning{"Robustness to fine-tuning",
                     {"run_id", "dataset", "seed", "Attack", "ACC (%)", "WACC (%)"}, {}};
  for (const auto& [k, m] : by_run) {
    const std::vector<std::string> id{k.run_id, k.dataset, std::to_string(k.seed)};
    auto with = [&](std::vector<std::string> extra) {
      auto r = id;
      r.insert(r.end(), extra.begin(), extra.end());
      return r;
    };
    if (m.count("wacc.clean") || m.count("wacc.watermarked"))
      uniq.rows.push_back(with({pct(get(m, "wacc.clean")), pct(get(m, "wacc.watermarked"))}));
    if (m.count("acc.clean") || m.count("acc.watermarked"))
      func.rows.push_back(with({pct(get(m, "acc.clean")), pct(get(m, "acc.watermarked"))}));
    for (const auto& metric : order.at(k)) {
      static const std::string wt = "wacc.wrong_trigger:";
      if (metric.rfind(wt, 0) == 0) {
        wrong.rows.push_back(with({metric.substr(wt.size()), pct(get(m, metric)),
                                   pct(get(m, "wacc.watermarked"))}));
        continue;
      }
      static const std::string pr = "acc.prune_";
      if (metric.rfind(pr, 0) == 0) {
        const std::string variant = metric.substr(4);  // prune_<method>@<ratio>
        const auto at = variant.find('@');
        pruning.rows.push_back(with({variant.substr(6, at - 6), variant.substr(at + 1),
                                     pct(get(m, metric)), pct(get(m, "wacc." + variant))}));
        continue;
      }
      if (metric == "acc.ftal" || metric == "acc.rtll") {
        const std::string kind = metric.substr(4);
        std::string label = kind == "ftal" ? "FTAL" : "RTLL";
        tuning.rows.push_back(with({label, pct(get(m, metric)), pct(get(m, "wacc." + kind))}));
      }
    }
  }
  std::vector<ReportTable> out;
  for (auto* t : {&uniq, &wrong, &func, &pruning, &tuning})
    if (!t->rows.empty()) out.push_back(std::move(*t));
  if (out.empty()) throw Error("no metrics rows to report (run downstream, attack or verify first)");
  return out;
}

inline std::string render_report(const std::vector<ReportTable>& tables, const std::string& format) {
  std::ostringstream os;
  if (format == "csv") {
    for (const auto& t : tables) {
      os << "# " << t.title << "\n";
      for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
      os << "\n";
      for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
        os << "\n";
      }
    }
    return os.str();
  }
  if (format != "text") throw Error("unknown report format '" + format + "' (expected text or csv)");
  for (std::size_t ti = 0; ti < tables.size(); ++ti) {
    const auto& t = tables[ti];
    std::vector<std::size_t> w(t.header.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = t.header[i].size();
    for (const auto& r : t.rows)
      for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        os << (i ? " | " : "") << cells[i] << std::string(w[i] - cells[i].size(), ' ');
      }
      os << "\n";
    };
    if (ti) os << "\n";
    os << t.title << "\n";
    line(t.header);
    std::size_t total = 0;
    for (auto x : w) total += x;
    os << std::string(total + 3 * (w.size() - 1), '-') << "\n";
    for (const auto& r : t.rows) line(r);
  }
  return os.str();
}

inline std::string report(const fs::path& dir, const std::string& format = "text") {
  return render_report(build_report(collect_metrics(dir)), format);
}

// --out flag, else config output_dir, else $ENCWM_OUT_ROOT/<run_id>, else
// runs/<run_id>.
inline fs::path resolve_output_dir(const ExperimentConfig& c, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* root = std::getenv("ENCWM_OUT_ROOT"); root && *root) return fs::path(root) / c.run_id;
  return fs::path("runs") / c.run_id;
}

}  // namespace encwm
