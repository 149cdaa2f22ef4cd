// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "encwm/checkpoint.hpp"
#include "encwm/contrastive.hpp"
#include "encwm/pipeline.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"

namespace {

using namespace encwm;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Collects failure notes for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat m;
  for (std::size_t r = 0; r < t.rows(); ++r) m.push_back(gradcheck::row(t, r));
  return m;
}

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

// ---------------------------------------------------------------- 1-3

std::string criterion_gradients(Check& c) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t params = 0;
  const std::size_t graphs = 50;
  for (std::uint64_t seed = 0; seed < graphs; ++seed) {
    auto t = gradcheck::random_graph(1000 + seed);
    c.expect(t.param_count() <= 64 && t.weights.size() <= 3, "graph " + std::to_string(seed) + " too large");
    const auto r = gradcheck::check(t);
    worst = std::max(worst, r.max_rel_error);
    params += r.checked;
  }
  const double secs = seconds_since(t0);
  c.expect(worst < 1e-4, "max relative error " + sci(worst));
  c.expect(secs < 10.0, "runtime " + num(secs) + " s");
  return std::to_string(graphs) + " graphs, " + std::to_string(params) + " parameters, max rel error " +
         sci(worst) + ", " + num(secs) + " s";
}

std::string criterion_loss_oracles(Check& c) {
  const auto t0 = Clock::now();
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double tau = rng.uniform(0.1, 1.0);
    c.expect(ntxent_loss(random_tensor(2, 8, rng), tau) == 0.0, "N=1 loss not exactly zero");
    for (std::size_t pairs : {2u, 3u}) {
      const auto f = random_tensor(2 * pairs, 8, rng);
      worst = std::max(worst, std::fabs(ntxent_loss(f, tau) - oracle::ntxent(to_mat(f), tau)));
    }
    MomentumQueue queue(16, 8);
    Tensor negs = random_tensor(16, 8, rng);
    queue.push(negs);
    auto q = random_tensor(1, 8, rng), k = random_tensor(1, 8, rng);
    oracle::Vec qv = oracle::normalized(gradcheck::row(q, 0)), kv = oracle::normalized(gradcheck::row(k, 0));
    std::vector<float> qf(qv.begin(), qv.end()), kf(kv.begin(), kv.end());
    oracle::Vec qr(qf.begin(), qf.end()), kr(kf.begin(), kf.end());
    oracle::Vec logits{oracle::dot(qr, kr) / tau};
    for (const auto& n : to_mat(queue.as_tensor())) logits.push_back(oracle::dot(qr, n) / tau);
    worst = std::max(worst, std::fabs(moco_loss(qf, kf, queue, tau) - oracle::softmax_ce(logits, 0)));
  }
  const double secs = seconds_since(t0);
  c.expect(worst < 1e-6, "max absolute deviation " + sci(worst));
  c.expect(secs < 5.0, "runtime " + num(secs) + " s");
  return "max deviation " + sci(worst) + ", " + num(secs) + " s";
}

std::string criterion_exactness(Check& c) {
  const auto t0 = Clock::now();
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto key = random_tensor(4, 6, rng);
    const auto query = random_tensor(4, 6, rng);
    const auto before = key;
    momentum_update(key, query, 1.0);
    c.expect(key.data == before.data, "m=1 changed the key parameters");
    momentum_update(key, query, 0.0);
    c.expect(key.data == query.data, "m=0 did not copy the query parameters");

    const auto trig = make_trigger(static_cast<TriggerKind>(rng.below(4)), 1 + rng.below(16), 16);
    Image img(16, 16);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    const Image once = apply_trigger(img, trig);
    c.expect(apply_trigger(once, trig) == once, "trigger not idempotent for " + trig.id);
    for (std::size_t i = 0; i < img.size(); ++i)
      if (trig.mask.pixels[i] == 0.0f && once.pixels[i] != img.pixels[i])
        c.expect(false, "pixel outside the mask changed for " + trig.id);
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, "runtime " + num(secs) + " s");
  return "50 random cases, " + num(secs) + " s";
}

// ---------------------------------------------------------------- 4-9

struct Run {
  std::string label;
  fs::path dir;
  std::map<std::string, double> metrics;
  std::map<std::string, double> stage_seconds;
  double total_seconds = 0.0;
};

Run run_pipeline(const std::string& config_path, std::uint64_t seed, const fs::path& dir) {
  auto cfg = load_config(config_path);
  cfg.seed = seed;
  resolve_derived(cfg);
  fs::remove_all(dir);
  Run r;
  r.label = to_string(cfg.pretrain.algorithm) + "/seed " + std::to_string(seed);
  r.dir = dir;
  Pipeline p(cfg, dir);
  const auto t0 = Clock::now();
  for (const auto& stage : stage_order()) {
    const auto s0 = Clock::now();
    p.run(stage);
    r.stage_seconds[stage] = seconds_since(s0);
  }
  r.total_seconds = seconds_since(t0);
  for (const auto& row : read_metrics(dir / files::kMetrics)) r.metrics[row.metric] = row.value;
  return r;
}

double metric(Check& c, const Run& r, const std::string& name) {
  auto it = r.metrics.find(name);
  if (it == r.metrics.end()) {
    c.expect(false, r.label + ": missing metric " + name);
    return NAN;
  }
  return it->second;
}

constexpr double kThreshold = 0.7;

std::string criterion_uniqueness(Check& c, const std::vector<Run>& runs) {
  double min_wm = 1.0, max_clean = 0.0, max_secs = 0.0;
  for (const auto& r : runs) {
    const double wm = metric(c, r, "wacc.watermarked"), cl = metric(c, r, "wacc.clean");
    c.expect(wm >= 0.70, r.label + ": watermarked WACC " + num(wm));
    c.expect(cl <= 0.30, r.label + ": clean WACC " + num(cl));
    c.expect(r.total_seconds < 300.0, r.label + ": runtime " + num(r.total_seconds) + " s");
    min_wm = std::min(min_wm, wm);
    max_clean = std::max(max_clean, cl);
    max_secs = std::max(max_secs, r.total_seconds);
  }
  return "min watermarked WACC " + num(min_wm) + ", max clean WACC " + num(max_clean) +
         ", slowest run " + num(max_secs) + " s";
}

std::string criterion_wrong_trigger(Check& c, const std::vector<Run>& runs) {
  double max_wrong = 0.0;
  std::size_t queries = 0;
  for (const auto& r : runs) {
    c.expect(metric(c, r, "wacc.watermarked") >= 0.70, r.label + ": correct trigger below 0.70");
    for (const auto& [name, v] : r.metrics) {
      if (name.rfind("wacc.wrong_trigger:", 0) != 0) continue;
      ++queries;
      c.expect(v <= 0.30, r.label + ": " + name + " = " + num(v));
      max_wrong = std::max(max_wrong, v);
    }
  }
  c.expect(queries == 3 * runs.size(), "expected three wrong triggers per run");
  return std::to_string(queries) + " wrong-trigger queries, max WACC " + num(max_wrong);
}

std::string criterion_functionality(Check& c, const std::vector<Run>& runs) {
  double worst = 0.0;
  for (const auto& r : runs) {
    const double gap = std::fabs(metric(c, r, "acc.watermarked") - metric(c, r, "acc.clean"));
    c.expect(gap <= 0.05, r.label + ": ACC gap " + num(gap));
    worst = std::max(worst, gap);
  }
  return "max |ACC watermarked - ACC clean| " + num(worst);
}

std::string criterion_pruning(Check& c, const std::vector<Run>& runs) {
  double min_wacc = 1.0, max_drop = 0.0, max_secs = 0.0;
  double worst_acc_gap = 0.0, max_collapsed_wacc = 0.0;
  for (const auto& r : runs) {
    const double base = metric(c, r, "wacc.watermarked");
    for (const char* ratio : {"0.2", "0.4", "0.6"}) {
      const double w = metric(c, r, std::string("wacc.prune_l1@") + ratio);
      c.expect(w > kThreshold, r.label + ": WACC at L1 " + ratio + " = " + num(w));
      c.expect(std::fabs(base - w) <= 0.15, r.label + ": WACC at L1 " + ratio + " moved " + num(base - w));
      min_wacc = std::min(min_wacc, w);
      max_drop = std::max(max_drop, std::fabs(base - w));
    }
    const double a = metric(c, r, "acc.prune_l1@0.95"), w = metric(c, r, "wacc.prune_l1@0.95");
    c.expect(std::fabs(a - 0.25) <= 0.10, r.label + ": ACC at L1 0.95 = " + num(a));
    c.expect(w <= kThreshold, r.label + ": WACC at L1 0.95 = " + num(w));
    worst_acc_gap = std::max(worst_acc_gap, std::fabs(a - 0.25));
    max_collapsed_wacc = std::max(max_collapsed_wacc, w);
    max_secs = std::max(max_secs, r.stage_seconds.at("attack"));
    c.expect(r.stage_seconds.at("attack") < 120.0, r.label + ": attack stage " + num(r.stage_seconds.at("attack")) + " s");
  }
  return "ratios 0.2-0.6: min WACC " + num(min_wacc) + ", max shift " + num(max_drop) +
         "; ratio 0.95: max |ACC - 0.25| " + num(worst_acc_gap) + ", max WACC " + num(max_collapsed_wacc) +
         "; slowest attack stage " + num(max_secs) + " s";
}

std::string criterion_finetuning(Check& c, const std::vector<Run>& runs) {
  double min_rtll = 1.0, min_ftal = 1.0;
  for (const auto& r : runs) {
    const double rt = metric(c, r, "wacc.rtll"), ft = metric(c, r, "wacc.ftal");
    c.expect(rt > kThreshold, r.label + ": RTLL WACC " + num(rt));
    c.expect(ft > kThreshold, r.label + ": FTAL WACC " + num(ft));
    c.expect(metric(c, r, "encoder_unchanged.rtll") == 1.0, r.label + ": RTLL changed the encoder");
    c.expect(r.stage_seconds.at("attack") < 180.0, r.label + ": attack stage too slow");
    min_rtll = std::min(min_rtll, rt);
    min_ftal = std::min(min_ftal, ft);
  }
  return "min WACC after RTLL " + num(min_rtll) + ", after FTAL " + num(min_ftal) + ", RTLL encoder bit-identical";
}

std::string criterion_determinism(Check& c, const Run& first, const std::string& config_path,
                                  std::uint64_t seed, const fs::path& dir) {
  const Run again = run_pipeline(config_path, seed, dir);
  c.expect(read_bytes(first.dir / files::kMetrics) == read_bytes(again.dir / files::kMetrics),
           "metrics.csv differs between identical runs");

  std::size_t checked = 0;
  for (const char* f : {files::kClean, files::kWatermarked}) {
    const auto src = (first.dir / f).string(), dst = (dir / (std::string("copy_") + f)).string();
    checkpoint::Meta meta;
    const auto m = checkpoint::load_encoder(src, &meta);
    checkpoint::save(m, dst, meta);
    c.expect(checkpoint::load_encoder(dst).same_parameters(m), std::string(f) + ": parameters changed");
    c.expect(read_bytes(src) == read_bytes(dst), std::string(f) + ": bytes changed on re-save");
    ++checked;
  }
  for (const char* f : {files::kDownstream, files::kDownstreamClean}) {
    const auto src = (first.dir / f).string(), dst = (dir / (std::string("copy_") + f)).string();
    checkpoint::Meta meta;
    const auto m = checkpoint::load_classifier(src, &meta);
    checkpoint::save(m, dst, meta);
    c.expect(checkpoint::load_classifier(dst).same_parameters(m), std::string(f) + ": parameters changed");
    c.expect(read_bytes(src) == read_bytes(dst), std::string(f) + ": bytes changed on re-save");
    ++checked;
  }
  return "metrics.csv byte-identical on rerun (" + first.label + "), " + std::to_string(checked) +
         " checkpoints round-trip exactly";
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "encwm_acceptance";
  const std::string configs = std::string(ENCWM_SOURCE_DIR) + "/configs/";
  std::vector<Run> runs;
  bool all_ok = true;

  auto report = [&](int id, const std::string& name, const std::function<std::string(Check&)>& body) {
    Check c;
    std::string summary;
    try {
      summary = body(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    all_ok = all_ok && ok;
    std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), summary.c_str());
    for (const auto& f : c.failures) std::printf("    - %s\n", f.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient correctness", criterion_gradients);
  report(2, "loss oracles", criterion_loss_oracles);
  report(3, "momentum and trigger exactness", criterion_exactness);

  std::string pipeline_error;
  try {
    for (const char* cfg : {"desk.json", "desk_moco.json"})
      for (std::uint64_t seed : {0, 1, 2}) {
        const auto dir = root / (std::string(cfg).substr(0, std::string(cfg).size() - 5) + "-" + std::to_string(seed));
        runs.push_back(run_pipeline(configs + cfg, seed, dir));
        std::printf("    ran %s in %s s\n", runs.back().label.c_str(), num(runs.back().total_seconds).c_str());
        std::fflush(stdout);
      }
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto on_runs = [&](auto fn) {
    return [&, fn](Check& c) {
      if (!pipeline_error.empty()) throw Error("pipeline failed: " + pipeline_error);
      return fn(c, runs);
    };
  };
  report(4, "uniqueness", on_runs(criterion_uniqueness));
  report(5, "wrong-trigger guard", on_runs(criterion_wrong_trigger));
  report(6, "functionality preservation", on_runs(criterion_functionality));
  report(7, "pruning robustness", on_runs(criterion_pruning));
  report(8, "fine-tuning robustness", on_runs(criterion_finetuning));
  report(9, "determinism and persistence", [&](Check& c) {
    if (!pipeline_error.empty()) throw Error("pipeline failed: " + pipeline_error);
    return criterion_determinism(c, runs.front(), configs + "desk.json", 0, root / "desk-0-rerun");
  });
  return all_ok ? 0 : 1;
}
