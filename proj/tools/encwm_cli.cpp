#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "encwm/pipeline.hpp"

namespace {

struct StageArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_stage_options(CLI::App* cmd, StageArgs& a) {
  cmd->add_option("--config,-c", a.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out,-o", a.out, "Output directory (default: config output_dir, $ENCWM_OUT_ROOT/<run_id> or runs/<run_id>)");
  cmd->add_option("--seed", a.seed, "Override the master seed");
  cmd->add_flag("--quiet,-q", a.quiet, "Suppress progress messages");
}

encwm::Pipeline make_pipeline(const StageArgs& a) {
  auto cfg = encwm::load_config(a.config);
  if (a.seed) {
    cfg.seed = *a.seed;
    encwm::resolve_derived(cfg);
  }
  const auto out = encwm::resolve_output_dir(cfg, a.out);
  encwm::LogFn log;
  if (!a.quiet) log = [](const std::string& m) { std::cerr << "[encwm] " << m << "\n"; };
  return encwm::Pipeline(std::move(cfg), out, log);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-agnostic watermarking of contrastive encoders"};
  app.require_subcommand(1);

  StageArgs stage_args;
  std::string stage_name;
  for (const char* name : {"pretrain", "embed", "downstream", "attack", "verify", "all"}) {
    static const std::map<std::string, std::string> help{
        {"pretrain", "Pre-train the clean encoder (clean.ckpt)"},
        {"embed", "Embed the watermark into the clean encoder (wm.ckpt)"},
        {"downstream", "Train downstream heads on both encoders (downstream*.ckpt)"},
        {"attack", "Prune and fine-tune the watermarked downstream model"},
        {"verify", "Black-box ownership verification (verify.json)"},
        {"all", "Run every stage in order, then print the report"}};
    auto* cmd = app.add_subcommand(name, help.at(name));
    add_stage_options(cmd, stage_args);
    cmd->callback([&stage_name, name] { stage_name = name; });
  }

  std::string report_dir, report_config, report_format = "text";
  auto* rep = app.add_subcommand("report", "Render comparison tables from metrics.csv files");
  rep->add_option("--out,-o,dir", report_dir, "Directory searched recursively for metrics.csv");
  rep->add_option("--config,-c", report_config, "Config used to locate the output directory")
      ->check(CLI::ExistingFile);
  rep->add_option("--format,-f", report_format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (rep->parsed()) {
      std::string dir = report_dir;
      if (dir.empty()) {
        if (report_config.empty()) throw encwm::Error("report needs --out or --config");
        dir = encwm::resolve_output_dir(encwm::load_config(report_config), "").string();
      }
      std::cout << encwm::report(dir, report_format);
      return 0;
    }
    auto pipeline = make_pipeline(stage_args);
    pipeline.run(stage_name);
    if (stage_name == "all") std::cout << encwm::report(pipeline.out(), "text");
    else std::cerr << "[encwm] " << stage_name << " done -> " << pipeline.out().string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
