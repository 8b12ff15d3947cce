// rscope: simulate encoder traces, generate perturbations and run the
// representation analyses from the command line.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rscope/errors.hpp"
#include "rscope/pipeline/commands.hpp"
#include "rscope/pipeline/plots.hpp"
#include "rscope/pipeline/run_config.hpp"

namespace {

using rscope::pipeline::RunConfig;

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, topk, workers, classes, images, mask_runs;
  std::optional<double> tau, mask_ratio;
  std::vector<std::string> blur_levels;
  std::vector<double> occlude_fracs;
  std::string out, in, preset, fill;
  bool plots = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--k", f.k, "retained subspace dimension");
  cmd->add_option("--tau", f.tau, "common-feature membership fraction");
  cmd->add_option("--topk", f.topk, "active features per head");
  cmd->add_option("--blur-level", f.blur_levels, "blur preset(s) I..X");
  cmd->add_option("--occlude-frac", f.occlude_fracs, "occlusion fraction(s) 0.0..0.9");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--in", f.in, "input archive directory (switches to archive mode)");
  cmd->add_option("--workers", f.workers, "worker threads");
  cmd->add_option("--classes", f.classes, "simulated classes");
  cmd->add_option("--images", f.images, "simulated images per class");
  cmd->add_option("--preset", f.preset, "encoder preset: desk or paper");
  cmd->add_option("--mask-ratio", f.mask_ratio, "encoder masking ratio");
  cmd->add_option("--mask-runs", f.mask_runs, "mask-invariance runs per class (simulate mode)");
  cmd->add_option("--fill", f.fill, "occlusion fill: zero or mean");
  cmd->add_flag("--plots", f.plots, "render SVG plots (report)");
}

RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : rscope::pipeline::load_config(f.config);
  nlohmann::json overrides = nlohmann::json::object();
  if (f.seed) overrides["seed"] = *f.seed;
  if (f.k) overrides["k"] = *f.k;
  if (f.tau) overrides["tau"] = *f.tau;
  if (f.topk) overrides["topk"] = *f.topk;
  if (!f.blur_levels.empty()) overrides["blur_levels"] = f.blur_levels;
  if (!f.occlude_fracs.empty()) overrides["occlusion_fracs"] = f.occlude_fracs;
  if (!f.out.empty()) overrides["out"] = f.out;
  if (!f.in.empty()) {
    overrides["in"] = f.in;
    overrides["input"] = "archive";
  }
  if (f.workers) overrides["workers"] = *f.workers;
  if (f.classes) overrides["classes"] = *f.classes;
  if (f.images) overrides["images_per_class"] = *f.images;
  if (f.mask_runs) overrides["mask_runs"] = *f.mask_runs;
  if (!f.fill.empty()) overrides["fill"] = f.fill;
  if (f.plots) overrides["plots"] = true;
  nlohmann::json enc = nlohmann::json::object();
  if (!f.preset.empty()) enc["preset"] = f.preset;
  if (f.mask_ratio) enc["masking_ratio"] = *f.mask_ratio;
  if (!enc.empty()) overrides["encoder"] = enc;
  c = rscope::pipeline::config_from_json(overrides, std::move(c));
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rscope: layer-wise representation analysis for transformer encoders"};
  app.require_subcommand(1);
  Flags flags;
  auto* simulate = app.add_subcommand("simulate", "encode synthetic images into trace archives");
  auto* perturb = app.add_subcommand("perturb", "write blurred/occluded images and quality.csv");
  auto* subspace = app.add_subcommand("subspace", "class-subspace principal angles");
  auto* attn = app.add_subcommand("attn", "mean attention distance and rollout scores");
  auto* indicators = app.add_subcommand("indicators", "cosine alignment and head feature retention");
  auto* report = app.add_subcommand("report", "all analyses, run manifest and optional plots");
  for (auto* cmd : {simulate, perturb, subspace, attn, indicators, report}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  namespace pl = rscope::pipeline;
  try {
    const RunConfig cfg = effective_config(flags);
    if (simulate->parsed()) {
      const auto paths = pl::cmd_simulate(cfg);
      std::cout << "wrote " << paths.size() << " trace archives to " << (cfg.out_dir / "traces").string() << "\n";
    } else if (perturb->parsed()) {
      pl::cmd_perturb(cfg);
      std::cout << "wrote " << (cfg.out_dir / "quality.csv").string() << "\n";
    } else {
      std::vector<std::filesystem::path> written;
      if (subspace->parsed()) written = pl::cmd_analyze(cfg, "subspace", {true, false, false, false});
      if (attn->parsed()) written = pl::cmd_analyze(cfg, "attn", {false, true, true, false});
      if (indicators->parsed()) written = pl::cmd_analyze(cfg, "indicators", {false, false, false, true});
      if (report->parsed()) written = pl::cmd_report(cfg);
      for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
    }
  } catch (const rscope::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const rscope::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const rscope::ContractError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
