#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rscope/encoder.hpp"
#include "rscope/perturb.hpp"

namespace rscope::pipeline {

enum class InputMode { simulate, archive };

struct AnalysisSelection {
  bool subspace = true;
  bool attention = true;
  bool rollout = true;
  bool indicators = true;
};

struct RunConfig {
  InputMode input = InputMode::simulate;
  std::filesystem::path input_dir;  // traces (or images for `perturb`) in archive mode
  std::filesystem::path out_dir = "rscope_out";
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::string encoder_preset = "desk";
  encoder::EncoderConfig encoder = encoder::EncoderConfig::desk();
  // Encoder weights default to a seed derived from `seed`.
  std::optional<std::uint64_t> weight_seed;

  // Simulate mode.
  std::size_t num_classes = 3;
  std::size_t images_per_class = 2;
  std::size_t mask_seeds = 1;
  std::size_t mask_runs = 0;  // mask-invariance study runs per class (0 = off)

  // Archive mode: class_id → archive paths (relative to input_dir). Empty
  // means scan input_dir for *.rscope files.
  std::map<std::string, std::vector<std::string>> manifest;

  std::vector<std::string> blur_levels;
  std::vector<double> occlusion_fracs;
  perturb::FillRule fill = perturb::FillRule::zero;

  AnalysisSelection analyses;
  std::size_t subspace_rank = 5;
  double tau = 0.6;
  std::size_t top_k = 10;
  bool plots = false;

  encoder::EncoderConfig effective_encoder() const;

  // Throws ConfigError.
  void validate() const;
};

// Unknown keys and ill-typed values raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& config);

// Re-derives `encoder` from `encoder_preset` and applies explicit overrides.
encoder::EncoderConfig preset_config(const std::string& name);

}  // namespace rscope::pipeline
