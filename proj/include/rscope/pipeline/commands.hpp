#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rscope/attention.hpp"
#include "rscope/encoder.hpp"
#include "rscope/pipeline/run_config.hpp"

namespace rscope::pipeline {

inline constexpr const char* kCleanLevel = "clean";

std::string blur_level_label(std::string_view preset);
std::string occlusion_level_label(double fraction);

// Orders level labels as clean, blur I..X, occlusion by fraction, others.
bool level_before(const std::string& a, const std::string& b);

struct TraceEntry {
  std::filesystem::path path;
  std::string relative_path;
  std::string class_id;
  std::string image_id;
  std::string level = kCleanLevel;
  std::size_t mask_index = 0;
  std::string sha256;
};

struct TraceIndex {
  std::filesystem::path root;
  std::vector<TraceEntry> entries;  // sorted by (class, image, level, mask)
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t embed_dim = 0;
  std::optional<attention::PatchGrid> grid;

  std::vector<std::string> classes() const;
  std::vector<std::string> levels() const;
  std::vector<const TraceEntry*> select(const std::string& class_id, const std::string& level) const;
};

// Fail-fast validation pass: parses every archive, checks every layer/head
// record and cross-trace consistency. Throws ValidationError naming the
// archive and record.
TraceIndex index_traces(const RunConfig& config);

encoder::ActivationTrace load_trace(const TraceEntry& entry);

std::string sha256_hex(const std::filesystem::path& file);

// Writes one trace archive per (image, mask seed, perturbation level) under
// <out>/traces and the clean images under <out>/images. Returns the trace
// archive paths in sorted order.
std::vector<std::filesystem::path> cmd_simulate(const RunConfig& config);

// Applies the configured blur/occlusion sweep to images and writes
// <out>/perturbed/... archives plus <out>/quality.csv.
void cmd_perturb(const RunConfig& config);

// Runs the selected analyses over the traces of config.input_dir (or the
// freshly simulated traces in simulate mode) and writes CSV reports and
// <out>/run_manifest.json. Returns the written report paths.
std::vector<std::filesystem::path> cmd_analyze(const RunConfig& config, const std::string& command,
                                               AnalysisSelection selection);

// cmd_analyze with every analysis, then optional plots.
std::vector<std::filesystem::path> cmd_report(const RunConfig& config);

}  // namespace rscope::pipeline
