#include "rscope/pipeline/run_config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "rscope/errors.hpp"
#include "rscope/rng.hpp"

namespace rscope::pipeline {

using nlohmann::json;

namespace {

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError(fmt::format("unknown {} key '{}'", where, key));
  }
}

}  // namespace

encoder::EncoderConfig preset_config(const std::string& name) {
  if (name == "desk") return encoder::EncoderConfig::desk();
  if (name == "paper") return encoder::EncoderConfig::paper();
  throw ConfigError("unknown encoder preset '" + name + "' (expected desk or paper)");
}

encoder::EncoderConfig RunConfig::effective_encoder() const {
  auto e = encoder;
  e.seed = weight_seed ? *weight_seed : derive_seed(seed, 0x77656967);
  return e;
}

void RunConfig::validate() const {
  encoder.validate();
  if (workers == 0) throw ConfigError("workers must be at least 1");
  if (input == InputMode::archive && input_dir.empty()) throw ConfigError("archive mode needs an input directory");
  if (input == InputMode::simulate && (num_classes == 0 || images_per_class == 0)) {
    throw ConfigError("simulate mode needs at least one class and one image per class");
  }
  if (mask_seeds == 0) throw ConfigError("mask_seeds must be at least 1");
  for (const auto& b : blur_levels) perturb::blur_preset(b);
  for (double p : occlusion_fracs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("occlusion fraction {} outside [0, 1]", p));
  }
  if (subspace_rank == 0) throw ConfigError("k must be at least 1");
  if (top_k == 0) throw ConfigError("topk must be at least 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError(fmt::format("tau {} outside (0, 1]", tau));
}

RunConfig config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"input", "in", "out", "seed", "workers", "encoder", "classes", "images_per_class", "mask_seeds",
                  "mask_runs", "manifest", "blur_levels", "occlusion_fracs", "fill", "analyses", "k", "tau", "topk",
                  "plots"},
                 "config");
  if (j.contains("input")) {
    const auto mode = get<std::string>(j, "input");
    if (mode == "simulate") c.input = InputMode::simulate;
    else if (mode == "archive") c.input = InputMode::archive;
    else throw ConfigError("input must be 'simulate' or 'archive'");
  }
  if (j.contains("in")) c.input_dir = get<std::string>(j, "in");
  if (j.contains("out")) c.out_dir = get<std::string>(j, "out");
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed");
  if (j.contains("workers")) c.workers = get<std::size_t>(j, "workers");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    if (!e.is_object()) throw ConfigError("encoder must be an object");
    reject_unknown(e,
                   {"preset", "image_size", "image_height", "image_width", "patch_size", "embed_dim", "num_layers", "num_heads", "masking_ratio",
                    "include_cls", "weight_seed"},
                   "encoder");
    if (e.contains("preset")) {
      c.encoder_preset = get<std::string>(e, "preset");
      c.encoder = preset_config(c.encoder_preset);
    }
    if (e.contains("image_size")) c.encoder.image_height = c.encoder.image_width = get<std::size_t>(e, "image_size");
    if (e.contains("image_height")) c.encoder.image_height = get<std::size_t>(e, "image_height");
    if (e.contains("image_width")) c.encoder.image_width = get<std::size_t>(e, "image_width");
    if (e.contains("patch_size")) c.encoder.patch_size = get<std::size_t>(e, "patch_size");
    if (e.contains("embed_dim")) c.encoder.embed_dim = get<std::size_t>(e, "embed_dim");
    if (e.contains("num_layers")) c.encoder.num_layers = get<std::size_t>(e, "num_layers");
    if (e.contains("num_heads")) c.encoder.num_heads = get<std::size_t>(e, "num_heads");
    if (e.contains("masking_ratio")) c.encoder.masking_ratio = get<double>(e, "masking_ratio");
    if (e.contains("include_cls")) c.encoder.include_cls = get<bool>(e, "include_cls");
    if (e.contains("weight_seed") && !e.at("weight_seed").is_null()) c.weight_seed = get<std::uint64_t>(e, "weight_seed");
  }
  if (j.contains("classes")) c.num_classes = get<std::size_t>(j, "classes");
  if (j.contains("images_per_class")) c.images_per_class = get<std::size_t>(j, "images_per_class");
  if (j.contains("mask_seeds")) c.mask_seeds = get<std::size_t>(j, "mask_seeds");
  if (j.contains("mask_runs")) c.mask_runs = get<std::size_t>(j, "mask_runs");
  if (j.contains("manifest")) c.manifest = get<std::map<std::string, std::vector<std::string>>>(j, "manifest");
  if (j.contains("blur_levels")) c.blur_levels = get<std::vector<std::string>>(j, "blur_levels");
  if (j.contains("occlusion_fracs")) c.occlusion_fracs = get<std::vector<double>>(j, "occlusion_fracs");
  if (j.contains("fill")) {
    const auto f = get<std::string>(j, "fill");
    if (f == "zero") c.fill = perturb::FillRule::zero;
    else if (f == "mean") c.fill = perturb::FillRule::image_mean;
    else throw ConfigError("fill must be 'zero' or 'mean'");
  }
  if (j.contains("analyses")) {
    const auto& a = j.at("analyses");
    reject_unknown(a, {"subspace", "attn", "rollout", "indicators"}, "analyses");
    if (a.contains("subspace")) c.analyses.subspace = get<bool>(a, "subspace");
    if (a.contains("attn")) c.analyses.attention = get<bool>(a, "attn");
    if (a.contains("rollout")) c.analyses.rollout = get<bool>(a, "rollout");
    if (a.contains("indicators")) c.analyses.indicators = get<bool>(a, "indicators");
  }
  if (j.contains("k")) c.subspace_rank = get<std::size_t>(j, "k");
  if (j.contains("tau")) c.tau = get<double>(j, "tau");
  if (j.contains("topk")) c.top_k = get<std::size_t>(j, "topk");
  if (j.contains("plots")) c.plots = get<bool>(j, "plots");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["input"] = c.input == InputMode::simulate ? "simulate" : "archive";
  j["in"] = c.input_dir.string();
  j["out"] = c.out_dir.string();
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["encoder"] = {{"preset", c.encoder_preset},
                  {"image_height", c.encoder.image_height},
                  {"image_width", c.encoder.image_width},
                  {"patch_size", c.encoder.patch_size},
                  {"embed_dim", c.encoder.embed_dim},
                  {"num_layers", c.encoder.num_layers},
                  {"num_heads", c.encoder.num_heads},
                  {"masking_ratio", c.encoder.masking_ratio},
                  {"include_cls", c.encoder.include_cls},
                  {"weight_seed", c.effective_encoder().seed}};
  j["classes"] = c.num_classes;
  j["images_per_class"] = c.images_per_class;
  j["mask_seeds"] = c.mask_seeds;
  j["mask_runs"] = c.mask_runs;
  j["manifest"] = c.manifest;
  j["blur_levels"] = c.blur_levels;
  j["occlusion_fracs"] = c.occlusion_fracs;
  j["fill"] = c.fill == perturb::FillRule::zero ? "zero" : "mean";
  j["analyses"] = {{"subspace", c.analyses.subspace},
                   {"attn", c.analyses.attention},
                   {"rollout", c.analyses.rollout},
                   {"indicators", c.analyses.indicators}};
  j["k"] = c.subspace_rank;
  j["tau"] = c.tau;
  j["topk"] = c.top_k;
  j["plots"] = c.plots;
  return j;
}

}  // namespace rscope::pipeline
