#include "rscope/pipeline/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "rscope/errors.hpp"
#include "rscope/indicators.hpp"
#include "rscope/perturb.hpp"
#include "rscope/pipeline/csv.hpp"
#include "rscope/pipeline/plots.hpp"
#include "rscope/pipeline/synthetic.hpp"
#include "rscope/pipeline/workers.hpp"
#include "rscope/rng.hpp"
#include "rscope/subspace.hpp"

namespace rscope::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct LevelKey {
  int kind;
  double order;
  std::string label;
  auto operator<=>(const LevelKey&) const = default;
};

LevelKey level_key(const std::string& label) {
  if (label == kCleanLevel) return {0, 0.0, label};
  if (label.starts_with("blur-")) {
    for (std::size_t i = 0; i < perturb::kBlurPresets.size(); ++i) {
      if (label.substr(5) == perturb::kBlurPresets[i].level) return {1, static_cast<double>(i), label};
    }
  }
  if (label.starts_with("occlude-")) {
    try {
      return {2, std::stod(label.substr(8)), label};
    } catch (const std::exception&) {
    }
  }
  return {3, 0.0, label};
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

std::string metadata_or(const TensorArchive& a, const std::string& key, const std::string& fallback) {
  auto it = a.metadata.find(key);
  return it == a.metadata.end() ? fallback : it->second;
}

std::uint64_t mask_seed_for(std::uint64_t seed, std::size_t cls, std::size_t image, std::size_t m) {
  return derive_seed(seed, 0x4d41534b00000000ULL ^ (cls << 40) ^ (image << 16) ^ m);
}

struct Perturbation {
  std::string label;
  std::optional<perturb::BlurPreset> blur;
  double occlusion = 0.0;
};

std::vector<Perturbation> perturbation_sweep(const RunConfig& c) {
  std::vector<Perturbation> out;
  for (const auto& b : c.blur_levels) out.push_back({blur_level_label(b), perturb::blur_preset(b), 0.0});
  for (double p : c.occlusion_fracs) out.push_back({occlusion_level_label(p), std::nullopt, p});
  return out;
}

struct PerturbedImage {
  std::string label;
  Image image;
  perturb::QualityScore quality;
};

// Applies every perturbation of the sweep; occlusion is ranked by the
// rollout of an unmasked forward pass on the clean image.
std::vector<PerturbedImage> apply_sweep(const Image& clean, const std::vector<Perturbation>& sweep,
                                        const encoder::Encoder* enc, perturb::FillRule fill) {
  std::optional<attention::RolloutResult> ranking;
  std::vector<PerturbedImage> out;
  for (const auto& p : sweep) {
    Image img;
    if (p.blur) {
      img = perturb::blur(clean, *p.blur);
    } else {
      if (!enc) throw ConfigError("occlusion needs an encoder to rank patches");
      if (!ranking) {
        const auto& cfg = enc->config();
        std::vector<std::int64_t> all(cfg.num_patches());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
        ranking = attention::attention_rollout(enc->forward_visible(clean, all));
      }
      img = perturb::occlude(clean, attention::PatchGrid::from_config(enc->config()), *ranking,
                             {p.occlusion, fill})
                .image;
    }
    auto q = perturb::quality(clean, img);
    out.push_back({p.label, std::move(img), q});
  }
  return out;
}

void save_quality(const fs::path& path, std::vector<std::tuple<std::string, std::string, perturb::QualityScore>> rows) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return level_before(std::get<1>(a), std::get<1>(b));
  });
  CsvTable t({"image_id", "level", "psnr_db", "ssim"});
  for (const auto& [id, level, q] : rows) t.add_row({id, level, format_number(q.psnr_db), format_number(q.ssim)});
  t.save(path);
}

std::string digest_bytes(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 digest failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::vector<char> read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw ValidationError("cannot open archive '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<encoder::ActivationTrace> load_all(const std::vector<const TraceEntry*>& entries) {
  std::vector<encoder::ActivationTrace> out;
  out.reserve(entries.size());
  for (const auto* e : entries) out.push_back(load_trace(*e));
  return out;
}

std::string join_numbers(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(format_number(x));
  return fmt::format("{}", fmt::join(parts, ";"));
}

fs::path write_table(const fs::path& dir, const std::string& name, const CsvTable& table,
                     std::vector<fs::path>& written) {
  const auto path = dir / name;
  table.save(path);
  written.push_back(path);
  return path;
}

// ---------------------------------------------------------------------------

void run_subspace(const TraceIndex& index, const RunConfig& cfg, const fs::path& out,
                  std::vector<fs::path>& written) {
  const auto classes = index.classes();
  if (classes.size() < 2) throw ValidationError("subspace analysis needs clean traces of at least two classes");
  const std::size_t layers = index.num_layers;
  // per class, per layer
  std::vector<std::vector<subspace::ClassSubspace>> spaces(classes.size());
  parallel_for(classes.size(), cfg.workers, [&](std::size_t c) {
    const auto entries = index.select(classes[c], kCleanLevel);
    if (entries.empty()) throw ValidationError("class '" + classes[c] + "' has no clean traces");
    const auto traces = load_all(entries);
    for (std::size_t l = 1; l <= layers; ++l) {
      spaces[c].push_back(
          subspace::class_subspace(subspace::assemble_class_matrix(traces, classes[c], l), cfg.subspace_rank));
    }
  });

  std::vector<std::string> header{"layer", "class_i", "class_j"};
  for (std::size_t m = 1; m <= cfg.subspace_rank; ++m) header.push_back(fmt::format("theta_{}_deg", m));
  CsvTable angles(header);
  CsvTable summary({"layer", "pairs", "median_deg", "q1_deg", "q3_deg", "whisker_low_deg", "whisker_high_deg",
                    "outliers_deg"});
  CsvTable sigma({"layer", "class", "sigma_1", "sigma_sum", "tie_at_k"});
  for (std::size_t l = 1; l <= layers; ++l) {
    std::vector<subspace::ClassSubspace> at_layer;
    for (std::size_t c = 0; c < classes.size(); ++c) at_layer.push_back(spaces[c][l - 1]);
    const auto dist = subspace::layer_angle_distribution(at_layer);
    for (const auto& p : dist.pairs) {
      std::vector<std::string> row{std::to_string(l), p.class_i, p.class_j};
      for (double a : p.angles_deg) row.push_back(format_number(a));
      angles.add_row(std::move(row));
    }
    const auto& b = dist.theta1;
    summary.add_row({std::to_string(l), std::to_string(b.count), format_number(b.median), format_number(b.q1),
                     format_number(b.q3), format_number(b.whisker_low), format_number(b.whisker_high),
                     join_numbers(b.outliers)});
    for (const auto& s : at_layer) {
      double total = 0.0;
      for (double v : s.singular_values) total += v;
      sigma.add_row({std::to_string(l), s.class_id, format_number(s.singular_values.front()), format_number(total),
                     s.tie_at_rank ? "1" : "0"});
    }
  }
  write_table(out, "subspace_angles.csv", angles, written);
  write_table(out, "subspace_summary.csv", summary, written);
  write_table(out, "singular_values.csv", sigma, written);
}

void run_attention(const TraceIndex& index, const RunConfig& cfg, bool distances, bool rollout, const fs::path& out,
                   std::vector<fs::path>& written) {
  std::vector<const TraceEntry*> clean;
  for (const auto& e : index.entries)
    if (e.level == kCleanLevel) clean.push_back(&e);
  if (clean.empty()) throw ValidationError("attention analysis needs clean traces");
  if (distances && !index.grid) {
    throw ValidationError("attention distances need image_height/image_width/patch_size trace metadata");
  }
  std::vector<std::vector<std::vector<double>>> per_image(clean.size());
  const fs::path rollout_dir = out / "rollout";
  parallel_for(clean.size(), cfg.workers, [&](std::size_t i) {
    const auto trace = load_trace(*clean[i]);
    if (distances) per_image[i] = attention::trace_attention_distances(trace, *index.grid);
    if (rollout) {
      const auto r = attention::attention_rollout(trace);
      TensorArchive a;
      a.metadata = {{"class_id", clean[i]->class_id},
                    {"image_id", clean[i]->image_id},
                    {"mask_index", std::to_string(clean[i]->mask_index)},
                    {"importance_source", r.from_cls_row ? "cls_row" : "column_mean"},
                    {"residual_weight", "0.5"}};
      a.add(TensorRecord::from<double>("rollout/scores", {r.scores.size()}, std::span<const double>(r.scores)));
      a.add(TensorRecord::from<std::int64_t>("rollout/patch_idx", {r.patch_indices.size()},
                                             std::span<const std::int64_t>(r.patch_indices)));
      make_dirs(rollout_dir / clean[i]->class_id);
      save_archive(a, rollout_dir / clean[i]->class_id /
                          fmt::format("{}__m{}.rscope", clean[i]->image_id, clean[i]->mask_index));
    }
  });
  if (distances) {
    CsvTable t({"layer", "head", "mean_distance_px"});
    for (std::size_t l = 0; l < index.num_layers; ++l) {
      for (std::size_t h = 0; h < index.num_heads; ++h) {
        double sum = 0.0;
        for (const auto& img : per_image) sum += img[l][h];
        t.add_row({std::to_string(l + 1), std::to_string(h + 1), format_number(sum / double(per_image.size()))});
      }
    }
    write_table(out, "attention_distance.csv", t, written);
  }
}

void run_indicators(const TraceIndex& index, const RunConfig& cfg, const fs::path& out,
                    std::vector<fs::path>& written) {
  const auto classes = index.classes();
  std::vector<std::string> levels;
  for (const auto& l : index.levels())
    if (l != kCleanLevel) levels.push_back(l);
  const indicators::IndicatorParams params{cfg.top_k, cfg.tau, indicators::Magnitude::absolute};
  const std::size_t last = index.num_layers;

  struct ClassLevel {
    bool present = false;
    std::vector<indicators::FeatureRetention> cells;
    std::vector<indicators::AlignmentStat> alignments;
  };
  std::vector<std::vector<ClassLevel>> results(classes.size(), std::vector<ClassLevel>(levels.size()));
  parallel_for(classes.size(), cfg.workers, [&](std::size_t c) {
    const auto clean_entries = index.select(classes[c], kCleanLevel);
    if (clean_entries.empty()) throw ValidationError("class '" + classes[c] + "' has no clean traces");
    const auto clean = load_all(clean_entries);
    std::map<std::pair<std::string, std::size_t>, Vector> clean_means;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const Matrix p = clean[i].patch_tokens(last);
      clean_means[{clean_entries[i]->image_id, clean_entries[i]->mask_index}] =
          encoder::mean_patch(p, static_cast<std::size_t>(p.rows()));
    }
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto pert_entries = index.select(classes[c], levels[l]);
      if (pert_entries.empty()) continue;
      const auto pert = load_all(pert_entries);
      auto& slot = results[c][l];
      slot.present = true;
      slot.cells = indicators::class_retention(clean, pert, params);
      for (std::size_t i = 0; i < pert.size(); ++i) {
        auto it = clean_means.find({pert_entries[i]->image_id, pert_entries[i]->mask_index});
        if (it == clean_means.end()) continue;
        const Matrix p = pert[i].patch_tokens(last);
        slot.alignments.push_back(
            indicators::cosine_alignment(it->second, encoder::mean_patch(p, static_cast<std::size_t>(p.rows()))));
      }
    }
  });

  CsvTable heatmap({"level", "layer", "head", "c_clean", "c_pert"});
  CsvTable drops({"level", "delta_c"});
  CsvTable cosines({"level", "mean_cosine", "mean_norm_gap"});
  const std::size_t cells = index.num_layers * index.num_heads;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::vector<double> c_clean(cells, 0.0), c_pert(cells, 0.0);
    double drop_sum = 0.0, cos_sum = 0.0, gap_sum = 0.0;
    std::size_t n_classes = 0, n_pairs = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const auto& slot = results[c][l];
      if (!slot.present) continue;
      ++n_classes;
      drop_sum += indicators::mean_drop(slot.cells, index.num_layers, index.num_heads);
      for (const auto& cell : slot.cells) {
        const auto i = (cell.layer - 1) * index.num_heads + (cell.head - 1);
        c_clean[i] += static_cast<double>(cell.c_clean);
        c_pert[i] += static_cast<double>(cell.c_pert);
      }
      for (const auto& a : slot.alignments) {
        cos_sum += a.cosine;
        gap_sum += a.norm_gap;
        ++n_pairs;
      }
    }
    if (n_classes == 0) continue;
    for (std::size_t i = 0; i < cells; ++i) {
      heatmap.add_row({levels[l], std::to_string(i / index.num_heads + 1), std::to_string(i % index.num_heads + 1),
                       format_number(c_clean[i] / double(n_classes)), format_number(c_pert[i] / double(n_classes))});
    }
    drops.add_row({levels[l], format_number(drop_sum / double(n_classes))});
    if (n_pairs) {
      cosines.add_row({levels[l], format_number(cos_sum / double(n_pairs)), format_number(gap_sum / double(n_pairs))});
    }
  }
  write_table(out, "retention_heatmap.csv", heatmap, written);
  write_table(out, "delta_c.csv", drops, written);
  write_table(out, "cosine.csv", cosines, written);

  if (cfg.input == InputMode::simulate && cfg.mask_runs > 0) {
    const encoder::Encoder enc(cfg.effective_encoder());
    const auto& e = enc.config();
    std::vector<indicators::MaskInvarianceReport> reports(cfg.num_classes);
    parallel_for(cfg.num_classes, cfg.workers, [&](std::size_t c) {
      const auto img = synthetic_image(e.image_height, e.image_width, c, 0, cfg.seed);
      reports[c] = indicators::mask_invariance_study(enc, img, cfg.mask_runs, derive_seed(cfg.seed, 0x1000 + c));
    });
    CsvTable t({"image_id", "runs", "min_norm", "max_norm", "norm_spread", "min_cosine", "mean_cosine"});
    for (std::size_t c = 0; c < reports.size(); ++c) {
      const auto& r = reports[c];
      t.add_row({image_label(c, 0), std::to_string(r.runs), format_number(r.min_norm), format_number(r.max_norm),
                 format_number(r.norm_spread), format_number(r.min_pairwise_cosine),
                 format_number(r.mean_pairwise_cosine)});
    }
    write_table(out, "mask_invariance.csv", t, written);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string blur_level_label(std::string_view preset) { return fmt::format("blur-{}", preset); }
std::string occlusion_level_label(double fraction) { return fmt::format("occlude-{:.2f}", fraction); }

bool level_before(const std::string& a, const std::string& b) { return level_key(a) < level_key(b); }

std::vector<std::string> TraceIndex::classes() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.class_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> TraceIndex::levels() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.level);
  std::vector<std::string> out(s.begin(), s.end());
  std::sort(out.begin(), out.end(), level_before);
  return out;
}

std::vector<const TraceEntry*> TraceIndex::select(const std::string& class_id, const std::string& level) const {
  std::vector<const TraceEntry*> out;
  for (const auto& e : entries)
    if (e.class_id == class_id && e.level == level) out.push_back(&e);
  return out;
}

std::string sha256_hex(const fs::path& file) {
  const auto bytes = read_file(file);
  return digest_bytes(bytes.data(), bytes.size());
}

encoder::ActivationTrace load_trace(const TraceEntry& entry) {
  try {
    return encoder::from_archive(load_archive(entry.path));
  } catch (const Error& e) {
    throw ValidationError(fmt::format("archive '{}': {}", entry.relative_path, e.what()));
  }
}

TraceIndex index_traces(const RunConfig& cfg) {
  TraceIndex index;
  index.root = cfg.input_dir;
  std::vector<std::pair<fs::path, std::optional<std::string>>> files;
  if (!cfg.manifest.empty()) {
    for (const auto& [cls, paths] : cfg.manifest)
      for (const auto& p : paths) files.emplace_back(index.root / p, cls);
  } else {
    if (!fs::is_directory(index.root)) {
      throw ValidationError("trace directory '" + index.root.string() + "' does not exist");
    }
    for (const auto& de : fs::recursive_directory_iterator(index.root)) {
      if (de.is_regular_file() && de.path().extension() == ".rscope") files.emplace_back(de.path(), std::nullopt);
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw ValidationError("no trace archives found under '" + index.root.string() + "'");

  for (const auto& [path, manifest_class] : files) {
    TraceEntry e;
    e.path = path;
    e.relative_path = fs::relative(path, index.root).generic_string();
    if (!fs::exists(path)) throw ValidationError("archive '" + e.relative_path + "' does not exist");
    const auto bytes = read_file(path);
    e.sha256 = digest_bytes(bytes.data(), bytes.size());
    encoder::ActivationTrace trace;
    TensorArchive archive;
    try {
      archive = read_archive(std::as_bytes(std::span(bytes)));
      trace = encoder::from_archive(archive);
    } catch (const Error& err) {
      throw ValidationError(fmt::format("archive '{}': {}", e.relative_path, err.what()));
    }
    if (manifest_class) {
      e.class_id = *manifest_class;
    } else if (auto it = archive.metadata.find("class_id"); it != archive.metadata.end()) {
      e.class_id = it->second;
    } else {
      throw ValidationError(fmt::format("archive '{}': missing metadata 'class_id'", e.relative_path));
    }
    e.image_id = metadata_or(archive, "image_id", path.stem().string());
    e.level = metadata_or(archive, "level", kCleanLevel);
    try {
      e.mask_index = std::stoul(metadata_or(archive, "mask_index", "0"));
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("archive '{}': metadata 'mask_index' is not a count", e.relative_path));
    }

    if (index.entries.empty()) {
      index.num_layers = trace.num_layers();
      index.num_heads = trace.num_heads();
      index.embed_dim = trace.embed_dim();
      try {
        const auto h = std::stoul(archive.metadata.at("image_height"));
        const auto w = std::stoul(archive.metadata.at("image_width"));
        const auto n = std::stoul(archive.metadata.at("patch_size"));
        if (n > 0 && h % n == 0 && w % n == 0) index.grid = attention::PatchGrid{h / n, w / n, n};
      } catch (const std::exception&) {
      }
    } else if (trace.num_layers() != index.num_layers || trace.num_heads() != index.num_heads ||
               trace.embed_dim() != index.embed_dim) {
      throw ValidationError(fmt::format("archive '{}': {} layers x {} heads x D={} differs from {} x {} x D={}",
                                        e.relative_path, trace.num_layers(), trace.num_heads(), trace.embed_dim(),
                                        index.num_layers, index.num_heads, index.embed_dim));
    }
    index.entries.push_back(std::move(e));
  }
  std::sort(index.entries.begin(), index.entries.end(), [](const TraceEntry& a, const TraceEntry& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    if (a.level != b.level) return level_before(a.level, b.level);
    return a.mask_index < b.mask_index;
  });
  return index;
}

std::vector<fs::path> cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  const encoder::Encoder enc(cfg.effective_encoder());
  const auto& e = enc.config();
  const auto sweep = perturbation_sweep(cfg);
  const fs::path trace_dir = cfg.out_dir / "traces", image_dir = cfg.out_dir / "images";
  make_dirs(trace_dir);
  make_dirs(image_dir);

  const std::size_t items = cfg.num_classes * cfg.images_per_class;
  std::vector<std::vector<fs::path>> written(items);
  std::vector<std::vector<std::tuple<std::string, std::string, perturb::QualityScore>>> quality(items);
  parallel_for(items, cfg.workers, [&](std::size_t item) {
    const std::size_t c = item / cfg.images_per_class, i = item % cfg.images_per_class;
    const auto cls = class_label(c), id = image_label(c, i);
    const Image clean = synthetic_image(e.image_height, e.image_width, c, i, cfg.seed);
    make_dirs(trace_dir / cls);
    make_dirs(image_dir / cls);
    {
      auto a = image_archive(clean);
      a.metadata = {{"class_id", cls}, {"image_id", id}};
      save_archive(a, image_dir / cls / (id + ".rscope"));
    }
    std::vector<std::pair<std::string, Image>> variants;
    variants.emplace_back(kCleanLevel, clean);
    for (auto& p : apply_sweep(clean, sweep, &enc, cfg.fill)) {
      quality[item].emplace_back(id, p.label, p.quality);
      variants.emplace_back(p.label, std::move(p.image));
    }
    for (const auto& [level, img] : variants) {
      for (std::size_t m = 0; m < cfg.mask_seeds; ++m) {
        auto trace = enc.forward(img, mask_seed_for(cfg.seed, c, i, m));
        trace.metadata["class_id"] = cls;
        trace.metadata["image_id"] = id;
        trace.metadata["level"] = level;
        trace.metadata["mask_index"] = std::to_string(m);
        const auto path = trace_dir / cls / fmt::format("{}__{}__m{}.rscope", id, level, m);
        save_archive(encoder::to_archive(trace), path);
        written[item].push_back(path);
      }
    }
  });

  std::vector<fs::path> all;
  std::vector<std::tuple<std::string, std::string, perturb::QualityScore>> rows;
  for (std::size_t k = 0; k < items; ++k) {
    all.insert(all.end(), written[k].begin(), written[k].end());
    rows.insert(rows.end(), quality[k].begin(), quality[k].end());
  }
  if (!sweep.empty()) save_quality(cfg.out_dir / "quality.csv", std::move(rows));
  std::sort(all.begin(), all.end());
  return all;
}

void cmd_perturb(const RunConfig& cfg) {
  cfg.validate();
  const auto sweep = perturbation_sweep(cfg);
  if (sweep.empty()) throw ConfigError("perturb needs --blur-level and/or --occlude-frac (or a sweep in the config)");
  struct Source {
    std::string class_id, image_id;
    std::optional<fs::path> path;
    std::size_t class_index = 0, image_index = 0;
  };
  std::vector<Source> sources;
  if (cfg.input == InputMode::simulate) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
      for (std::size_t i = 0; i < cfg.images_per_class; ++i)
        sources.push_back({class_label(c), image_label(c, i), std::nullopt, c, i});
  } else {
    if (!fs::is_directory(cfg.input_dir)) {
      throw ValidationError("image directory '" + cfg.input_dir.string() + "' does not exist");
    }
    std::vector<fs::path> files;
    for (const auto& de : fs::recursive_directory_iterator(cfg.input_dir))
      if (de.is_regular_file() && de.path().extension() == ".rscope") files.push_back(de.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      TensorArchive a;
      try {
        a = load_archive(f);
        image_from_archive(a);
      } catch (const Error& err) {
        throw ValidationError(fmt::format("archive '{}': {}", f.string(), err.what()));
      }
      sources.push_back({metadata_or(a, "class_id", f.parent_path().filename().string()),
                         metadata_or(a, "image_id", f.stem().string()), f});
    }
    if (sources.empty()) throw ValidationError("no image archives under '" + cfg.input_dir.string() + "'");
  }

  std::optional<encoder::Encoder> enc;
  if (!cfg.occlusion_fracs.empty()) enc.emplace(cfg.effective_encoder());
  const fs::path dir = cfg.out_dir / "perturbed";
  make_dirs(dir);
  std::vector<std::vector<std::tuple<std::string, std::string, perturb::QualityScore>>> quality(sources.size());
  parallel_for(sources.size(), cfg.workers, [&](std::size_t k) {
    const auto& s = sources[k];
    const auto& e = cfg.encoder;
    const Image clean = s.path ? image_from_archive(load_archive(*s.path))
                               : synthetic_image(e.image_height, e.image_width, s.class_index, s.image_index, cfg.seed);
    make_dirs(dir / s.class_id);
    for (auto& p : apply_sweep(clean, sweep, enc ? &*enc : nullptr, cfg.fill)) {
      quality[k].emplace_back(s.image_id, p.label, p.quality);
      auto a = image_archive(p.image);
      a.metadata = {{"class_id", s.class_id}, {"image_id", s.image_id}, {"level", p.label}};
      save_archive(a, dir / s.class_id / fmt::format("{}__{}.rscope", s.image_id, p.label));
    }
  });
  std::vector<std::tuple<std::string, std::string, perturb::QualityScore>> rows;
  for (auto& q : quality) rows.insert(rows.end(), q.begin(), q.end());
  save_quality(cfg.out_dir / "quality.csv", std::move(rows));
}

std::vector<fs::path> cmd_analyze(const RunConfig& config, const std::string& command, AnalysisSelection sel) {
  config.validate();
  RunConfig cfg = config;
  if (cfg.input == InputMode::simulate) {
    cmd_simulate(cfg);
    cfg.input_dir = cfg.out_dir / "traces";
  }
  const TraceIndex index = index_traces(cfg);
  make_dirs(cfg.out_dir);

  std::vector<fs::path> written;
  if (sel.subspace) run_subspace(index, cfg, cfg.out_dir, written);
  if (sel.attention || sel.rollout) run_attention(index, cfg, sel.attention, sel.rollout, cfg.out_dir, written);
  if (sel.indicators) run_indicators(index, cfg, cfg.out_dir, written);

  json manifest;
  manifest["command"] = command;
  manifest["config"] = config_to_json(cfg);
  manifest["analyses"] = {{"subspace", sel.subspace},
                          {"attn", sel.attention},
                          {"rollout", sel.rollout},
                          {"indicators", sel.indicators}};
  manifest["notes"] = {
      {"subspace_rows", "patch tokens as-is (no centering), CLS dropped"},
      {"box_whiskers", "1.5 IQR, linear-interpolation quartiles"},
      {"attention_distance", "CLS dropped, rows renormalized over patch tokens"},
      {"rollout", "residual weight 0.5, head mean; CLS row when present, else column mean"},
      {"feature_magnitude", "absolute value"},
      {"membership_threshold", "ceil(tau * M)"},
      {"perturbed_common_sets", "recomputed per level with the same (k, tau)"},
      {"class_aggregation", "heatmap counts and delta_c averaged over classes"},
      {"cosine_layer", std::to_string(index.num_layers)},
  };
  json inputs = json::array();
  for (const auto& e : index.entries) {
    inputs.push_back({{"path", e.relative_path}, {"class_id", e.class_id}, {"image_id", e.image_id},
                      {"level", e.level}, {"mask_index", e.mask_index}, {"sha256", e.sha256}});
  }
  manifest["inputs"] = inputs;
  json outputs = json::array();
  for (const auto& p : written) outputs.push_back({{"file", p.filename().string()}, {"sha256", sha256_hex(p)}});
  manifest["outputs"] = outputs;
  const auto manifest_path = cfg.out_dir / "run_manifest.json";
  std::ofstream os(manifest_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + manifest_path.string() + "'");
  os << manifest.dump(2) << "\n";
  return written;
}

std::vector<fs::path> cmd_report(const RunConfig& cfg) {
  auto written = cmd_analyze(cfg, "report", cfg.analyses);
  if (cfg.plots) {
    try {
      auto plots = render_plots(cfg.out_dir);
      written.insert(written.end(), plots.begin(), plots.end());
    } catch (const std::exception& e) {
      std::cerr << "warning: plot rendering failed: " << e.what() << "\n";
    }
  }
  return written;
}

}  // namespace rscope::pipeline
