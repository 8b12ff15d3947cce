#include "rscope/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "rscope/errors.hpp"
#include "rscope/rng.hpp"

namespace rscope::encoder {

namespace {

// Weights are cached when the whole stack fits under this many parameters.
constexpr std::size_t kCacheParamLimit = 8'000'000;

enum SeedStream : std::uint64_t { kPatchEmbed = 1, kCls = 2, kBlockBase = 100 };

std::uint64_t block_seed(std::uint64_t seed, std::size_t layer, std::uint64_t which) {
  return derive_seed(seed, kBlockBase + 8 * layer + which);
}

Matrix affine(const Matrix& x, const LinearMap& map) {
  Matrix y = x * map.weight;
  y.rowwise() += map.bias.transpose();
  return y;
}

void require_finite(const Matrix& m, std::size_t layer, const char* stage) {
  if (!m.allFinite()) throw NumericError(fmt::format("non-finite activation in layer {} ({})", layer, stage));
}

Matrix record_matrix(const TensorArchive& archive, const std::string& name, std::size_t rows,
                     std::size_t cols) {
  const auto* rec = archive.find(name);
  if (!rec) throw ValidationError("missing record '" + name + "'");
  if (rec->shape.size() != 2 || rec->shape[0] != rows || rec->shape[1] != cols) {
    throw ValidationError(fmt::format("record '{}' has shape [{}], expected [{}, {}]", name,
                                      fmt::join(rec->shape, ", "), rows, cols));
  }
  if (rec->dtype != DType::f32 && rec->dtype != DType::f64) {
    throw ValidationError("record '" + name + "' must be f32 or f64");
  }
  const auto values = rec->as_f64();
  return Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

TensorRecord matrix_record(std::string name, const Matrix& m) {
  return TensorRecord::from<double>(std::move(name),
                                    {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                                    std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

}  // namespace

Image normalize_pixels(const Image& image) {
  static constexpr double kMean[3] = {0.485, 0.456, 0.406};
  static constexpr double kStd[3] = {0.229, 0.224, 0.225};
  Image out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t c = i % out.channels;
    const double m = c < 3 ? kMean[c] : 0.5, sd = c < 3 ? kStd[c] : 0.25;
    out.data[i] = (out.data[i] / kPixelMax - m) / sd;
  }
  return out;
}

EncoderConfig EncoderConfig::paper() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c;
  c.image_height = 64;
  c.image_width = 64;
  c.patch_size = 8;
  c.embed_dim = 64;
  c.num_layers = 4;
  c.num_heads = 4;
  return c;
}

std::size_t round_count(double x) { return static_cast<std::size_t>(std::round(x)); }

std::size_t EncoderConfig::num_visible() const {
  return round_count(static_cast<double>(num_patches()) * (1.0 - masking_ratio));
}

void EncoderConfig::validate() const {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  if (image_height == 0 || image_width == 0) throw ConfigError("image dimensions must be positive");
  if (image_height % patch_size || image_width % patch_size) {
    throw ConfigError(fmt::format("image {}x{} is not divisible by patch size {}", image_height, image_width,
                                  patch_size));
  }
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads) {
    throw ConfigError(fmt::format("embed_dim {} is not divisible by num_heads {}", embed_dim, num_heads));
  }
  if (num_layers == 0) throw ConfigError("num_layers must be positive");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (!(masking_ratio >= 0.0 && masking_ratio < 1.0)) {
    throw ConfigError(fmt::format("masking_ratio {} outside [0, 1)", masking_ratio));
  }
  if (num_visible() + (include_cls ? 1 : 0) == 0) throw ConfigError("configuration leaves no tokens to encode");
}

std::vector<Vector> patchify(const Image& image, std::size_t n) {
  if (n == 0 || image.height % n || image.width % n || image.height == 0 || image.width == 0) {
    throw ConfigError(fmt::format("image {}x{} is not divisible into {}-pixel patches", image.height,
                                  image.width, n));
  }
  const std::size_t rows = image.height / n, cols = image.width / n, c = image.channels;
  std::vector<Vector> patches;
  patches.reserve(rows * cols);
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      Vector p(static_cast<Eigen::Index>(n * n * c));
      Eigen::Index k = 0;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t ch = 0; ch < c; ++ch) p[k++] = image.at(pr * n + y, pc * n + x, ch);
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

std::vector<std::int64_t> mask_select(std::size_t num_patches, double masking_ratio, std::uint64_t seed) {
  if (!(masking_ratio >= 0.0 && masking_ratio < 1.0)) {
    throw ConfigError(fmt::format("masking_ratio {} outside [0, 1)", masking_ratio));
  }
  const std::size_t keep = round_count(static_cast<double>(num_patches) * (1.0 - masking_ratio));
  std::vector<std::int64_t> idx(num_patches);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
  Rng rng(derive_seed(seed, 0x6d61736b));
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(num_patches - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Matrix head_output(const Matrix& attention, const Matrix& values) {
  if (attention.rows() != attention.cols() || attention.cols() != values.rows()) {
    throw ContractError(fmt::format("head_output: A is {}x{}, V is {}x{}", attention.rows(), attention.cols(),
                                    values.rows(), values.cols()));
  }
  return attention * values;
}

Vector mean_patch(const Matrix& patch_tokens, std::size_t num_visible) {
  if (num_visible == 0) throw ContractError("mean_patch: no visible patches");
  if (static_cast<std::size_t>(patch_tokens.rows()) < num_visible) {
    throw ContractError(fmt::format("mean_patch: {} rows for {} visible patches", patch_tokens.rows(), num_visible));
  }
  Vector sum = Vector::Zero(patch_tokens.cols());
  for (std::size_t i = 0; i < num_visible; ++i) sum += patch_tokens.row(static_cast<Eigen::Index>(i)).transpose();
  return sum / static_cast<double>(num_visible);
}

Matrix sincos_position_table(std::size_t rows, std::size_t cols, std::size_t dim) {
  // First half of the features encodes the grid row, second half the column.
  const std::size_t row_width = dim / 2;
  const std::size_t col_width = dim - row_width;
  auto encode = [](double pos, std::size_t width, std::size_t i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
    return (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
  };
  Matrix table(static_cast<Eigen::Index>(rows * cols), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto p = static_cast<Eigen::Index>(r * cols + c);
      for (std::size_t i = 0; i < row_width; ++i) table(p, static_cast<Eigen::Index>(i)) = encode(double(r), row_width, i);
      for (std::size_t i = 0; i < col_width; ++i)
        table(p, static_cast<Eigen::Index>(row_width + i)) = encode(double(c), col_width, i);
    }
  }
  return table;
}

const LayerTrace& ActivationTrace::layer(std::size_t l) const {
  if (l < 1 || l > layers.size()) {
    throw ContractError(fmt::format("layer {} outside 1..{}", l, layers.size()));
  }
  return layers[l - 1];
}

Matrix ActivationTrace::patch_tokens(std::size_t l) const {
  const Matrix& z = layer(l).tokens;
  const auto off = static_cast<Eigen::Index>(cls_offset());
  return z.bottomRows(z.rows() - off);
}

std::string tokens_record(std::size_t layer) { return fmt::format("z/layer{}", layer); }
std::string attention_record(std::size_t layer, std::size_t head) {
  return fmt::format("attn/layer{}/head{}", layer, head);
}
std::string values_record(std::size_t layer, std::size_t head) {
  return fmt::format("value/layer{}/head{}", layer, head);
}

TensorArchive to_archive(const ActivationTrace& trace) {
  TensorArchive archive;
  archive.metadata = trace.metadata;
  archive.metadata["has_cls"] = trace.has_cls ? "1" : "0";
  archive.metadata["num_layers"] = std::to_string(trace.num_layers());
  archive.metadata["num_heads"] = std::to_string(trace.num_heads());
  archive.add(TensorRecord::from<std::int64_t>(kVisibleRecord, {trace.visible_indices.size()},
                                               std::span<const std::int64_t>(trace.visible_indices)));
  for (std::size_t l = 1; l <= trace.layers.size(); ++l) {
    const auto& layer = trace.layers[l - 1];
    archive.add(matrix_record(tokens_record(l), layer.tokens));
    for (std::size_t h = 1; h <= layer.attention.size(); ++h) {
      archive.add(matrix_record(attention_record(l, h), layer.attention[h - 1]));
      archive.add(matrix_record(values_record(l, h), layer.values[h - 1]));
    }
  }
  return archive;
}

ActivationTrace from_archive(const TensorArchive& archive) {
  ActivationTrace trace;
  trace.metadata = archive.metadata;
  const auto* vis = archive.find(kVisibleRecord);
  if (!vis) throw ValidationError(std::string("missing record '") + kVisibleRecord + "'");
  if (vis->shape.size() != 1 || vis->dtype != DType::i64) {
    throw ValidationError(std::string("record '") + kVisibleRecord + "' must be a 1-D i64 array");
  }
  trace.visible_indices = vis->values<std::int64_t>();

  std::size_t num_layers = 0, num_heads = 0;
  while (archive.find(tokens_record(num_layers + 1))) ++num_layers;
  while (archive.find(attention_record(1, num_heads + 1))) ++num_heads;
  auto meta_count = [&](const char* key, std::size_t& value) {
    if (auto it = archive.metadata.find(key); it != archive.metadata.end()) {
      try {
        value = std::stoul(it->second);
      } catch (const std::exception&) {
        throw ValidationError(fmt::format("metadata '{}' is not a count: '{}'", key, it->second));
      }
    }
  };
  meta_count("num_layers", num_layers);
  meta_count("num_heads", num_heads);
  if (num_layers == 0) throw ValidationError("missing record '" + tokens_record(1) + "'");
  if (num_heads == 0) throw ValidationError("missing record '" + attention_record(1, 1) + "'");

  const auto* z1 = archive.find(tokens_record(1));
  if (!z1) throw ValidationError("missing record '" + tokens_record(1) + "'");
  if (z1->shape.size() != 2) throw ValidationError("record '" + tokens_record(1) + "' must be 2-D");
  const std::size_t tokens = z1->shape[0], dim = z1->shape[1];
  if (auto it = archive.metadata.find("has_cls"); it != archive.metadata.end()) {
    trace.has_cls = it->second == "1" || it->second == "true";
  } else {
    trace.has_cls = tokens == trace.visible_indices.size() + 1;
  }
  if (tokens != trace.num_tokens()) {
    throw ValidationError(fmt::format("record '{}' has {} tokens; visible_idx implies {}", tokens_record(1), tokens,
                                      trace.num_tokens()));
  }
  if (dim % num_heads) throw ValidationError(fmt::format("embed dim {} not divisible by {} heads", dim, num_heads));
  const std::size_t head_dim = dim / num_heads;

  trace.layers.resize(num_layers);
  for (std::size_t l = 1; l <= num_layers; ++l) {
    auto& layer = trace.layers[l - 1];
    layer.tokens = record_matrix(archive, tokens_record(l), tokens, dim);
    for (std::size_t h = 1; h <= num_heads; ++h) {
      layer.attention.push_back(record_matrix(archive, attention_record(l, h), tokens, tokens));
      layer.values.push_back(record_matrix(archive, values_record(l, h), tokens, head_dim));
    }
  }
  return trace;
}

LinearMap init_linear(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  LinearMap m;
  m.weight.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < m.weight.size(); ++i) m.weight.data()[i] = rng.uniform(-a, a);
  m.bias = Vector::Zero(static_cast<Eigen::Index>(fan_out));
  return m;
}

Matrix layer_norm(const Matrix& x, double eps) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    y.row(r) = (x.row(r).array() - mean) / std::sqrt(var + eps);
  }
  return y;
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t patch_dim = config_.patch_size * config_.patch_size * 3;
  patch_embed_ = init_linear(patch_dim, d, derive_seed(config_.seed, kPatchEmbed));
  {
    // Stand-in for the learned CLS slot: a fixed seeded vector.
    Rng rng(derive_seed(config_.seed, kCls));
    const double a = std::sqrt(6.0 / static_cast<double>(1 + d));
    cls_token_.resize(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < cls_token_.size(); ++i) cls_token_[i] = rng.uniform(-a, a);
  }
  pos_table_ = sincos_position_table(config_.grid_rows(), config_.grid_cols(), d);

  const std::size_t hidden = config_.mlp_ratio * d;
  const std::size_t per_block = 3 * d * d + d * d + 2 * d * hidden;
  if (per_block * config_.num_layers <= kCacheParamLimit) {
    for (std::size_t l = 1; l <= config_.num_layers; ++l) cached_blocks_.push_back(make_block(l));
  }
}

BlockWeights Encoder::make_block(std::size_t layer) const {
  const std::size_t d = config_.embed_dim;
  const std::size_t hidden = config_.mlp_ratio * d;
  return BlockWeights{init_linear(d, 3 * d, block_seed(config_.seed, layer, 0)),
                      init_linear(d, d, block_seed(config_.seed, layer, 1)),
                      init_linear(d, hidden, block_seed(config_.seed, layer, 2)),
                      init_linear(hidden, d, block_seed(config_.seed, layer, 3))};
}

BlockWeights Encoder::block_weights(std::size_t layer) const {
  if (layer < 1 || layer > config_.num_layers) {
    throw ContractError(fmt::format("layer {} outside 1..{}", layer, config_.num_layers));
  }
  return cached_blocks_.empty() ? make_block(layer) : cached_blocks_[layer - 1];
}

ActivationTrace Encoder::forward(const Image& image, std::uint64_t mask_seed) const {
  const auto visible = mask_select(config_.num_patches(), config_.masking_ratio, mask_seed);
  auto trace = forward_visible(image, visible);
  trace.metadata["mask_seed"] = std::to_string(mask_seed);
  return trace;
}

ActivationTrace Encoder::forward_visible(const Image& image, std::span<const std::int64_t> visible) const {
  const auto& cfg = config_;
  if (image.height != cfg.image_height || image.width != cfg.image_width || image.channels != 3) {
    throw ContractError(fmt::format("image is {}x{}x{}, encoder expects {}x{}x3", image.height, image.width,
                                    image.channels, cfg.image_height, cfg.image_width));
  }
  const auto patches = patchify(normalize_pixels(image), cfg.patch_size);
  for (auto idx : visible) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= patches.size()) {
      throw ContractError(fmt::format("visible patch index {} outside 0..{}", idx, patches.size() - 1));
    }
  }
  const std::size_t d = cfg.embed_dim, heads = cfg.num_heads, dh = cfg.head_dim();
  const std::size_t off = cfg.include_cls ? 1 : 0;
  const auto tokens = static_cast<Eigen::Index>(visible.size() + off);
  if (tokens == 0) throw ContractError("nothing to encode: no visible patches and no CLS token");

  Matrix z(tokens, static_cast<Eigen::Index>(d));
  if (cfg.include_cls) z.row(0) = cls_token_.transpose();  // CLS position embedding is zero
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const auto p = visible[i];
    const auto row = static_cast<Eigen::Index>(i + off);
    z.row(row) = (patches[static_cast<std::size_t>(p)].transpose() * patch_embed_.weight) +
                 patch_embed_.bias.transpose() + pos_table_.row(p);
  }

  ActivationTrace trace;
  trace.visible_indices.assign(visible.begin(), visible.end());
  trace.has_cls = cfg.include_cls;
  trace.layers.reserve(cfg.num_layers);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 1; l <= cfg.num_layers; ++l) {
    const BlockWeights w = block_weights(l);
    const Matrix qkv = affine(layer_norm(z), w.qkv);
    LayerTrace lt;
    Matrix concat(tokens, static_cast<Eigen::Index>(d));
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c = static_cast<Eigen::Index>(h * dh);
      const auto n = static_cast<Eigen::Index>(dh);
      const Matrix q = qkv.middleCols(c, n);
      const Matrix k = qkv.middleCols(static_cast<Eigen::Index>(d) + c, n);
      Matrix v = qkv.middleCols(static_cast<Eigen::Index>(2 * d) + c, n);
      Matrix a = softmax_rows((q * k.transpose()) * scale);
      concat.middleCols(c, n) = head_output(a, v);
      lt.attention.push_back(std::move(a));
      lt.values.push_back(std::move(v));
    }
    z += affine(concat, w.proj);
    require_finite(z, l, "attention");
    z += affine(gelu(affine(layer_norm(z), w.fc1)), w.fc2);
    require_finite(z, l, "mlp");
    lt.tokens = z;
    trace.layers.push_back(std::move(lt));
  }

  auto& meta = trace.metadata;
  meta["image_height"] = std::to_string(cfg.image_height);
  meta["image_width"] = std::to_string(cfg.image_width);
  meta["patch_size"] = std::to_string(cfg.patch_size);
  meta["embed_dim"] = std::to_string(d);
  meta["head_dim"] = std::to_string(dh);
  meta["weight_seed"] = std::to_string(cfg.seed);
  meta["masking_ratio"] = fmt::format("{}", cfg.masking_ratio);
  meta["block_order"] = "pre-norm";
  meta["source"] = "toy-encoder";
  return trace;
}

}  // namespace rscope::encoder
