#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rscope/image.hpp"
#include "rscope/linalg.hpp"
#include "rscope/tensor_store.hpp"

namespace rscope::encoder {

struct EncoderConfig {
  std::size_t image_height = 224;
  std::size_t image_width = 224;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 768;
  std::size_t num_layers = 12;
  std::size_t num_heads = 12;
  std::size_t mlp_ratio = 4;
  double masking_ratio = 0.75;
  std::uint64_t seed = 0;
  bool include_cls = true;

  // ViT-Base / MAE geometry: 224×224 input, 16 px patches, 12×12 heads of 64.
  static EncoderConfig paper();
  // Small geometry for fast self-contained runs: 64×64 input, 8 px patches,
  // D=64, 4 layers of 4 heads.
  static EncoderConfig desk();

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t grid_rows() const { return image_height / patch_size; }
  std::size_t grid_cols() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_rows() * grid_cols(); }
  std::size_t num_visible() const;

  // Throws ConfigError.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

// Half-away-from-zero rounding used for every derived count.
std::size_t round_count(double x);

// x/255 followed by per-channel ImageNet mean/std standardization; applied
// to every image before patch embedding.
Image normalize_pixels(const Image& image);

// Flattened n×n×C patches in raster block order; each patch is laid out
// (row, col, channel) within its block.
std::vector<Vector> patchify(const Image& image, std::size_t patch_size);

// round(N(1-ρ)) indices sampled uniformly without replacement, ascending.
std::vector<std::int64_t> mask_select(std::size_t num_patches, double masking_ratio, std::uint64_t seed);

// O = A·V. Throws ContractError on non-conformable shapes.
Matrix head_output(const Matrix& attention, const Matrix& values);

// z̄ = mean of the first num_visible rows of `patch_tokens`, which must not
// contain the CLS row.
Vector mean_patch(const Matrix& patch_tokens, std::size_t num_visible);

// Fixed 2-D sin/cos table, one row per grid patch.
Matrix sincos_position_table(std::size_t rows, std::size_t cols, std::size_t dim);

struct LayerTrace {
  Matrix tokens;                  // T×D block output z^(l)
  std::vector<Matrix> attention;  // per head, T×T row-stochastic
  std::vector<Matrix> values;     // per head, T×d_h

  bool operator==(const LayerTrace&) const = default;
};

struct ActivationTrace {
  std::vector<std::int64_t> visible_indices;
  bool has_cls = true;
  std::vector<LayerTrace> layers;
  std::map<std::string, std::string> metadata;

  std::size_t num_tokens() const { return visible_indices.size() + (has_cls ? 1 : 0); }
  std::size_t cls_offset() const { return has_cls ? 1 : 0; }
  std::size_t num_layers() const { return layers.size(); }
  std::size_t num_heads() const { return layers.empty() ? 0 : layers.front().attention.size(); }
  std::size_t embed_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().tokens.cols()); }

  // `layer` is 1-based throughout the toolkit.
  const LayerTrace& layer(std::size_t layer) const;

  // Patch rows of z^(l) (CLS dropped).
  Matrix patch_tokens(std::size_t layer) const;

  bool operator==(const ActivationTrace&) const = default;
};

// Archive record names shared with the checkpoint exporter.
std::string tokens_record(std::size_t layer);
std::string attention_record(std::size_t layer, std::size_t head);
std::string values_record(std::size_t layer, std::size_t head);
inline constexpr const char* kVisibleRecord = "visible_idx";

TensorArchive to_archive(const ActivationTrace& trace);
// Throws ValidationError naming the first missing or malformed record.
ActivationTrace from_archive(const TensorArchive& archive);

struct LinearMap {
  Matrix weight;  // in×out
  Vector bias;    // out
};

struct BlockWeights {
  LinearMap qkv;   // D → 3D
  LinearMap proj;  // D → D
  LinearMap fc1;   // D → mlp_ratio·D
  LinearMap fc2;   // mlp_ratio·D → D
};

// Seeded uniform(−a, a), a = sqrt(6/(fan_in+fan_out)); zero bias.
LinearMap init_linear(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

Matrix layer_norm(const Matrix& x, double eps = 1e-6);
Matrix gelu(const Matrix& x);
// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

// Forward-only MAE-style encoder with deterministic seeded weights.
// Weights for large configurations are regenerated per layer on demand
// instead of being held in memory.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }

  const LinearMap& patch_embedding() const { return patch_embed_; }
  const Vector& cls_token() const { return cls_token_; }
  const Matrix& position_table() const { return pos_table_; }
  // `layer` is 1-based.
  BlockWeights block_weights(std::size_t layer) const;

  // patchify → mask_select(mask_seed) → encode.
  ActivationTrace forward(const Image& image, std::uint64_t mask_seed) const;
  // Same, with mask_select seeded from config().seed.
  ActivationTrace forward(const Image& image) const { return forward(image, config_.seed); }

  // Encodes an explicit list of visible patches in the given slot order.
  ActivationTrace forward_visible(const Image& image, std::span<const std::int64_t> visible) const;

 private:
  BlockWeights make_block(std::size_t layer) const;

  EncoderConfig config_;
  LinearMap patch_embed_;
  Vector cls_token_;
  Matrix pos_table_;
  std::vector<BlockWeights> cached_blocks_;
};

}  // namespace rscope::encoder
