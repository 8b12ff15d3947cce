#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rscope/attention.hpp"
#include "rscope/image.hpp"
#include "rscope/linalg.hpp"

namespace rscope::perturb {

struct BlurPreset {
  std::string_view level;  // "I".."X"
  std::size_t kernel_size;
  double sigma;
};

// The ten Gaussian blur settings, mildest first.
inline constexpr std::array<BlurPreset, 10> kBlurPresets{{
    {"I", 5, 1.0},
    {"II", 5, 2.0},
    {"III", 5, 4.0},
    {"IV", 5, 9.0},
    {"V", 7, 2.0},
    {"VI", 7, 4.0},
    {"VII", 7, 13.5},
    {"VIII", 7, 15.0},
    {"IX", 11, 2.0},
    {"X", 11, 5.0},
}};

// Throws ConfigError for an unknown label.
const BlurPreset& blur_preset(std::string_view level);

// Occlusion fractions 0.0, 0.1, ..., 0.9.
std::vector<double> occlusion_levels();

// k×k, entries ∝ exp(−(x²+y²)/(2σ²)), normalized to sum 1.
// Throws ConfigError for even k or σ ≤ 0.
Matrix gaussian_kernel(std::size_t k, double sigma);

// Per-channel 2-D convolution with reflect (mirror without edge repeat)
// padding.
Image convolve(const Image& image, const Matrix& kernel);
Image blur(const Image& image, const BlurPreset& preset);

struct QualityScore {
  double psnr_db;
  double ssim;
};

inline constexpr double kPsnrCapDb = 99.0;

// 10·log10(MAX²/MSE); identical images give the 99 dB cap.
double psnr(const Image& a, const Image& b, double max_value = kPixelMax);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double max_value = kPixelMax;
};

// Luma with weights 0.299/0.587/0.114; single-channel images pass through.
Matrix to_gray(const Image& image);

// Mean of the local SSIM map over all fully-covered window positions.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});
Matrix ssim_map(const Matrix& gray_a, const Matrix& gray_b, const SsimOptions& options = {});

QualityScore quality(const Image& reference, const Image& degraded);

enum class FillRule { zero, image_mean };

struct OcclusionSpec {
  double fraction = 0.0;
  FillRule fill = FillRule::zero;
};

struct OcclusionResult {
  Image image;
  std::vector<bool> masked;  // per grid patch
  std::size_t masked_count = 0;
};

// Replaces the round(p·N) highest-scoring grid patches with the fill value.
// `importance` must hold one score per grid patch (raster order). Throws
// ContractError if it does not cover the grid.
OcclusionResult occlude(const Image& image, const attention::PatchGrid& grid, std::span<const double> importance,
                        const OcclusionSpec& spec);
// Uses a rollout computed on an unmasked trace as the ranking source.
OcclusionResult occlude(const Image& image, const attention::PatchGrid& grid, const attention::RolloutResult& ranking,
                        const OcclusionSpec& spec);

}  // namespace rscope::perturb
