#include "rscope/perturb.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rscope/encoder.hpp"
#include "rscope/errors.hpp"

namespace rscope::perturb {

namespace {

// Mirror index into [0, n) without repeating the edge sample.
std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// "Valid" correlation of a single-channel plane with a symmetric kernel.
Matrix filter_valid(const Matrix& plane, const Matrix& kernel) {
  const Eigen::Index kh = kernel.rows(), kw = kernel.cols();
  Matrix out(plane.rows() - kh + 1, plane.cols() - kw + 1);
  for (Eigen::Index y = 0; y < out.rows(); ++y)
    for (Eigen::Index x = 0; x < out.cols(); ++x) out(y, x) = (plane.block(y, x, kh, kw).array() * kernel.array()).sum();
  return out;
}

}  // namespace

const BlurPreset& blur_preset(std::string_view level) {
  for (const auto& p : kBlurPresets)
    if (p.level == level) return p;
  throw ConfigError(fmt::format("unknown blur level '{}'; expected I..X", level));
}

std::vector<double> occlusion_levels() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back(i / 10.0);
  return out;
}

Matrix gaussian_kernel(std::size_t k, double sigma) {
  if (k == 0 || k % 2 == 0) throw ConfigError(fmt::format("kernel size {} must be odd and positive", k));
  if (!(sigma > 0.0)) throw ConfigError(fmt::format("sigma {} must be positive", sigma));
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<Eigen::Index>(k);
  Matrix g(n, n);
  for (std::ptrdiff_t y = -r; y <= r; ++y)
    for (std::ptrdiff_t x = -r; x <= r; ++x)
      g(y + r, x + r) = std::exp(-static_cast<double>(x * x + y * y) / (2.0 * sigma * sigma));
  return g / g.sum();
}

Image convolve(const Image& image, const Matrix& kernel) {
  const auto ry = static_cast<std::ptrdiff_t>(kernel.rows() / 2);
  const auto rx = static_cast<std::ptrdiff_t>(kernel.cols() / 2);
  const auto h = static_cast<std::ptrdiff_t>(image.height), w = static_cast<std::ptrdiff_t>(image.width);
  Image out(image.height, image.width, image.channels);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t dy = -ry; dy <= ry; ++dy) {
          const auto sy = static_cast<std::size_t>(reflect(y - dy, h));
          for (std::ptrdiff_t dx = -rx; dx <= rx; ++dx) {
            acc += kernel(dy + ry, dx + rx) * image.at(sy, static_cast<std::size_t>(reflect(x - dx, w)), c);
          }
        }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
    }
  }
  return out;
}

Image blur(const Image& image, const BlurPreset& preset) {
  return convolve(image, gaussian_kernel(preset.kernel_size, preset.sigma));
}

double psnr(const Image& a, const Image& b, double max_value) {
  if (!a.same_shape(b)) {
    throw ContractError(fmt::format("psnr: shapes differ ({}x{}x{} vs {}x{}x{})", a.height, a.width, a.channels,
                                    b.height, b.width, b.channels));
  }
  if (a.data.empty()) throw ContractError("psnr: empty image");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(max_value * max_value / mse));
}

Matrix to_gray(const Image& image) {
  Matrix g(static_cast<Eigen::Index>(image.height), static_cast<Eigen::Index>(image.width));
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      g(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) =
          image.channels >= 3
              ? 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2)
              : image.at(y, x, 0);
    }
  }
  return g;
}

Matrix ssim_map(const Matrix& a, const Matrix& b, const SsimOptions& opt) {
  const auto win = static_cast<Eigen::Index>(opt.window);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError("ssim: shapes differ");
  if (a.rows() < win || a.cols() < win) {
    throw ContractError(fmt::format("ssim: {}x{} image is smaller than the {}x{} window", a.rows(), a.cols(), win, win));
  }
  const Matrix w = gaussian_kernel(opt.window, opt.sigma);
  const double c1 = std::pow(opt.k1 * opt.max_value, 2), c2 = std::pow(opt.k2 * opt.max_value, 2);
  const Matrix mu_a = filter_valid(a, w), mu_b = filter_valid(b, w);
  const Matrix aa = filter_valid(a.cwiseProduct(a), w), bb = filter_valid(b.cwiseProduct(b), w);
  const Matrix ab = filter_valid(a.cwiseProduct(b), w);
  const auto ma = mu_a.array(), mb = mu_b.array();
  const auto var_a = aa.array() - ma * ma, var_b = bb.array() - mb * mb, cov = ab.array() - ma * mb;
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  if (!a.same_shape(b)) throw ContractError("ssim: shapes differ");
  return ssim_map(to_gray(a), to_gray(b), options).mean();
}

QualityScore quality(const Image& reference, const Image& degraded) {
  return {psnr(reference, degraded), ssim(reference, degraded)};
}

OcclusionResult occlude(const Image& image, const attention::PatchGrid& grid, std::span<const double> importance,
                        const OcclusionSpec& spec) {
  const std::size_t n = grid.count();
  if (importance.size() != n) {
    throw ContractError(fmt::format("occlusion ranking covers {} patches, grid has {}", importance.size(), n));
  }
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0)) {
    throw ConfigError(fmt::format("occlusion fraction {} outside [0, 1]", spec.fraction));
  }
  if (grid.rows * grid.patch_size != image.height || grid.cols * grid.patch_size != image.width) {
    throw ContractError("occlusion grid does not tile the image");
  }
  std::vector<double> fill(image.channels, 0.0);
  if (spec.fill == FillRule::image_mean) {
    for (std::size_t i = 0; i < image.data.size(); ++i) fill[i % image.channels] += image.data[i];
    for (auto& f : fill) f /= static_cast<double>(image.height * image.width);
  }
  OcclusionResult out{image, std::vector<bool>(n, false), encoder::round_count(spec.fraction * double(n))};
  const auto order = attention::rank_patches(importance);
  for (std::size_t r = 0; r < out.masked_count; ++r) {
    const std::size_t p = order[r];
    out.masked[p] = true;
    const std::size_t y0 = (p / grid.cols) * grid.patch_size, x0 = (p % grid.cols) * grid.patch_size;
    for (std::size_t y = y0; y < y0 + grid.patch_size; ++y)
      for (std::size_t x = x0; x < x0 + grid.patch_size; ++x)
        for (std::size_t c = 0; c < image.channels; ++c) out.image.at(y, x, c) = fill[c];
  }
  return out;
}

OcclusionResult occlude(const Image& image, const attention::PatchGrid& grid, const attention::RolloutResult& ranking,
                        const OcclusionSpec& spec) {
  if (ranking.patch_indices.size() != ranking.scores.size()) throw ContractError("rollout ranking lacks patch indices");
  std::vector<double> per_patch(grid.count(), 0.0);
  std::vector<bool> seen(grid.count(), false);
  for (std::size_t i = 0; i < ranking.scores.size(); ++i) {
    const auto p = ranking.patch_indices[i];
    if (p < 0 || static_cast<std::size_t>(p) >= grid.count()) {
      throw ContractError(fmt::format("rollout patch index {} outside the grid", p));
    }
    per_patch[static_cast<std::size_t>(p)] = ranking.scores[i];
    seen[static_cast<std::size_t>(p)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ContractError("rollout ranking does not cover every grid patch; compute it on an unmasked trace");
  }
  return occlude(image, grid, per_patch, spec);
}

}  // namespace rscope::perturb
