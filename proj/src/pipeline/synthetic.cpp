#include "rscope/pipeline/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "rscope/errors.hpp"
#include "rscope/rng.hpp"

namespace rscope::pipeline {

std::string class_label(std::size_t class_index) { return fmt::format("class{:02}", class_index); }

std::string image_label(std::size_t class_index, std::size_t image_index) {
  return fmt::format("c{:02}_img{:03}", class_index, image_index);
}

Image synthetic_image(std::size_t height, std::size_t width, std::size_t class_index, std::size_t image_index,
                      std::uint64_t seed) {
  Rng cls(derive_seed(seed, 0xC1A55000 + class_index));
  double base[3], tint[3];
  for (int c = 0; c < 3; ++c) base[c] = cls.uniform(60.0, 190.0);
  for (int c = 0; c < 3; ++c) tint[c] = cls.uniform(-1.0, 1.0);
  const double angle = cls.uniform(0.0, std::numbers::pi);
  const double cycles = cls.uniform(1.5, 6.0);
  const double blob_gain = cls.uniform(-90.0, 90.0);

  Rng img(derive_seed(seed, (class_index << 32) ^ (image_index + 1)));
  const double phase = img.uniform(0.0, 2.0 * std::numbers::pi);
  const double jitter = img.uniform(-0.15, 0.15);
  const double bx = img.uniform(0.2, 0.8) * static_cast<double>(width);
  const double by = img.uniform(0.2, 0.8) * static_cast<double>(height);
  const double br = img.uniform(0.08, 0.2) * static_cast<double>(std::min(width, height));

  const double ca = std::cos(angle + jitter), sa = std::sin(angle + jitter);
  Image out(height, width, 3);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) * ca + static_cast<double>(y) * sa) / static_cast<double>(width);
      const double wave = std::sin(2.0 * std::numbers::pi * cycles * u + phase);
      const double dx = static_cast<double>(x) - bx, dy = static_cast<double>(y) - by;
      const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * br * br));
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base[c] + 55.0 * wave * (0.6 + 0.4 * tint[c]) + blob_gain * blob + 6.0 * img.normal();
        out.at(y, x, c) = std::clamp(v, 0.0, 255.0);
      }
    }
  }
  return out;
}

TensorArchive image_archive(const Image& image) {
  TensorArchive a;
  a.add(TensorRecord::from<double>("image", {image.height, image.width, image.channels},
                                   std::span<const double>(image.data)));
  return a;
}

Image image_from_archive(const TensorArchive& archive) {
  const auto* rec = archive.find("image");
  if (!rec) throw ValidationError("missing record 'image'");
  if (rec->shape.size() != 3 || rec->dtype == DType::i64) {
    throw ValidationError("record 'image' must be an H×W×C u8/f32/f64 array");
  }
  Image img(rec->shape[0], rec->shape[1], rec->shape[2]);
  img.data = rec->as_f64();
  return img;
}

}  // namespace rscope::pipeline
