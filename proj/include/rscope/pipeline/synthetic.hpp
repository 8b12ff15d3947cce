#pragma once

#include <cstdint>
#include <string>

#include "rscope/image.hpp"
#include "rscope/tensor_store.hpp"

namespace rscope::pipeline {

// Procedural stand-in for a labelled image set. Each class owns a palette,
// grating orientation and frequency; each image draws its own phase, blob
// position and pixel noise. Deterministic in (seed, class, image).
Image synthetic_image(std::size_t height, std::size_t width, std::size_t class_index, std::size_t image_index,
                      std::uint64_t seed);

std::string class_label(std::size_t class_index);
std::string image_label(std::size_t class_index, std::size_t image_index);

// "image" record, H×W×3 f64.
TensorArchive image_archive(const Image& image);
// Accepts u8, f32 or f64 H×W×C "image" records.
Image image_from_archive(const TensorArchive& archive);

}  // namespace rscope::pipeline
