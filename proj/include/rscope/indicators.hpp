#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rscope/encoder.hpp"
#include "rscope/linalg.hpp"

namespace rscope::indicators {

inline constexpr std::size_t kDefaultTopK = 10;
inline constexpr double kDefaultTau = 0.6;

struct AlignmentStat {
  double cosine = 0;
  double clean_norm = 0;
  double pert_norm = 0;
  double norm_gap = 0;
};

// Throws ContractError for a zero vector or a length mismatch.
AlignmentStat cosine_alignment(const Vector& clean, const Vector& pert);

// Row mean of a head output whose CLS row has already been removed.
Vector head_mean_vector(const Matrix& head_output);

// O^(l,h) = A·V restricted to patch rows (CLS row dropped); l, h are 1-based.
Matrix patch_head_output(const encoder::ActivationTrace& trace, std::size_t layer, std::size_t head);

enum class Magnitude { absolute, signed_value };

using FeatureSet = std::vector<std::size_t>;  // ascending, unique

// Indices of the min(k, d) largest entries by magnitude, ties by ascending
// index, returned ascending. Throws ContractError for k = 0.
FeatureSet top_k_features(const Vector& v, std::size_t k, Magnitude mode = Magnitude::absolute);

struct CommonFeatures {
  FeatureSet features;
  std::size_t threshold = 0;  // ceil(τ·M)
  std::size_t image_count = 0;
  std::size_t count() const { return features.size(); }
};

// ceil(τ·M), robust to τ·M landing a rounding error above an integer.
std::size_t membership_threshold(double tau, std::size_t images);

// Features present in at least ceil(τ·M) of the M per-image sets.
// Throws ContractError for M = 0 or τ outside (0, 1].
CommonFeatures common_features(std::span<const FeatureSet> per_image, double tau);

struct FeatureRetention {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t c_clean = 0;
  std::size_t c_pert = 0;
  std::size_t drop() const { return c_clean - c_pert; }
};

// C_clean = |clean|, C_pert = |clean ∩ pert|.
FeatureRetention retention(const FeatureSet& clean, const FeatureSet& pert);

// Mean of C_clean − C_pert over a complete layer×head grid (1-based cells).
// Throws ContractError listing every missing cell.
double mean_drop(std::span<const FeatureRetention> cells, std::size_t num_layers, std::size_t num_heads);

struct IndicatorParams {
  std::size_t top_k = kDefaultTopK;
  double tau = kDefaultTau;
  Magnitude magnitude = Magnitude::absolute;
};

// Per-image top-k sets for every (layer, head): result[l-1][h-1].
std::vector<std::vector<FeatureSet>> trace_top_features(const encoder::ActivationTrace& trace,
                                                        const IndicatorParams& params);

// Head-level retention for one class: common features are computed on the
// clean traces and, with the same (k, τ), on the perturbed traces.
std::vector<FeatureRetention> class_retention(std::span<const encoder::ActivationTrace> clean,
                                              std::span<const encoder::ActivationTrace> perturbed,
                                              const IndicatorParams& params);

struct MaskInvarianceReport {
  std::size_t runs = 0;
  std::vector<double> norms;  // ‖z̄‖ per run
  double min_norm = 0, max_norm = 0, norm_spread = 0;
  double min_pairwise_cosine = 1, mean_pairwise_cosine = 1;
};

// Encodes `image` under `runs` different mask seeds with fixed weights and
// summarizes the final-layer mean patch embeddings.
MaskInvarianceReport mask_invariance_study(const encoder::Encoder& encoder, const Image& image, std::size_t runs,
                                           std::uint64_t base_seed);

}  // namespace rscope::indicators
