#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rscope/encoder.hpp"
#include "rscope/linalg.hpp"

namespace rscope::attention {

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_size = 0;

  static PatchGrid from_config(const encoder::EncoderConfig& cfg) {
    return {cfg.grid_rows(), cfg.grid_cols(), cfg.patch_size};
  }

  std::size_t count() const { return rows * cols; }
  double image_diagonal() const;

  struct Point {
    double x, y;
  };
  // ((col + 0.5)·n, (row + 0.5)·n) for raster index `patch`.
  Point center(std::int64_t patch) const;
};

// Attention-weighted mean pixel distance between query and key patch
// centers, averaged over query tokens. The CLS row and column are dropped
// when `has_cls` and each remaining row is renormalized to sum to 1.
double mean_attention_distance(const Matrix& attention, const PatchGrid& grid,
                               std::span<const std::int64_t> visible_indices, bool has_cls);

// Per-(layer, head) mean distance for one trace; result[l-1][h-1].
std::vector<std::vector<double>> trace_attention_distances(const encoder::ActivationTrace& trace,
                                                           const PatchGrid& grid);

struct RolloutOptions {
  // Weight of the attention term in w·Ā + (1 − w)·I.
  double attention_weight = 0.5;
};

struct RolloutResult {
  Matrix rollout;  // T×T
  // One score per patch token slot (CLS excluded), in slot order.
  std::vector<double> scores;
  // Grid patch index for each score.
  std::vector<std::int64_t> patch_indices;
  // True when scores come from the CLS row; false means column means of R.
  bool from_cls_row = true;
};

// Ā^(l) = head mean, Â^(l) = rownorm(w·Ā + (1−w)·I), R = Â^(L)···Â^(1).
// Throws ContractError when layers disagree on T or a layer has no heads.
RolloutResult attention_rollout(std::span<const std::vector<Matrix>> layers, bool has_cls,
                                RolloutOptions options = {});
RolloutResult attention_rollout(const encoder::ActivationTrace& trace, RolloutOptions options = {});

// Score slots by descending importance; ties by ascending slot.
std::vector<std::size_t> rank_patches(std::span<const double> scores);
inline std::vector<std::size_t> rank_patches(const RolloutResult& r) { return rank_patches(r.scores); }

}  // namespace rscope::attention
