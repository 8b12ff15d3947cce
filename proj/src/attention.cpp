#include "rscope/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "rscope/errors.hpp"

namespace rscope::attention {

double PatchGrid::image_diagonal() const {
  return std::hypot(static_cast<double>(cols * patch_size), static_cast<double>(rows * patch_size));
}

PatchGrid::Point PatchGrid::center(std::int64_t patch) const {
  if (patch < 0 || static_cast<std::size_t>(patch) >= count()) {
    throw ContractError(fmt::format("patch index {} has no cell in a {}x{} grid", patch, rows, cols));
  }
  const auto p = static_cast<std::size_t>(patch);
  const double n = static_cast<double>(patch_size);
  return {(static_cast<double>(p % cols) + 0.5) * n, (static_cast<double>(p / cols) + 0.5) * n};
}

double mean_attention_distance(const Matrix& a, const PatchGrid& grid, std::span<const std::int64_t> visible,
                               bool has_cls) {
  const std::size_t off = has_cls ? 1 : 0;
  if (a.rows() != a.cols() || static_cast<std::size_t>(a.rows()) != visible.size() + off) {
    throw ContractError(fmt::format("attention is {}x{} but {} visible patches{} were given", a.rows(), a.cols(),
                                    visible.size(), has_cls ? " + CLS" : ""));
  }
  if (visible.empty()) return 0.0;
  std::vector<PatchGrid::Point> centers;
  centers.reserve(visible.size());
  for (auto idx : visible) centers.push_back(grid.center(idx));

  double total = 0.0;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    double mass = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < visible.size(); ++j) {
      const double w = a(static_cast<Eigen::Index>(i + off), static_cast<Eigen::Index>(j + off));
      mass += w;
      weighted += w * std::hypot(centers[i].x - centers[j].x, centers[i].y - centers[j].y);
    }
    if (mass > 0.0) total += weighted / mass;
  }
  return total / static_cast<double>(visible.size());
}

std::vector<std::vector<double>> trace_attention_distances(const encoder::ActivationTrace& trace,
                                                           const PatchGrid& grid) {
  std::vector<std::vector<double>> out;
  for (const auto& layer : trace.layers) {
    auto& row = out.emplace_back();
    for (const auto& a : layer.attention) {
      row.push_back(mean_attention_distance(a, grid, trace.visible_indices, trace.has_cls));
    }
  }
  return out;
}

RolloutResult attention_rollout(std::span<const std::vector<Matrix>> layers, bool has_cls, RolloutOptions options) {
  if (layers.empty()) throw ContractError("attention_rollout: no layers");
  if (layers.front().empty()) throw ContractError("attention_rollout: layer 1 has no heads");
  const Eigen::Index t = layers.front().front().rows();
  const Matrix eye = Matrix::Identity(t, t);
  Matrix r = eye;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].empty()) throw ContractError(fmt::format("attention_rollout: layer {} has no heads", l + 1));
    Matrix mean = Matrix::Zero(t, t);
    for (const auto& a : layers[l]) {
      if (a.rows() != t || a.cols() != t) {
        throw ContractError(fmt::format("attention_rollout: layer {} has a {}x{} head, expected {}x{}", l + 1,
                                        a.rows(), a.cols(), t, t));
      }
      mean += a;
    }
    mean /= static_cast<double>(layers[l].size());
    Matrix mixed = options.attention_weight * mean + (1.0 - options.attention_weight) * eye;
    for (Eigen::Index i = 0; i < t; ++i) mixed.row(i) /= mixed.row(i).sum();
    r = mixed * r;
  }

  RolloutResult out;
  out.from_cls_row = has_cls;
  const Eigen::Index off = has_cls ? 1 : 0;
  for (Eigen::Index j = off; j < t; ++j) {
    out.scores.push_back(has_cls ? r(0, j) : r.col(j).mean());
    out.patch_indices.push_back(j - off);
  }
  out.rollout = std::move(r);
  return out;
}

RolloutResult attention_rollout(const encoder::ActivationTrace& trace, RolloutOptions options) {
  std::vector<std::vector<Matrix>> layers;
  for (const auto& l : trace.layers) layers.push_back(l.attention);
  auto out = attention_rollout(layers, trace.has_cls, options);
  out.patch_indices = trace.visible_indices;
  return out;
}

std::vector<std::size_t> rank_patches(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace rscope::attention
