#include "rscope/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "rscope/errors.hpp"
#include "rscope/rng.hpp"

namespace rscope::indicators {

AlignmentStat cosine_alignment(const Vector& clean, const Vector& pert) {
  if (clean.size() != pert.size()) {
    throw ContractError(fmt::format("cosine_alignment: lengths differ ({} vs {})", clean.size(), pert.size()));
  }
  AlignmentStat s;
  s.clean_norm = clean.norm();
  s.pert_norm = pert.norm();
  if (s.clean_norm == 0.0 || s.pert_norm == 0.0) throw ContractError("cosine_alignment: zero vector");
  s.cosine = std::clamp(clean.dot(pert) / (s.clean_norm * s.pert_norm), -1.0, 1.0);
  s.norm_gap = std::abs(s.pert_norm - s.clean_norm);
  return s;
}

Vector head_mean_vector(const Matrix& o) {
  if (o.rows() == 0) throw ContractError("head_mean_vector: no visible-token rows");
  return o.colwise().mean().transpose();
}

Matrix patch_head_output(const encoder::ActivationTrace& trace, std::size_t layer, std::size_t head) {
  const auto& lt = trace.layer(layer);
  if (head < 1 || head > lt.attention.size()) {
    throw ContractError(fmt::format("head {} outside 1..{}", head, lt.attention.size()));
  }
  const Matrix o = encoder::head_output(lt.attention[head - 1], lt.values[head - 1]);
  const auto off = static_cast<Eigen::Index>(trace.cls_offset());
  return o.bottomRows(o.rows() - off);
}

FeatureSet top_k_features(const Vector& v, std::size_t k, Magnitude mode) {
  if (k == 0) throw ContractError("top_k_features: k must be at least 1");
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const double x = v[static_cast<Eigen::Index>(i)];
    return mode == Magnitude::absolute ? std::abs(x) : x;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  order.resize(std::min(k, n));
  std::sort(order.begin(), order.end());
  return order;
}

std::size_t membership_threshold(double tau, std::size_t images) {
  const double product = tau * static_cast<double>(images);
  return static_cast<std::size_t>(std::ceil(product - 1e-9 * std::max(1.0, product)));
}

CommonFeatures common_features(std::span<const FeatureSet> per_image, double tau) {
  if (per_image.empty()) throw ContractError("common_features: no images");
  if (!(tau > 0.0 && tau <= 1.0)) throw ContractError(fmt::format("common_features: tau {} outside (0, 1]", tau));
  CommonFeatures out;
  out.image_count = per_image.size();
  out.threshold = membership_threshold(tau, per_image.size());
  std::map<std::size_t, std::size_t> freq;
  for (const auto& set : per_image)
    for (auto f : set) ++freq[f];
  for (const auto& [f, n] : freq)
    if (n >= out.threshold) out.features.push_back(f);
  return out;
}

FeatureRetention retention(const FeatureSet& clean, const FeatureSet& pert) {
  FeatureSet both;
  std::set_intersection(clean.begin(), clean.end(), pert.begin(), pert.end(), std::back_inserter(both));
  FeatureRetention r;
  r.c_clean = clean.size();
  r.c_pert = both.size();
  return r;
}

double mean_drop(std::span<const FeatureRetention> cells, std::size_t num_layers, std::size_t num_heads) {
  if (num_layers == 0 || num_heads == 0) throw ContractError("mean_drop: empty layer-head grid");
  std::vector<const FeatureRetention*> grid(num_layers * num_heads, nullptr);
  for (const auto& c : cells) {
    if (c.layer < 1 || c.layer > num_layers || c.head < 1 || c.head > num_heads) {
      throw ContractError(fmt::format("mean_drop: cell (layer {}, head {}) outside the {}x{} grid", c.layer, c.head,
                                      num_layers, num_heads));
    }
    grid[(c.layer - 1) * num_heads + (c.head - 1)] = &c;
  }
  std::vector<std::string> missing;
  double total = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!grid[i]) {
      missing.push_back(fmt::format("(layer {}, head {})", i / num_heads + 1, i % num_heads + 1));
      continue;
    }
    total += static_cast<double>(grid[i]->drop());
  }
  if (!missing.empty()) throw ContractError(fmt::format("mean_drop: missing cells {}", fmt::join(missing, ", ")));
  return total / static_cast<double>(grid.size());
}

std::vector<std::vector<FeatureSet>> trace_top_features(const encoder::ActivationTrace& trace,
                                                        const IndicatorParams& params) {
  std::vector<std::vector<FeatureSet>> out(trace.num_layers());
  for (std::size_t l = 1; l <= trace.num_layers(); ++l) {
    for (std::size_t h = 1; h <= trace.num_heads(); ++h) {
      out[l - 1].push_back(
          top_k_features(head_mean_vector(patch_head_output(trace, l, h)), params.top_k, params.magnitude));
    }
  }
  return out;
}

std::vector<FeatureRetention> class_retention(std::span<const encoder::ActivationTrace> clean,
                                              std::span<const encoder::ActivationTrace> perturbed,
                                              const IndicatorParams& params) {
  if (clean.empty() || perturbed.empty()) throw ContractError("class_retention: no traces");
  const std::size_t layers = clean.front().num_layers(), heads = clean.front().num_heads();
  auto collect = [&](std::span<const encoder::ActivationTrace> traces) {
    std::vector<std::vector<FeatureSet>> per_cell(layers * heads);
    for (const auto& t : traces) {
      if (t.num_layers() != layers || t.num_heads() != heads) {
        throw ContractError("class_retention: traces disagree on layer/head counts");
      }
      const auto sets = trace_top_features(t, params);
      for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t h = 0; h < heads; ++h) per_cell[l * heads + h].push_back(sets[l][h]);
    }
    return per_cell;
  };
  const auto clean_sets = collect(clean);
  const auto pert_sets = collect(perturbed);
  std::vector<FeatureRetention> out;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto i = l * heads + h;
      auto r = retention(common_features(clean_sets[i], params.tau).features,
                         common_features(pert_sets[i], params.tau).features);
      r.layer = l + 1;
      r.head = h + 1;
      out.push_back(r);
    }
  }
  return out;
}

MaskInvarianceReport mask_invariance_study(const encoder::Encoder& encoder, const Image& image, std::size_t runs,
                                           std::uint64_t base_seed) {
  if (runs == 0) throw ContractError("mask_invariance_study: runs must be at least 1");
  const std::size_t last = encoder.config().num_layers;
  std::vector<Vector> means;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto trace = encoder.forward(image, derive_seed(base_seed, r));
    const Matrix patches = trace.patch_tokens(last);
    means.push_back(encoder::mean_patch(patches, static_cast<std::size_t>(patches.rows())));
  }
  MaskInvarianceReport rep;
  rep.runs = runs;
  for (const auto& m : means) rep.norms.push_back(m.norm());
  const auto [lo, hi] = std::minmax_element(rep.norms.begin(), rep.norms.end());
  rep.min_norm = *lo;
  rep.max_norm = *hi;
  rep.norm_spread = *hi - *lo;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      const double c = cosine_alignment(means[i], means[j]).cosine;
      rep.min_pairwise_cosine = std::min(rep.min_pairwise_cosine, c);
      sum += c;
      ++pairs;
    }
  }
  if (pairs) rep.mean_pairwise_cosine = sum / static_cast<double>(pairs);
  return rep;
}

}  // namespace rscope::indicators
