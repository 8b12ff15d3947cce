#pragma once

#include <cmath>
#include <vector>

#include <set>

#include "rscope/encoder.hpp"
#include "rscope/linalg.hpp"
#include "rscope/rng.hpp"

namespace oracle {

inline rscope::Matrix random_matrix(Eigen::Index r, Eigen::Index c, rscope::Rng& rng) {
  rscope::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Modified Gram–Schmidt over the columns; drops columns that collapse.
inline rscope::Matrix gram_schmidt(const rscope::Matrix& cols, double drop = 1e-10) {
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index c = 0; c < cols.cols(); ++c) {
    Eigen::VectorXd v = cols.col(c);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) v -= b.dot(v) * b;
    const double n = v.norm();
    if (n > drop) basis.push_back(v / n);
  }
  rscope::Matrix q(cols.rows(), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) q.col(static_cast<Eigen::Index>(i)) = basis[i];
  return q;
}

inline rscope::Matrix random_orthogonal(Eigen::Index n, rscope::Rng& rng) {
  return gram_schmidt(random_matrix(n, n, rng));
}

inline rscope::Matrix random_row_stochastic(Eigen::Index n, rscope::Rng& rng) {
  rscope::Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rng.uniform01() + 1e-12;
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

// Two 2-D subspaces of R^8 with principal angles exactly {0, theta}.
struct PlantedPair {
  rscope::Matrix a, b;
};

inline PlantedPair planted_pair(double theta_deg) {
  const double t = theta_deg * M_PI / 180.0;
  PlantedPair p{rscope::Matrix::Zero(8, 2), rscope::Matrix::Zero(8, 2)};
  p.a(0, 0) = 1;
  p.a(1, 1) = 1;
  p.b(0, 0) = 1;
  p.b(1, 1) = std::cos(t);
  p.b(2, 1) = std::sin(t);
  return p;
}

// Trace with random row-stochastic attention and random values; `patches`
// patch tokens plus a CLS slot. Values are drawn from a few integer levels
// so top-k selection sees plenty of ties.
inline rscope::encoder::ActivationTrace random_trace(std::size_t layers, std::size_t heads, std::size_t patches,
                                                    Eigen::Index head_dim, rscope::Rng& rng) {
  rscope::encoder::ActivationTrace t;
  t.has_cls = true;
  for (std::size_t i = 0; i < patches; ++i) t.visible_indices.push_back(static_cast<std::int64_t>(i));
  const auto tokens = static_cast<Eigen::Index>(patches + 1);
  for (std::size_t l = 0; l < layers; ++l) {
    rscope::encoder::LayerTrace layer;
    layer.tokens = random_matrix(tokens, head_dim * static_cast<Eigen::Index>(heads), rng);
    for (std::size_t h = 0; h < heads; ++h) {
      layer.attention.push_back(random_row_stochastic(tokens, rng));
      rscope::Matrix v(tokens, head_dim);
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(rng.below(7)) - 3.0;
      layer.values.push_back(v);
    }
    t.layers.push_back(std::move(layer));
  }
  return t;
}

// Feature f is in the top-k of v when fewer than k entries beat it, where a
// larger |v_j| beats it and an equal |v_j| at a smaller index beats it.
inline std::set<std::size_t> top_k_by_counting(const std::vector<double>& v, std::size_t k) {
  std::set<std::size_t> out;
  for (std::size_t f = 0; f < v.size(); ++f) {
    std::size_t beaten = 0;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (std::abs(v[j]) > std::abs(v[f]) || (std::abs(v[j]) == std::abs(v[f]) && j < f)) ++beaten;
    if (beaten < k) out.insert(f);
  }
  return out;
}

// Mean over patch rows of (A·V), by explicit loops.
inline std::vector<double> head_mean_loops(const rscope::Matrix& a, const rscope::Matrix& v) {
  std::vector<double> out(static_cast<std::size_t>(v.cols()), 0.0);
  for (Eigen::Index i = 1; i < a.rows(); ++i)
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      double acc = 0;
      for (Eigen::Index j = 0; j < a.cols(); ++j) acc += a(i, j) * v(j, c);
      out[static_cast<std::size_t>(c)] += acc;
    }
  for (auto& x : out) x /= static_cast<double>(a.rows() - 1);
  return out;
}

// Features shared by every image of some subset holding at least
// tau_num/tau_den of the images, found by walking all subsets.
inline std::set<std::size_t> common_by_enumeration(const std::vector<std::set<std::size_t>>& sets, int tau_num,
                                                   int tau_den) {
  const std::size_t m = sets.size();
  std::set<std::size_t> out;
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < m; ++i)
      if (mask >> i & 1) members.push_back(i);
    if (static_cast<int>(members.size()) * tau_den < tau_num * static_cast<int>(m)) continue;
    for (auto f : sets[members[0]]) {
      bool everywhere = true;
      for (auto i : members) everywhere = everywhere && sets[i].count(f);
      if (everywhere) out.insert(f);
    }
  }
  return out;
}

// Mean over all (layer, head) cells of |clean common| − |clean ∩ pert common|.
inline double mean_drop_by_enumeration(const std::vector<rscope::encoder::ActivationTrace>& clean,
                                       const std::vector<rscope::encoder::ActivationTrace>& pert, std::size_t k,
                                       int tau_num, int tau_den) {
  const std::size_t layers = clean[0].layers.size(), heads = clean[0].layers[0].attention.size();
  auto common = [&](const std::vector<rscope::encoder::ActivationTrace>& traces, std::size_t l, std::size_t h) {
    std::vector<std::set<std::size_t>> sets;
    for (const auto& t : traces)
      sets.push_back(top_k_by_counting(head_mean_loops(t.layers[l].attention[h], t.layers[l].values[h]), k));
    return common_by_enumeration(sets, tau_num, tau_den);
  };
  double total = 0;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c = common(clean, l, h), p = common(pert, l, h);
      std::size_t kept = 0;
      for (auto f : c) kept += p.count(f);
      total += static_cast<double>(c.size() - kept);
    }
  return total / static_cast<double>(layers * heads);
}

// Scalar re-implementation of one pre-norm block, driven by the traced A and V.
inline rscope::Matrix reference_block(const rscope::Matrix& z_prev, const rscope::encoder::LayerTrace& layer, const rscope::encoder::BlockWeights& w) {
  const Eigen::Index t = z_prev.rows(), d = z_prev.cols();
  rscope::Matrix concat(t, d);
  Eigen::Index col = 0;
  for (std::size_t h = 0; h < layer.attention.size(); ++h) {
    const rscope::Matrix& a = layer.attention[h];
    const rscope::Matrix& v = layer.values[h];
    for (Eigen::Index i = 0; i < t; ++i)
      for (Eigen::Index k = 0; k < v.cols(); ++k) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < t; ++j) acc += a(i, j) * v(j, k);
        concat(i, col + k) = acc;
      }
    col += v.cols();
  }
  rscope::Matrix z = z_prev + concat * w.proj.weight;
  z.rowwise() += w.proj.bias.transpose();
  rscope::Matrix out = z;
  for (Eigen::Index i = 0; i < t; ++i) {
    double mean = 0, var = 0;
    for (Eigen::Index k = 0; k < d; ++k) mean += z(i, k);
    mean /= double(d);
    for (Eigen::Index k = 0; k < d; ++k) var += (z(i, k) - mean) * (z(i, k) - mean);
    var /= double(d);
    Eigen::RowVectorXd ln(d);
    for (Eigen::Index k = 0; k < d; ++k) ln[k] = (z(i, k) - mean) / std::sqrt(var + 1e-6);
    Eigen::RowVectorXd hidden = ln * w.fc1.weight + w.fc1.bias.transpose();
    for (Eigen::Index k = 0; k < hidden.size(); ++k) {
      const double x = hidden[k];
      hidden[k] = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    }
    out.row(i) += hidden * w.fc2.weight + w.fc2.bias.transpose();
  }
  return out;
}

// Layer-0 tokens: CLS, then embedded visible patches plus positions.
inline rscope::Matrix embed_visible(const rscope::encoder::Encoder& enc, const rscope::Image& img,
                                    const std::vector<std::int64_t>& visible) {
  const auto& cfg = enc.config();
  const auto patches = rscope::encoder::patchify(rscope::encoder::normalize_pixels(img), cfg.patch_size);
  rscope::Matrix z(static_cast<Eigen::Index>(visible.size() + 1), static_cast<Eigen::Index>(cfg.embed_dim));
  z.row(0) = enc.cls_token().transpose();
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const auto p = visible[i];
    z.row(static_cast<Eigen::Index>(i + 1)) = patches[static_cast<std::size_t>(p)].transpose() *
                                                  enc.patch_embedding().weight +
                                              enc.patch_embedding().bias.transpose() + enc.position_table().row(p);
  }
  return z;
}

}  // namespace oracle
