#include "rscope/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "rscope/errors.hpp"

namespace rscope::subspace {

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractError("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> values) {
  BoxStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.median = quantile_sorted(values, 0.5);
  s.q1 = quantile_sorted(values, 0.25);
  s.q3 = quantile_sorted(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double fence_lo = s.q1 - 1.5 * iqr, fence_hi = s.q3 + 1.5 * iqr;
  s.whisker_low = s.q1;
  s.whisker_high = s.q3;
  for (double v : values) {
    if (v < fence_lo || v > fence_hi) {
      s.outliers.push_back(v);
      continue;
    }
    s.whisker_low = std::min(s.whisker_low, v);
    s.whisker_high = std::max(s.whisker_high, v);
  }
  return s;
}

ClassMatrix assemble_class_matrix(std::span<const encoder::ActivationTrace> traces, std::string class_id,
                                  std::size_t layer) {
  if (traces.empty()) throw ContractError("assemble_class_matrix: no traces for class '" + class_id + "'");
  const std::size_t dim = traces.front().layer(layer).tokens.cols();
  Eigen::Index total = 0;
  for (const auto& t : traces) {
    const auto& z = t.layer(layer).tokens;
    if (static_cast<std::size_t>(z.cols()) != dim) {
      throw ContractError(fmt::format("class '{}': traces disagree on embedding width ({} vs {})", class_id,
                                      z.cols(), dim));
    }
    total += z.rows() - static_cast<Eigen::Index>(t.cls_offset());
  }
  if (total == 0) throw ContractError("class '" + class_id + "' has no patch tokens at layer " + std::to_string(layer));
  ClassMatrix out{std::move(class_id), layer, Matrix(total, static_cast<Eigen::Index>(dim))};
  Eigen::Index row = 0;
  for (const auto& t : traces) {
    const Matrix patches = t.patch_tokens(layer);
    out.rows.middleRows(row, patches.rows()) = patches;
    row += patches.rows();
  }
  return out;
}

ClassSubspace class_subspace(const ClassMatrix& x, std::size_t k) {
  const std::size_t n = x.rows.rows(), d = x.rows.cols();
  if (k < 1 || k > std::min(n, d)) {
    throw ContractError(fmt::format("class '{}': k={} outside [1, min({}, {})]", x.class_id, k, n, d));
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(x.rows), Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double tol = static_cast<double>(std::max(n, d)) * std::numeric_limits<double>::epsilon() *
                     (sigma.size() ? sigma[0] : 0.0);
  const auto kk = static_cast<Eigen::Index>(k);
  if (sigma.size() < kk || sigma[kk - 1] <= tol) {
    throw ContractError(fmt::format("class '{}': k={} exceeds the numerical rank of X", x.class_id, k));
  }
  ClassSubspace s;
  s.class_id = x.class_id;
  s.layer = x.layer;
  s.rank = k;
  s.basis = svd.matrixV().leftCols(kk);
  s.singular_values.assign(sigma.data(), sigma.data() + sigma.size());
  if (sigma.size() > kk) {
    const double gap = sigma[kk - 1] - sigma[kk];
    s.tie_at_rank = gap <= 1e-12 * std::max(1.0, sigma[0]);
  }
  return s;
}

std::vector<double> principal_cosines(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ContractError(fmt::format("principal_angles: ambient dimensions differ ({} vs {})", a.rows(), b.rows()));
  }
  if (a.cols() != b.cols()) {
    throw ContractError(fmt::format("principal_angles: retained ranks differ ({} vs {})", a.cols(), b.cols()));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(a.transpose() * b));
  const Vector& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

std::vector<double> principal_angles(const Matrix& a, const Matrix& b) {
  const auto cosines = principal_cosines(a, b);
  // acos loses precision near 0°, so small angles come from the sines,
  // the singular values of the part of B orthogonal to span(A).
  Eigen::JacobiSVD<Eigen::MatrixXd> residual(Eigen::MatrixXd(b - a * (a.transpose() * b)));
  std::vector<double> sines(residual.singularValues().data(),
                            residual.singularValues().data() + residual.singularValues().size());
  std::sort(sines.begin(), sines.end());
  std::vector<double> angles;
  angles.reserve(cosines.size());
  for (std::size_t i = 0; i < cosines.size(); ++i) {
    const double c = std::clamp(cosines[i], 0.0, 1.0);
    const double rad = c * c >= 0.5 ? std::asin(std::clamp(sines[i], 0.0, 1.0)) : std::acos(c);
    angles.push_back(rad * 180.0 / std::numbers::pi);
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

std::vector<double> principal_angles(const ClassSubspace& a, const ClassSubspace& b) {
  return principal_angles(a.basis, b.basis);
}

AngleDistribution layer_angle_distribution(std::span<const ClassSubspace> subspaces) {
  if (subspaces.size() < 2) throw ContractError("layer_angle_distribution needs at least two classes");
  std::vector<const ClassSubspace*> sorted;
  for (const auto& s : subspaces) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->class_id < b->class_id; });

  AngleDistribution dist;
  dist.layer = sorted.front()->layer;
  std::vector<double> theta1;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      ClassPair p{sorted[i]->class_id, sorted[j]->class_id, principal_angles(*sorted[i], *sorted[j])};
      theta1.push_back(p.angles_deg.front());
      dist.pairs.push_back(std::move(p));
    }
  }
  dist.theta1 = box_stats(std::move(theta1));
  return dist;
}

std::vector<double> singular_value_profile(const Matrix& x) {
  if (x.size() == 0) throw ContractError("singular_value_profile of an empty matrix");
  const Eigen::MatrixXd dense = x;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
  const Vector& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

}  // namespace rscope::subspace
