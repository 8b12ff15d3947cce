#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rscope/encoder.hpp"
#include "rscope/linalg.hpp"

namespace rscope::subspace {

inline constexpr std::size_t kDefaultRank = 5;

// Patch-token embeddings of every image of one class at one layer, stacked
// in (image order, token order).
struct ClassMatrix {
  std::string class_id;
  std::size_t layer = 0;
  Matrix rows;

  std::size_t token_count() const { return static_cast<std::size_t>(rows.rows()); }
};

struct ClassSubspace {
  std::string class_id;
  std::size_t layer = 0;
  std::size_t rank = 0;
  Matrix basis;  // D×k, orthonormal columns
  std::vector<double> singular_values;
  // σ_k and σ_{k+1} coincide, so the retained subspace is not unique.
  bool tie_at_rank = false;

  Matrix projector() const { return basis * basis.transpose(); }
};

struct BoxStats {
  std::size_t count = 0;
  double median = 0, q1 = 0, q3 = 0;
  double whisker_low = 0, whisker_high = 0;
  std::vector<double> outliers;
};

// Linear-interpolation quantile of sorted data, q ∈ [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);
// Median, Q1/Q3, Tukey whiskers at 1.5×IQR (clipped to the data), outliers.
BoxStats box_stats(std::vector<double> values);

struct ClassPair {
  std::string class_i, class_j;
  std::vector<double> angles_deg;  // ascending
};

struct AngleDistribution {
  std::size_t layer = 0;
  std::vector<ClassPair> pairs;  // sorted by (class_i, class_j), class_i < class_j
  BoxStats theta1;
};

// Throws ContractError for an empty trace list, an invalid layer, mismatched
// embedding widths or a matrix with no patch rows.
ClassMatrix assemble_class_matrix(std::span<const encoder::ActivationTrace> traces, std::string class_id,
                                  std::size_t layer);

// Top-k right singular directions. Throws ContractError when k is outside
// [1, min(N_c, D)] or exceeds the numerical rank of X.
ClassSubspace class_subspace(const ClassMatrix& x, std::size_t k);

// θ_1..θ_k in degrees, ascending, for orthonormal bases. Angles below 45°
// come from sines, the rest from cosines clamped to [0, 1].
std::vector<double> principal_angles(const ClassSubspace& a, const ClassSubspace& b);
std::vector<double> principal_angles(const Matrix& basis_a, const Matrix& basis_b);

// Raw singular values of basis_aᵀ·basis_b, before clamping.
std::vector<double> principal_cosines(const Matrix& basis_a, const Matrix& basis_b);

// All class pairs at one layer; needs at least two subspaces.
AngleDistribution layer_angle_distribution(std::span<const ClassSubspace> subspaces);

std::vector<double> singular_value_profile(const Matrix& x);
inline std::vector<double> singular_value_profile(const ClassMatrix& x) { return singular_value_profile(x.rows); }

}  // namespace rscope::subspace
