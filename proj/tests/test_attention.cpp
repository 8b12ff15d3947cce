#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "rscope/attention.hpp"
#include "rscope/errors.hpp"

using namespace rscope;
using namespace rscope::attention;

namespace {

Matrix rows3(std::initializer_list<double> v) {
  Matrix m(3, 3);
  auto it = v.begin();
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) m(i, j) = *it++;
  return m;
}

std::vector<std::int64_t> iota(std::size_t n) {
  std::vector<std::int64_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("patch grid geometry") {
  const PatchGrid g{14, 14, 16};
  CHECK(g.center(0).x == 8.0);
  CHECK(g.center(0).y == 8.0);
  CHECK(g.center(15).x == 24.0);
  CHECK(g.center(15).y == 24.0);
  CHECK(g.image_diagonal() == doctest::Approx(224.0 * std::sqrt(2.0)));
}

TEST_CASE("mean attention distance cases") {
  const PatchGrid g{1, 2, 16};
  const std::vector<std::int64_t> vis = {0, 1};
  CHECK(mean_attention_distance(Matrix::Identity(2, 2), g, vis, false) == 0.0);
  CHECK(mean_attention_distance(Matrix::Constant(2, 2, 0.5), g, vis, false) == 8.0);

  Matrix with_cls(3, 3);
  with_cls << 1, 0, 0, 0.5, 0.5, 0, 0.5, 0, 0.5;
  CHECK(mean_attention_distance(with_cls, g, vis, true) == 0.0);

  CHECK_THROWS_AS(mean_attention_distance(Matrix::Identity(3, 3), g, vis, false), ContractError);
}

TEST_CASE("distance is bounded by the image diagonal") {
  Rng rng(11);
  const PatchGrid g{4, 4, 8};
  for (int i = 0; i < 200; ++i) {
    const Matrix a = oracle::random_row_stochastic(17, rng);
    const double d = mean_attention_distance(a, g, iota(16), true);
    CHECK(d >= 0.0);
    CHECK(d <= g.image_diagonal());
  }
}

TEST_CASE("distance is invariant to consistent relabelling of tokens") {
  Rng rng(12);
  const PatchGrid g{3, 3, 16};
  const Matrix a = oracle::random_row_stochastic(9, rng);
  const std::vector<std::int64_t> vis = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  const std::vector<std::size_t> perm = {4, 0, 8, 2, 6, 1, 3, 7, 5};
  Matrix b(9, 9);
  std::vector<std::int64_t> vis_b(9);
  for (std::size_t i = 0; i < 9; ++i) {
    vis_b[i] = vis[perm[i]];
    for (std::size_t j = 0; j < 9; ++j) b(Eigen::Index(i), Eigen::Index(j)) = a(Eigen::Index(perm[i]), Eigen::Index(perm[j]));
  }
  CHECK(mean_attention_distance(a, g, vis, false) == doctest::Approx(mean_attention_distance(b, g, vis_b, false)).epsilon(1e-12));
}

TEST_CASE("rollout of identity attention is the identity") {
  std::vector<std::vector<Matrix>> layers(4, std::vector<Matrix>{Matrix::Identity(3, 3)});
  const auto r = attention_rollout(layers, true);
  CHECK((r.rollout - Matrix::Identity(3, 3)).norm() < 1e-12);
  CHECK(r.scores == std::vector<double>{0.0, 0.0});
}

TEST_CASE("rollout of uniform attention") {
  // Â = 0.5·U + 0.5·I; powers keep the diagonal above 1/3 and rows stochastic.
  std::vector<std::vector<Matrix>> one = {{Matrix::Constant(3, 3, 1.0 / 3.0)}};
  const auto r = attention_rollout(one, false);
  CHECK(r.rollout(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(r.rollout(0, 1) == doctest::Approx(1.0 / 6.0));
  CHECK_FALSE(r.from_cls_row);
  for (double s : r.scores) CHECK(s == doctest::Approx(1.0 / 3.0));
  std::vector<std::vector<Matrix>> many(30, std::vector<Matrix>{Matrix::Constant(3, 3, 1.0 / 3.0)});
  const auto deep = attention_rollout(many, false);
  CHECK((deep.rollout - Matrix::Constant(3, 3, 1.0 / 3.0)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rollout with a permutation attention") {
  Matrix p = Matrix::Zero(3, 3);
  p(0, 1) = p(1, 2) = p(2, 0) = 1;
  std::vector<std::vector<Matrix>> layers = {{p}};
  const auto r = attention_rollout(layers, true);
  CHECK((r.rollout - 0.5 * (p + Matrix::Identity(3, 3))).norm() < 1e-15);
}

TEST_CASE("two-layer hand-multiplied rollout") {
  std::vector<std::vector<Matrix>> layers = {
      {rows3({1. / 2, 1. / 4, 1. / 4, 0, 1, 0, 1. / 3, 1. / 3, 1. / 3}), rows3({0, 1, 0, 1. / 2, 0, 1. / 2, 0, 0, 1})},
      {rows3({1. / 5, 2. / 5, 2. / 5, 1. / 2, 1. / 2, 0, 0, 1. / 4, 3. / 4})}};
  const Matrix expect =
      rows3({5. / 12, 17. / 48, 11. / 48, 1. / 4, 41. / 64, 7. / 64, 17. / 192, 1. / 6, 143. / 192});
  const auto r = attention_rollout(layers, true);
  CHECK((r.rollout - expect).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.scores[0] == doctest::Approx(17. / 48).epsilon(1e-12));
  CHECK(r.scores[1] == doctest::Approx(11. / 48).epsilon(1e-12));
  CHECK(r.from_cls_row);
}

TEST_CASE("rollout of random 12-layer stacks stays row-stochastic") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<Matrix>> layers(12);
    for (auto& l : layers)
      for (int h = 0; h < 12; ++h) l.push_back(oracle::random_row_stochastic(50, rng));
    const auto r = attention_rollout(layers, true);
    for (Eigen::Index i = 0; i < 50; ++i) CHECK(std::abs(r.rollout.row(i).sum() - 1.0) < 1e-6);
    CHECK(r.rollout.minCoeff() >= 0.0);
  }
}

TEST_CASE("rollout contract errors") {
  std::vector<std::vector<Matrix>> empty_layer = {{}};
  CHECK_THROWS_AS(attention_rollout(empty_layer, true), ContractError);
  std::vector<std::vector<Matrix>> mixed = {{Matrix::Identity(3, 3)}, {Matrix::Identity(4, 4)}};
  CHECK_THROWS_AS(attention_rollout(mixed, true), ContractError);
}

TEST_CASE("rank_patches") {
  const std::vector<double> s = {0.1, 0.5, 0.5, 0.3};
  CHECK(rank_patches(s) == std::vector<std::size_t>{1, 2, 3, 0});
  const std::vector<double> flat(5, 1.0);
  CHECK(rank_patches(flat) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(rank_patches(std::vector<double>{}).empty());
}
