#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "rscope/errors.hpp"
#include "rscope/subspace.hpp"

using namespace rscope;
using namespace rscope::subspace;

namespace {

ClassMatrix with_rows(Matrix rows) {
  ClassMatrix x;
  x.class_id = "c";
  x.layer = 1;
  x.rows = std::move(rows);
  return x;
}

ClassSubspace from_basis(std::string id, Matrix basis) {
  ClassSubspace s;
  s.class_id = std::move(id);
  s.layer = 1;
  s.rank = static_cast<std::size_t>(basis.cols());
  s.basis = std::move(basis);
  return s;
}

}  // namespace

TEST_CASE("projector of a noiseless rank-k row space matches Gram-Schmidt") {
  Rng rng(3);
  for (Eigen::Index k : {1, 2, 4, 7}) {
    const Matrix gen = oracle::random_matrix(k, 16, rng);
    const Matrix coeff = oracle::random_matrix(40, k, rng);
    const auto s = class_subspace(with_rows(coeff * gen), static_cast<std::size_t>(k));
    const Matrix q = oracle::gram_schmidt(gen.transpose());
    const Matrix expect = q * q.transpose();
    CHECK((s.projector() - expect).norm() < 1e-8);
    CHECK((s.basis.transpose() * s.basis - Matrix::Identity(k, k)).norm() < 1e-10);
    CHECK(s.singular_values.size() == 16);
    CHECK(s.singular_values[static_cast<std::size_t>(k)] < 1e-9 * s.singular_values[0]);
  }
}

TEST_CASE("rank-1 class matrix") {
  Eigen::RowVectorXd u(4);
  u << 1, 2, 2, 0;
  Matrix x(3, 4);
  x.row(0) = u;
  x.row(1) = -2 * u;
  x.row(2) = 0.5 * u;
  const auto s = class_subspace(with_rows(x), 1);
  const Eigen::VectorXd dir = u.transpose() / 3.0;
  CHECK(std::abs(std::abs(s.basis.col(0).dot(dir)) - 1.0) < 1e-12);
  CHECK_THROWS_AS(class_subspace(with_rows(x), 2), ContractError);
}

TEST_CASE("reconstruction at full rank") {
  Rng rng(4);
  const Matrix x = oracle::random_matrix(30, 5, rng) * oracle::random_matrix(5, 12, rng);
  const auto s = class_subspace(with_rows(x), 5);
  CHECK((x - x * s.projector()).norm() < 1e-6);
}

TEST_CASE("rank bounds") {
  Rng rng(5);
  const Matrix x = oracle::random_matrix(3, 8, rng);
  CHECK_THROWS_AS(class_subspace(with_rows(x), 0), ContractError);
  CHECK_THROWS_AS(class_subspace(with_rows(x), 4), ContractError);
  CHECK_NOTHROW(class_subspace(with_rows(x), 3));
}

TEST_CASE("tie at the rank boundary is flagged") {
  Matrix x = Matrix::Zero(3, 3);
  x(0, 0) = 3;
  x(1, 1) = 2;
  x(2, 2) = 2;
  CHECK(class_subspace(with_rows(x), 2).tie_at_rank);
  CHECK_FALSE(class_subspace(with_rows(x), 1).tie_at_rank);
}

TEST_CASE("principal angle cases") {
  SUBCASE("identical subspaces") {
    Rng rng(6);
    const Matrix q = oracle::gram_schmidt(oracle::random_matrix(8, 3, rng));
    for (double a : principal_angles(q, q)) CHECK(a < 1e-6);
  }
  SUBCASE("orthogonal subspaces") {
    Matrix a = Matrix::Zero(8, 2), b = Matrix::Zero(8, 2);
    a(0, 0) = a(1, 1) = 1;
    b(2, 0) = b(3, 1) = 1;
    for (double t : principal_angles(a, b)) CHECK(std::abs(t - 90.0) < 1e-9);
  }
  SUBCASE("planted rotations") {
    for (double theta : {15.0, 30.0, 45.0, 90.0}) {
      const auto p = oracle::planted_pair(theta);
      const auto angles = principal_angles(p.a, p.b);
      REQUIRE(angles.size() == 2);
      CHECK(angles[0] < 1e-6);
      CHECK(std::abs(angles[1] - theta) < 1e-6);
    }
  }
  SUBCASE("mismatched shapes") {
    CHECK_THROWS_AS(principal_angles(Matrix::Identity(8, 2), Matrix::Identity(7, 2)), ContractError);
    CHECK_THROWS_AS(principal_angles(Matrix::Identity(8, 2), Matrix::Identity(8, 3)), ContractError);
  }
}

TEST_CASE("principal angles are symmetric, re-basis invariant and in range") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = oracle::gram_schmidt(oracle::random_matrix(10, 3, rng));
    const Matrix b = oracle::gram_schmidt(oracle::random_matrix(10, 3, rng));
    const auto ab = principal_angles(a, b), ba = principal_angles(b, a);
    const auto rebased = principal_angles(a * oracle::random_orthogonal(3, rng), b * oracle::random_orthogonal(3, rng));
    CHECK(std::is_sorted(ab.begin(), ab.end()));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(ab[i] - ba[i]) < 1e-6);
      CHECK(std::abs(ab[i] - rebased[i]) < 1e-6);
      CHECK(ab[i] >= 0.0);
      CHECK(ab[i] <= 90.0);
    }
  }
}

TEST_CASE("cosines above one are clamped") {
  Matrix a = Matrix::Zero(4, 1);
  a(0, 0) = 1.0 + 1e-12;
  const auto c = principal_cosines(a, a);
  CHECK(c[0] > 1.0);
  const double angle = principal_angles(a, a)[0];
  CHECK(angle >= 0.0);
  CHECK(angle < 1e-9);
}

TEST_CASE("box statistics") {
  CHECK(quantile_sorted(std::vector<double>{1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile_sorted(std::vector<double>{1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  const auto b = box_stats({5, 1, 2, 3, 4, 100});
  CHECK(b.count == 6);
  CHECK(b.median == 3.5);
  CHECK(b.q1 == doctest::Approx(2.25));
  CHECK(b.q3 == doctest::Approx(4.75));
  CHECK(b.whisker_low == 1);
  CHECK(b.whisker_high == 5);
  REQUIRE(b.outliers.size() == 1);
  CHECK(b.outliers[0] == 100);
  const auto one = box_stats({7});
  CHECK(one.median == 7);
  CHECK(one.whisker_low == 7);
  CHECK(one.whisker_high == 7);
}

TEST_CASE("layer distribution enumerates unordered pairs") {
  Rng rng(8);
  std::vector<ClassSubspace> subs;
  for (int c = 9; c >= 0; --c)
    subs.push_back(from_basis("class" + std::to_string(c), oracle::gram_schmidt(oracle::random_matrix(12, 2, rng))));
  const auto d = layer_angle_distribution(subs);
  CHECK(d.pairs.size() == 45);
  CHECK(d.theta1.count == 45);
  for (const auto& p : d.pairs) CHECK(p.class_i < p.class_j);
  CHECK(std::is_sorted(d.pairs.begin(), d.pairs.end(), [](const auto& x, const auto& y) {
    return std::tie(x.class_i, x.class_j) < std::tie(y.class_i, y.class_j);
  }));
  CHECK_THROWS_AS(layer_angle_distribution(std::span(subs).first(1)), ContractError);
}

TEST_CASE("three planted subspaces give a known median") {
  // Pairwise smallest angles are 20, 40 and 60 degrees.
  auto line = [](double deg) {
    Matrix m = Matrix::Zero(6, 1);
    m(0, 0) = std::cos(deg * M_PI / 180.0);
    m(1, 0) = std::sin(deg * M_PI / 180.0);
    return m;
  };
  std::vector<ClassSubspace> subs = {from_basis("a", line(0)), from_basis("b", line(20)), from_basis("c", line(60))};
  const auto d = layer_angle_distribution(subs);
  CHECK(std::abs(d.theta1.median - 40.0) < 1e-9);
  CHECK(std::abs(d.theta1.q1 - 30.0) < 1e-9);
}

TEST_CASE("singular value profile") {
  Matrix x = Matrix::Zero(3, 3);
  x(0, 0) = 3;
  x(1, 1) = 2;
  x(2, 2) = 1;
  const auto s = singular_value_profile(x);
  REQUIRE(s.size() == 3);
  CHECK(s[0] == doctest::Approx(3));
  CHECK(s[1] == doctest::Approx(2));
  CHECK(s[2] == doctest::Approx(1));

  // Squared singular values equal eigenvalues of XᵀX.
  Rng rng(9);
  const Matrix y = oracle::random_matrix(20, 6, rng);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(y.transpose() * y);
  const auto p = singular_value_profile(y);
  for (std::size_t i = 0; i < 6; ++i) CHECK(p[i] * p[i] == doctest::Approx(eig.eigenvalues()[5 - Eigen::Index(i)]).epsilon(1e-10));
}

TEST_CASE("class matrix assembly stacks patch tokens") {
  encoder::ActivationTrace t;
  t.has_cls = true;
  t.visible_indices = {0, 1};
  encoder::LayerTrace l;
  l.tokens = Matrix(3, 2);
  l.tokens << 9, 9, 1, 2, 3, 4;
  t.layers.push_back(l);
  std::vector<encoder::ActivationTrace> traces = {t, t};
  const auto x = assemble_class_matrix(traces, "k", 1);
  CHECK(x.token_count() == 4);
  CHECK(x.rows(0, 0) == 1);
  CHECK(x.rows(3, 1) == 4);
  CHECK_THROWS_AS(assemble_class_matrix(traces, "k", 2), ContractError);
  CHECK_THROWS_AS(assemble_class_matrix(std::span<const encoder::ActivationTrace>(), "k", 1), ContractError);
}
