#include <random>

#include <Eigen/SVD>

#include "cpdgn/errors.hpp"
#include "cpdgn/mlsvd.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cpdgn;

namespace {

std::size_t matrix_rank(const Matrix& m, double tol) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s[i] > tol * s[0] ? 1 : 0;
  return r;
}

}  // namespace

TEST_CASE("full MLSVD is exact and orthonormal") {
  std::mt19937_64 rng(21);
  const auto t = oracle::random_tensor({4, 4, 4}, rng);
  const auto res = compute_mlsvd(t, 0.0);
  CHECK(res.truncated_dims == Dims{4, 4, 4});
  CHECK(oracle::rel(res.reconstruct(), t) <= 1e-12);
  CHECK(norm(res.core) == doctest::Approx(norm(t)).epsilon(1e-12));
  for (const auto& u : res.factors) {
    CHECK((u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm() <= 1e-10);
  }
  for (const auto& s : res.slice_energies) {
    for (Eigen::Index i = 1; i < s.size(); ++i) CHECK(s[i] <= s[i - 1]);
  }
}

TEST_CASE("core hyperslices are mutually orthogonal and carry the singular values") {
  std::mt19937_64 rng(22);
  const auto t = oracle::random_tensor({5, 4, 3}, rng);
  const auto res = compute_mlsvd(t, 0.0);
  const double s2 = norm(res.core) * norm(res.core);
  for (std::size_t l = 0; l < 3; ++l) {
    const Matrix u = unfold(res.core, l);
    const Matrix g = u * u.transpose();
    for (Eigen::Index a = 0; a < g.rows(); ++a) {
      for (Eigen::Index b = 0; b < g.cols(); ++b) {
        if (a != b) CHECK(std::abs(g(a, b)) <= 1e-8 * s2);
      }
    }
    const Vector slices = hyperslice_norms(res.core, l);
    CHECK(oracle::rel(slices, res.slice_energies[l]) <= 1e-10);
  }
  CHECK(res.slice_energies[0].squaredNorm() == doctest::Approx(norm(t) * norm(t)).epsilon(1e-10));
}

TEST_CASE("rank-1 input compresses to (1,1,1)") {
  std::mt19937_64 rng(23);
  const auto k = oracle::random_operand({4, 5, 6}, 1, rng);
  const auto t = to_full(k);
  const auto res = compute_mlsvd(t, 0.0);
  CHECK(res.truncated_dims == Dims{1, 1, 1});
  CHECK(oracle::rel(res.reconstruct(), t) <= 1e-10);
  CHECK(multilinear_rank(t, 1e-10) == Dims{1, 1, 1});
}

TEST_CASE("energy rule keeps the discarded energy within budget") {
  std::mt19937_64 rng(24);
  const auto k = oracle::random_operand({8, 8, 8}, 3, rng);
  auto t = to_full(k);
  t += 1e-3 * oracle::random_tensor({8, 8, 8}, rng);
  for (double tol : {1e-2, 1e-1, 0.5}) {
    const auto res = compute_mlsvd(t, tol);
    CHECK(oracle::rel(res.reconstruct(), t) <= tol);
  }
  const auto res = compute_mlsvd(t, 1e-2);
  CHECK(res.truncated_dims == Dims{3, 3, 3});
}

TEST_CASE("truncate") {
  std::mt19937_64 rng(25);
  const auto t = oracle::random_tensor({4, 5, 3}, rng);
  const auto full = compute_mlsvd(t, 0.0);
  const auto same = truncate(full, full.truncated_dims);
  CHECK(same.core == full.core);
  CHECK(truncation_error(full, same) == 0.0);

  const auto cut = truncate(full, {2, 3, 2});
  CHECK(cut.core.dims() == Dims{2, 3, 2});
  const double direct = norm(t - cut.reconstruct());
  CHECK(truncation_error(full, cut) == doctest::Approx(direct).epsilon(1e-8));

  CHECK_THROWS_AS(truncate(full, {5, 1, 1}), RangeError);
  CHECK_THROWS_AS(truncate(full, {0, 1, 1}), RangeError);

  const auto r1 = to_full(oracle::random_operand({3, 3, 3}, 1, rng));
  MlsvdOptions keep_two;
  keep_two.rank_rel_tol = 0.0;
  const auto two = truncate(compute_mlsvd(r1, keep_two), {2, 2, 2});
  const auto one = truncate(two, {1, 1, 1});
  CHECK(oracle::rel(one.reconstruct(), r1) <= 1e-10);
}

TEST_CASE("multilinear rank") {
  std::mt19937_64 rng(26);
  const auto t2 = to_full(oracle::random_operand({5, 5, 5}, 2, rng));
  CHECK(multilinear_rank(t2, 1e-10) == Dims{2, 2, 2});
  for (std::size_t l = 0; l < 3; ++l) CHECK(matrix_rank(unfold(t2, l), 1e-10) == 2);

  for (int s = 0; s < 10; ++s) {
    const std::size_t r = 1 + s % 4;
    const auto t = to_full(oracle::random_operand({4, 5, 6}, r, rng));
    const Dims ml = multilinear_rank(t, 1e-10);
    CHECK(*std::max_element(ml.begin(), ml.end()) <= r);
  }
}

TEST_CASE("multilinear rank under multilinear multiplication") {
  std::mt19937_64 rng(27);
  for (int s = 0; s < 5; ++s) {
    const auto t = to_full(oracle::random_operand({4, 4, 4}, 3, rng));
    const Dims base = multilinear_rank(t, 1e-10);
    // Rank-deficient M can only lower the multilinear rank.
    std::vector<Matrix> m;
    for (int l = 0; l < 3; ++l) m.push_back(oracle::gaussian(4, 2, rng) * oracle::gaussian(2, 4, rng));
    const Dims lowered = multilinear_rank(multilinear_mult(m, t), 1e-10);
    for (int l = 0; l < 3; ++l) CHECK(lowered[l] <= base[l]);
    // Invertible M preserves it.
    std::vector<Matrix> inv;
    for (int l = 0; l < 3; ++l) inv.push_back(oracle::gaussian(4, 4, rng) + 4.0 * Matrix::Identity(4, 4));
    CHECK(multilinear_rank(multilinear_mult(inv, t), 1e-9) == base);
  }
}

TEST_CASE("decompress") {
  std::mt19937_64 rng(28);
  const auto k = oracle::random_operand({3, 4, 2}, 2, rng);
  MlsvdResult id;
  for (auto d : k.dims()) id.factors.push_back(Matrix::Identity(Eigen::Index(d), Eigen::Index(d)));
  const auto same = decompress_cpd(id, k);
  for (int l = 0; l < 3; ++l) CHECK(same.factors[l] == k.factors[l]);

  const auto big = to_full(oracle::random_operand({5, 5, 5}, 2, rng));
  const auto res = compute_mlsvd(big, 0.0);
  CHECK(res.truncated_dims == Dims{2, 2, 2});
  const auto core_k = oracle::random_operand(res.truncated_dims, 2, rng);
  const auto lifted = decompress_cpd(res, core_k);
  const auto two_ways = multilinear_mult(res.factors, to_full(core_k));
  CHECK(oracle::rel(to_full(lifted), two_ways) <= 1e-12);
  CHECK(norm(to_full(lifted)) == doctest::Approx(norm(to_full(core_k))).epsilon(1e-10));

  CHECK_THROWS_AS(decompress_cpd(res, oracle::random_operand({3, 2, 2}, 2, rng)), ShapeError);
}

TEST_CASE("symmetric MLSVD keeps a symmetric core") {
  std::mt19937_64 rng(29);
  const Matrix u = oracle::gaussian(6, 2, rng);
  const auto t = to_full(KruskalOperand({u, u, u}));
  const auto res = compute_mlsvd_symmetric(t, MlsvdOptions{});
  CHECK(res.truncated_dims == Dims{2, 2, 2});
  CHECK(oracle::rel(res.reconstruct(), t) <= 1e-12);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(res.core({a, b, c}) == doctest::Approx(res.core({c, a, b})).epsilon(1e-12));
}

TEST_CASE("MLSVD errors") {
  CHECK_THROWS_AS(compute_mlsvd(DenseTensor({2, 2, 2}), 0.0), DegenerateInputError);
  std::mt19937_64 rng(30);
  const auto t = oracle::random_tensor({2, 2, 2}, rng);
  CHECK_THROWS_AS(compute_mlsvd(t, 1.0), ParameterError);
  CHECK_THROWS_AS(compute_mlsvd(t, -0.1), ParameterError);
}
