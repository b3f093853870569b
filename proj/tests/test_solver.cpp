#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "cpdgn/errors.hpp"
#include "cpdgn/solver.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cpdgn;

namespace {

Vector vec_of(const DenseTensor& t) {
  Vector v(Eigen::Index(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v[Eigen::Index(i)] = t.data()[i];
  return v;
}

KruskalOperand orthonormal_operand(const Dims& dims, std::size_t rank, std::mt19937_64& rng) {
  std::vector<Matrix> f;
  for (auto d : dims) {
    Eigen::HouseholderQR<Matrix> qr(oracle::gaussian(Eigen::Index(d), Eigen::Index(rank), rng));
    f.push_back(qr.householderQ() * Matrix::Identity(Eigen::Index(d), Eigen::Index(rank)));
  }
  return KruskalOperand(std::move(f));
}

Vector dense_solve(const Matrix& a, const Vector& b) { return a.ldlt().solve(b); }

}  // namespace

TEST_CASE("residual") {
  std::mt19937_64 rng(31);
  const auto k = oracle::random_operand({3, 4, 2}, 2, rng);
  const auto t = to_full(k);
  CHECK(residual(t, k).norm() <= 1e-14 * norm(t));

  KruskalOperand zero(std::vector<Matrix>{Matrix::Zero(3, 2), Matrix::Zero(4, 2), Matrix::Zero(2, 2)});
  CHECK(residual(t, zero) == vec_of(t));

  const auto other = oracle::random_tensor({3, 4, 2}, rng);
  const Vector f = residual(other, k);
  const auto loops = oracle::full_by_loops(k);
  for (std::size_t i = 0; i < other.size(); ++i) {
    CHECK(f[Eigen::Index(i)] == doctest::Approx(other.data()[i] - loops.data()[i]).epsilon(1e-13));
  }
  CHECK(0.5 * f.squaredNorm() == doctest::Approx(objective(other, k)).epsilon(1e-14));
  CHECK_THROWS_AS(residual(oracle::random_tensor({3, 4, 3}, rng), k), ShapeError);
}

TEST_CASE("gradient matches the dense Jacobian and finite differences") {
  std::mt19937_64 rng(32);
  for (int s = 0; s < 10; ++s) {
    const auto k = oracle::random_operand({2, 2, 2}, 2, rng);
    const auto t = oracle::random_tensor({2, 2, 2}, rng);
    const Matrix j = oracle::dense_jacobian(k);
    const Vector expect = j.transpose() * residual(t, k);
    CHECK(oracle::rel(gradient(t, k), expect) <= 1e-12);
  }
  for (int s = 0; s < 10; ++s) {
    const auto k = oracle::random_operand({3, 3, 3}, 2, rng);
    const auto t = oracle::random_tensor({3, 3, 3}, rng);
    const double scale = k.to_vector().cwiseAbs().maxCoeff();
    CHECK(oracle::rel(gradient(t, k), oracle::fd_gradient(t, k, 1e-6 * scale)) <= 1e-5);
  }
  const auto k4 = oracle::random_operand({2, 3, 2, 2}, 2, rng);
  const auto t4 = oracle::random_tensor({2, 3, 2, 2}, rng);
  CHECK(oracle::rel(gradient(t4, k4), Vector(oracle::dense_jacobian(k4).transpose() * residual(t4, k4))) <=
        1e-12);
}

TEST_CASE("gradient vanishes at an exact decomposition") {
  std::mt19937_64 rng(33);
  const auto k = oracle::random_operand({4, 3, 5}, 3, rng);
  const auto t = to_full(k);
  CHECK(gradient(t, k).norm() <= 1e-10 * norm(t) * norm(t));
}

TEST_CASE("Gram cache") {
  std::mt19937_64 rng(34);
  const auto q = orthonormal_operand({4, 5, 6}, 3, rng);
  const auto cq = gram_cache(q);
  const Matrix eye = Matrix::Identity(3, 3);
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK((cq.pi(a) - eye).norm() <= 1e-12);
    for (std::size_t b = 0; b < 3; ++b) CHECK((cq.pi(a, b) - eye).norm() <= 1e-12);
  }

  const auto one = oracle::random_operand({3, 4, 5}, 1, rng);
  const auto c1 = gram_cache(one);
  const double n0 = one.factors[0].squaredNorm(), n1 = one.factors[1].squaredNorm(),
               n2 = one.factors[2].squaredNorm();
  CHECK(c1.pi(0)(0, 0) == doctest::Approx(n1 * n2));
  CHECK(c1.pi(0, 1)(0, 0) == doctest::Approx(n2));
  CHECK(c1.pi(1, 2)(0, 0) == doctest::Approx(n0));

  const auto k = oracle::random_operand({4, 3, 5}, 3, rng);
  const auto c = gram_cache(k);
  for (int r1 = 0; r1 < 3; ++r1) {
    for (int r2 = 0; r2 < 3; ++r2) {
      double g[3] = {0, 0, 0};
      for (int l = 0; l < 3; ++l)
        for (Eigen::Index i = 0; i < k.factors[l].rows(); ++i) g[l] += k.factors[l](i, r1) * k.factors[l](i, r2);
      CHECK(c.pi(0)(r1, r2) == doctest::Approx(g[1] * g[2]).epsilon(1e-12));
      CHECK(c.pi(1)(r1, r2) == doctest::Approx(g[0] * g[2]).epsilon(1e-12));
      CHECK(c.pi(0, 1)(r1, r2) == doctest::Approx(g[2]).epsilon(1e-12));
      CHECK(c.pi(2, 0)(r1, r2) == doctest::Approx(g[1]).epsilon(1e-12));
    }
  }
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK((c.pi(a) - c.pi(a).transpose()).norm() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(c.pi(a)).eigenvalues().minCoeff() >= -1e-10);
  }
  // Order 3: three grams, three diagonal and three pair tables.
  CHECK(c.stored_values() == 9 * 9);
  CHECK(gram_cache(oracle::random_operand({2, 2, 2, 2}, 2, rng)).stored_values() == (4 + 4 + 6) * 4);
}

TEST_CASE("gram_matvec equals dense J^T J v") {
  std::mt19937_64 rng(35);
  const auto k0 = oracle::random_operand({2, 2, 2}, 2, rng);
  CHECK(gram_matvec(gram_cache(k0), k0, Vector::Zero(12)).isZero());

  for (int s = 0; s < 10; ++s) {
    const Dims dims{2 + std::size_t(s % 3), 3, 2 + std::size_t(s % 2)};
    const auto k = oracle::random_operand(dims, 1 + s % 3, rng);
    const Matrix j = oracle::dense_jacobian(k);
    const Vector v = oracle::gaussian(Eigen::Index(k.num_params()), 1, rng);
    const Vector expect = j.transpose() * (j * v);
    CHECK(oracle::rel(gram_matvec(gram_cache(k), k, v), expect) <= 1e-12);
    CHECK(oracle::rel(Matrix(oracle::appendix_gram(k)), Matrix(j.transpose() * j)) <= 1e-12);
  }
  for (std::size_t r = 1; r <= 3; ++r) {
    const auto k = oracle::random_operand({2, 2, 2, 2}, r, rng);
    const Vector v = oracle::gaussian(Eigen::Index(k.num_params()), 1, rng);
    CHECK(oracle::rel(gram_matvec(gram_cache(k), k, v), Vector(oracle::appendix_gram(k) * v)) <= 1e-12);
    const Matrix j = oracle::dense_jacobian(k);
    CHECK(oracle::rel(gram_matvec(gram_cache(k), k, v), Vector(j.transpose() * (j * v))) <= 1e-12);
  }
  CHECK_THROWS_AS(gram_matvec(gram_cache(k0), k0, Vector::Zero(5)), ShapeError);
}

TEST_CASE("jtj_diagonal") {
  std::mt19937_64 rng(36);
  const auto k = oracle::random_operand({3, 2, 4}, 2, rng);
  const Matrix j = oracle::dense_jacobian(k);
  const Vector d = jtj_diagonal(gram_cache(k), k);
  CHECK(oracle::rel(d, Vector((j.transpose() * j).diagonal())) <= 1e-13);
}

TEST_CASE("regularizer makes J^T J + D diagonally dominant") {
  std::mt19937_64 rng(37);
  for (int s = 0; s < 10; ++s) {
    const auto k = oracle::random_operand({2, 2, 2}, 2, rng);
    const Matrix h = oracle::appendix_gram(k);
    const Vector d = regularizer_diag(gram_cache(k), k);
    CHECK(d.minCoeff() > 0.0);
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const double off = h.row(i).cwiseAbs().sum() - std::abs(h(i, i));
      CHECK(h(i, i) + d[i] >= off);
    }
  }
  const auto q = orthonormal_operand({3, 3, 3}, 1, rng);
  const Vector dq = regularizer_diag(gram_cache(q), q);
  CHECK(dq.minCoeff() >= 1e-12 * dq.maxCoeff());
  CHECK(dq.minCoeff() > 0.0);
}

TEST_CASE("scaling every factor by 2 scales the diagonal and D by 16") {
  std::mt19937_64 rng(38);
  const auto k = oracle::random_operand({3, 4, 2}, 2, rng);
  auto k2 = k;
  for (auto& f : k2.factors) f *= 2.0;
  const Vector d1 = jtj_diagonal(gram_cache(k), k), d2 = jtj_diagonal(gram_cache(k2), k2);
  CHECK(oracle::rel(d2, Vector(16.0 * d1)) <= 1e-14);
  const Vector r1 = regularizer_diag(gram_cache(k), k), r2 = regularizer_diag(gram_cache(k2), k2);
  CHECK(oracle::rel(r2, Vector(16.0 * r1)) <= 1e-14);
}

TEST_CASE("cg_solve") {
  std::mt19937_64 rng(39);
  const auto k = oracle::random_operand({2, 2, 2}, 2, rng);
  const auto c = gram_cache(k);
  const Vector d = regularizer_diag(c, k);

  const auto zero = cg_solve(c, k, 1.0, d, Vector::Zero(12), {});
  CHECK(zero.step.isZero());
  CHECK(zero.iters == 0);

  const auto t = oracle::random_tensor({2, 2, 2}, rng);
  const Vector b = -gradient(t, k);
  const Matrix a = oracle::appendix_gram(k) + 0.3 * Matrix(d.asDiagonal());
  const auto tight = cg_solve(c, k, 0.3, d, b, {200, 1e-14});
  CHECK(oracle::rel(tight.step, dense_solve(a, b)) <= 1e-8);

  const auto loose = cg_solve(c, k, 0.3, d, b, {2, 1e-14});
  CHECK(loose.iters == 2);
  CHECK_THROWS_AS(cg_solve(c, k, 0.0, d, b, {}), ParameterError);

  // R = 1 with orthonormal columns and a large mu.
  const auto q = orthonormal_operand({3, 4, 5}, 1, rng);
  const auto cq = gram_cache(q);
  const Vector dq = regularizer_diag(cq, q);
  const auto tq = oracle::random_tensor({3, 4, 5}, rng);
  const Vector g = gradient(tq, q);
  const double mu = 1e6;
  const auto big = cg_solve(cq, q, mu, dq, -g, {100, 1e-14});
  const Vector limit = -(1.0 / mu) * dq.cwiseInverse().cwiseProduct(g);
  CHECK(oracle::rel(big.step, limit) <= 1e-2);
}

TEST_CASE("regularized normal matrix is positive definite") {
  std::mt19937_64 rng(40);
  for (int s = 0; s < 10; ++s) {
    const auto k = oracle::random_operand({3, 2, 3}, 2, rng);
    const Matrix h = oracle::appendix_gram(k);
    const Vector d = regularizer_diag(gram_cache(k), k);
    for (double mu : {1e-6, 1.0, 1e6}) {
      const Matrix a = h + mu * Matrix(d.asDiagonal());
      CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues().minCoeff() > 0.0);
    }
  }
}

TEST_CASE("small mu approaches the unregularized step") {
  std::mt19937_64 rng(41);
  for (int s = 0; s < 5; ++s) {
    const auto k = oracle::random_operand({3, 3, 3}, 2, rng);
    const auto t = oracle::random_tensor({3, 3, 3}, rng);
    const Matrix h = oracle::appendix_gram(k);
    const Vector d = regularizer_diag(gram_cache(k), k);
    const Vector g = gradient(t, k);
    // J^T J has exactly the R (L - 1) scaling directions as its null space.
    const Matrix p = oracle::gauge_free_projector(k);
    CHECK((h * (Matrix::Identity(p.rows(), p.cols()) - p)).norm() <= 1e-12 * h.norm());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(p * h * p);
    CHECK(eig.eigenvalues()[4] > 1e-8 * eig.eigenvalues().maxCoeff());

    const Vector ref = oracle::weighted_pinv_step(h, d, g);
    const auto step = cg_solve(gram_cache(k), k, 1e-12, d, -g, {500, 1e-15});
    CHECK(oracle::rel(Vector(p * step.step), Vector(p * ref)) <= 1e-6);
    const Matrix j = oracle::dense_jacobian(k);
    CHECK(oracle::rel(Vector(j * step.step), Vector(j * ref)) <= 1e-6);
  }
}

TEST_CASE("gain ratio and mu update") {
  CHECK(gain_ratio(1.0, 0.25, 0.25) == doctest::Approx(1.0));
  CHECK(gain_ratio(1.0, 1.0, 0.25) == 0.0);
  CHECK(gain_ratio(1.0, 0.5, 0.25) == doctest::Approx(2.0 / 3.0));
  CHECK(gain_ratio(1.0, 0.9, 1.0) == kExactModelGain);

  CHECK(update_mu(1.0, 0.5) == 0.5);
  CHECK(update_mu(1.0, 0.95) == 1.5);
  CHECK(update_mu(1.0, 0.8) == 1.0);
  CHECK(update_mu(1.0, kExactModelGain) == 1.5);
  CHECK(update_mu(1.0, 0.95, {}, 0.0, 1.2) == 1.2);
  CHECK(update_mu(1.0, 0.1, {}, 0.9, 2.0) == 0.9);
}

TEST_CASE("options validation") {
  SolverOptions o;
  CHECK_NOTHROW(o.validate());
  auto bad = o;
  bad.rank = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = o;
  bad.gain_low = 0.95;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = o;
  bad.mu_shrink = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = o;
  bad.mu_grow = 0.9;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = o;
  bad.cg_rel_tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("enforce_symmetry") {
  std::mt19937_64 rng(42);
  const Matrix a = oracle::gaussian(3, 2, rng), b = oracle::gaussian(3, 2, rng), c = oracle::gaussian(3, 2, rng);
  const auto sym = enforce_symmetry(KruskalOperand({a, a, a}));
  for (const auto& f : sym.factors) CHECK(f == a);
  const auto mean = enforce_symmetry(KruskalOperand({a, b, c}));
  for (const auto& f : mean.factors) CHECK(oracle::rel(f, Matrix((a + b + c) / 3.0)) <= 1e-15);
  CHECK_THROWS_AS(enforce_symmetry(KruskalOperand({a, oracle::gaussian(4, 2, rng), c})), ShapeError);
}

TEST_CASE("termination names round trip") {
  for (auto t : {Termination::RelativeError, Termination::StepNorm, Termination::NoImprovement,
                 Termination::MaxIterations}) {
    CHECK(termination_from_string(to_string(t)) == t);
  }
  CHECK_THROWS_AS(termination_from_string("bogus"), ParameterError);
}

TEST_CASE("solve_cpd on rank-1 tensors") {
  std::mt19937_64 rng(43);
  for (int s = 0; s < 5; ++s) {
    const auto t = to_full(oracle::random_operand({5, 4, 6}, 1, rng));
    SolverOptions o;
    o.rank = 1;
    o.seed = std::uint64_t(s);
    const auto rep = solve_cpd(t, o);
    CHECK(rep.final_rel_error <= 1e-8);
    CHECK(rep.operand.dims() == t.dims());
  }
}

TEST_CASE("solve_cpd recovers an exact rank-3 tensor") {
  std::mt19937_64 rng(44);
  const auto t = to_full(oracle::random_operand({8, 7, 6}, 3, rng));
  SolverOptions o;
  o.rank = 3;
  const auto rep = solve_cpd_multistart(t, o, 4);
  CHECK(rep.best.final_rel_error <= 1e-8);
  CHECK(rep.best.compressed_dims == Dims{3, 3, 3});
  CHECK(oracle::rel(to_full(rep.best.operand), t) == doctest::Approx(rep.best.final_rel_error).epsilon(1e-6));

  SolverOptions raw = o;
  raw.compress = false;
  const auto plain = solve_cpd_multistart(t, raw, 4);
  CHECK(plain.best.final_rel_error <= 1e-8);
  CHECK(plain.best.compressed_dims == t.dims());
}

TEST_CASE("report invariants and descent on accepted steps") {
  std::mt19937_64 rng(45);
  const auto t = oracle::random_tensor({4, 4, 4}, rng);
  SolverOptions o;
  o.rank = 3;
  o.cg_max_iters = 200;
  o.cg_rel_tol = 1e-10;
  o.max_outer_iters = 60;
  const auto rep = solve_cpd(t, o);
  double last = rep.initial_rel_error;
  for (const auto& it : rep.trace) {
    CHECK(std::isfinite(it.rel_error));
    CHECK(it.rel_error >= 0.0);
    if (it.accepted) {
      CHECK(it.grad_dot_step < 0.0);
      CHECK(it.rel_error <= last);
      last = it.rel_error;
    }
  }
  CHECK(rep.trace.size() <= 60);
}

TEST_CASE("solve_cpd_from and symmetric solves") {
  std::mt19937_64 rng(46);
  const Matrix u = oracle::gaussian(5, 2, rng);
  const auto t = to_full(KruskalOperand({u, u, u}));
  SolverOptions o;
  o.rank = 2;
  o.symmetric = true;
  const auto rep = solve_cpd_multistart(t, o, 4);
  CHECK(rep.best.final_rel_error <= 1e-6);
  const auto full = to_full(rep.best.operand);
  const double sc = norm(full);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b)
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(std::abs(full({a, b, c}) - full({b, c, a})) <= 1e-8 * sc);
        CHECK(std::abs(full({a, b, c}) - full({b, a, c})) <= 1e-8 * sc);
      }

  const auto k = oracle::random_operand({4, 3, 5}, 2, rng);
  auto init = k;
  for (auto& f : init.factors) f += 0.05 * oracle::gaussian(f.rows(), f.cols(), rng);
  SolverOptions p;
  p.rank = 2;
  const auto from = solve_cpd_from(to_full(k), init, p);
  CHECK(from.final_rel_error <= 1e-8);
  CHECK(from.initial_operand.factors[0] == init.factors[0]);
}

TEST_CASE("solver input errors") {
  SolverOptions o;
  o.rank = 2;
  CHECK_THROWS_AS(solve_cpd(DenseTensor({3, 3, 3}), o), DegenerateInputError);
  std::mt19937_64 rng(47);
  const auto t = oracle::random_tensor({3, 3, 3}, rng);
  CHECK_THROWS_AS(solve_cpd_multistart(t, o, 0), ParameterError);
  CHECK_THROWS_AS(solve_cpd_from(t, oracle::random_operand({3, 3, 2}, 2, rng), o), ShapeError);
}

TEST_CASE("multistart is deterministic and independent of the thread count") {
  std::mt19937_64 rng(48);
  const auto t = oracle::random_tensor({5, 5, 5}, rng);
  SolverOptions o;
  o.rank = 3;
  o.seed = 99;
  o.max_outer_iters = 30;
  const auto a = solve_cpd_multistart(t, o, 5);
  const auto b = solve_cpd_multistart(t, o, 5);
  CHECK(a.best_index == b.best_index);
  CHECK(a.final_errors == b.final_errors);
  CHECK(a.best.trace == b.best.trace);
  CHECK(a.seeds == b.seeds);
  CHECK(a.seeds[0] == restart_seed(99, 0));
  CHECK(restart_seed(99, 0) != restart_seed(99, 1));
  CHECK(restart_seed(99, 0) != restart_seed(100, 0));
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.best.final_rel_error <= a.final_errors[i]);

  const auto single = solve_cpd(t, [&] {
    auto s = o;
    s.seed = a.seeds[a.best_index];
    return s;
  }());
  CHECK(single.trace == a.best.trace);
}
