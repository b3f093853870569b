// Block structure of J^T J and the conjugate gradient solver built on it.
//
// Block (a, b) of J^T J, a != b, maps V_b to W_a (pi(a, b) .* (V_b^T W_b));
// block (a, a) maps V_a to V_a pi(a). Storage is L(L+3)/2 matrices of size
// R x R, independent of the tensor dims.

#include <algorithm>
#include <cmath>
#include <string>

#include "cpdgn/errors.hpp"
#include "cpdgn/solver.hpp"

namespace cpdgn {

namespace {

std::size_t pair_index(std::size_t a, std::size_t b, std::size_t order) {
  return a * order - a * (a + 1) / 2 + (b - a - 1);
}

void check_vector(const KruskalOperand& k, const Vector& v, const char* op) {
  if (static_cast<std::size_t>(v.size()) != k.num_params()) {
    throw ShapeError(std::string(op) + ": vector length " + std::to_string(v.size()) +
                     " does not match R*sum(I) = " + std::to_string(k.num_params()));
  }
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

GramCache::GramCache(const KruskalOperand& k) {
  validate(k);
  const std::size_t order = k.order();
  rank_ = k.rank();
  const auto r = static_cast<Eigen::Index>(rank_);
  for (const auto& f : k.factors) grams_.push_back(f.transpose() * f);

  for (std::size_t l = 0; l < order; ++l) {
    Matrix h = Matrix::Ones(r, r);
    for (std::size_t m = 0; m < order; ++m)
      if (m != l) h = h.cwiseProduct(grams_[m]);
    diag_.push_back(std::move(h));
  }
  for (std::size_t a = 0; a < order; ++a) {
    for (std::size_t b = a + 1; b < order; ++b) {
      Matrix h = Matrix::Ones(r, r);
      for (std::size_t m = 0; m < order; ++m)
        if (m != a && m != b) h = h.cwiseProduct(grams_[m]);
      pairs_.push_back(std::move(h));
    }
  }
}

const Matrix& GramCache::pi(std::size_t a, std::size_t b) const {
  if (a == b) return pi(a);
  if (a > b) std::swap(a, b);
  if (b >= order()) throw RangeError("GramCache::pi: mode out of range");
  return pairs_[pair_index(a, b, order())];
}

std::size_t GramCache::stored_values() const {
  return (grams_.size() + diag_.size() + pairs_.size()) * rank_ * rank_;
}

GramCache gram_cache(const KruskalOperand& k) { return GramCache(k); }

Vector gram_matvec(const GramCache& cache, const KruskalOperand& k, const Vector& v) {
  check_vector(k, v, "gram_matvec");
  const std::size_t order = k.order();
  const auto r = static_cast<Eigen::Index>(k.rank());

  std::vector<Eigen::Map<const Matrix>> blocks;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& f : k.factors) {
    blocks.emplace_back(v.data() + off, f.rows(), r);
    offsets.push_back(off);
    off += f.size();
  }
  // C_b = V_b^T W_b, shared by every off-diagonal block in column b.
  std::vector<Matrix> cross;
  for (std::size_t b = 0; b < order; ++b) cross.push_back(blocks[b].transpose() * k.factors[b]);

  Vector out(v.size());
  for (std::size_t a = 0; a < order; ++a) {
    Matrix acc = blocks[a] * cache.pi(a);
    Matrix mix = Matrix::Zero(r, r);
    for (std::size_t b = 0; b < order; ++b) {
      if (b != a) mix += cache.pi(a, b).cwiseProduct(cross[b]);
    }
    acc.noalias() += k.factors[a] * mix;
    out.segment(offsets[a], acc.size()) = acc.reshaped();
  }
  return out;
}

Vector jtj_diagonal(const GramCache& cache, const KruskalOperand& k) {
  Vector d(static_cast<Eigen::Index>(k.num_params()));
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < k.order(); ++l) {
    const auto rows = k.factors[l].rows();
    for (Eigen::Index r = 0; r < k.factors[l].cols(); ++r) {
      d.segment(off, rows).setConstant(cache.pi(l)(r, r));
      off += rows;
    }
  }
  return d;
}

Vector regularizer_diag(const GramCache& cache, const KruskalOperand& k) {
  const std::size_t order = k.order();
  const auto rank = static_cast<Eigen::Index>(k.rank());
  // Column 1-norms of every factor.
  std::vector<Vector> col_l1;
  for (const auto& f : k.factors) col_l1.push_back(f.cwiseAbs().colwise().sum().transpose());

  Vector d(static_cast<Eigen::Index>(k.num_params()));
  Eigen::Index off = 0;
  for (std::size_t a = 0; a < order; ++a) {
    const Matrix& w = k.factors[a];
    const Matrix abs_w = w.cwiseAbs();
    for (Eigen::Index r = 0; r < rank; ++r) {
      const double diag = cache.pi(a)(r, r);
      const double same_mode = cache.pi(a).row(r).cwiseAbs().sum() - std::abs(diag);
      // sum_b sum_{r'} |pi(a,b)(r,r')| * ||w_b[:, r]||_1 is the same for all
      // rows i up to the factor |W_a(i, r')|.
      Vector weights = Vector::Zero(rank);
      for (std::size_t b = 0; b < order; ++b) {
        if (b != a) weights += cache.pi(a, b).row(r).cwiseAbs().transpose() * col_l1[b][r];
      }
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double off_sum = same_mode + abs_w.row(i).dot(weights);
        d[off + r * w.rows() + i] = std::max(diag, off_sum);
      }
    }
    off += w.size();
  }
  const double floor = 1e-12 * std::max(d.maxCoeff(), 0.0);
  const double tiny = std::numeric_limits<double>::min();
  for (auto& v : d) v = std::max({v, floor, tiny});
  return d;
}

CgResult cg_solve(const GramCache& cache, const KruskalOperand& k, double mu, const Vector& d,
                  const Vector& b, const CgOptions& opts) {
  check_vector(k, b, "cg_solve");
  check_vector(k, d, "cg_solve");
  if (!(mu > 0.0)) throw ParameterError("cg_solve: mu must be positive");

  CgResult res;
  res.step = Vector::Zero(b.size());
  const double b_norm = b.norm();
  if (!std::isfinite(b_norm)) throw NumericalError("cg_solve: non-finite right-hand side", 0);
  if (b_norm == 0.0) return res;

  const Vector precond = (jtj_diagonal(cache, k) + mu * d).cwiseInverse();
  auto apply = [&](const Vector& p) -> Vector {
    return gram_matvec(cache, k, p) + mu * d.cwiseProduct(p);
  };

  Vector r = b;
  Vector z = precond.cwiseProduct(r);
  Vector p = z;
  double rz = r.dot(z);
  res.rel_residual = 1.0;
  while (res.iters < opts.max_iters) {
    const Vector q = apply(p);
    const double pq = p.dot(q);
    if (!std::isfinite(pq) || pq <= 0.0) {
      if (!std::isfinite(pq)) throw NumericalError("cg_solve: non-finite curvature", res.iters);
      break;
    }
    const double alpha = rz / pq;
    res.step += alpha * p;
    r -= alpha * q;
    ++res.iters;
    res.rel_residual = r.norm() / b_norm;
    if (!std::isfinite(res.rel_residual) || !all_finite(res.step)) {
      throw NumericalError("cg_solve: non-finite iterate", res.iters);
    }
    if (res.rel_residual <= opts.rel_tol) break;
    z = precond.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return res;
}

}  // namespace cpdgn
