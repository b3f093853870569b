#pragma once

// Independent reference computations for the tests. Everything here is
// written with explicit index loops straight from the definitions and does
// not call the library kernels it is used to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "cpdgn/solver.hpp"
#include "cpdgn/tensor.hpp"

namespace oracle {

using cpdgn::DenseTensor;
using cpdgn::Dims;
using cpdgn::KruskalOperand;
using cpdgn::Matrix;
using cpdgn::Vector;

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (auto& v : m.reshaped()) v = normal(rng);
  return m;
}

inline KruskalOperand random_operand(const Dims& dims, std::size_t rank, std::mt19937_64& rng) {
  std::vector<Matrix> f;
  for (auto d : dims) f.push_back(gaussian(Eigen::Index(d), Eigen::Index(rank), rng));
  return KruskalOperand(std::move(f));
}

inline DenseTensor random_tensor(const Dims& dims, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  DenseTensor t(dims);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

/// Calls fn(index) for every multi-index in row-major order.
inline void for_each_index(const Dims& dims, const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> idx(dims.size(), 0);
  std::size_t total = 1;
  for (auto d : dims) total *= d;
  for (std::size_t n = 0; n < total; ++n) {
    fn(idx);
    for (std::size_t l = dims.size(); l-- > 0;) {
      if (++idx[l] < dims[l]) break;
      idx[l] = 0;
    }
  }
}

/// Sum over r of prod_l W_l(i_l, r), entry by entry.
inline DenseTensor full_by_loops(const KruskalOperand& k) {
  const Dims dims = k.dims();
  DenseTensor t(dims);
  std::size_t pos = 0;
  for_each_index(dims, [&](const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < Eigen::Index(k.rank()); ++r) {
      double p = 1.0;
      for (std::size_t l = 0; l < dims.size(); ++l) p *= k.factors[l](Eigen::Index(idx[l]), r);
      s += p;
    }
    t.data()[pos++] = s;
  });
  return t;
}

/// Column of parameter W_l(i, r) in the concatenated vec layout.
inline std::size_t param_index(const KruskalOperand& k, std::size_t l, std::size_t i, std::size_t r) {
  std::size_t off = 0;
  for (std::size_t m = 0; m < l; ++m) off += std::size_t(k.factors[m].size());
  return off + r * std::size_t(k.factors[l].rows()) + i;
}

/// Jacobian of f(w) = vec(T - T~), assembled entry by entry from
///   d f_{i_1..i_L} / d W_l(i, r) = -[i_l == i] prod_{m != l} W_m(i_m, r).
inline Matrix dense_jacobian(const KruskalOperand& k) {
  const Dims dims = k.dims();
  std::size_t rows = 1;
  for (auto d : dims) rows *= d;
  Matrix j = Matrix::Zero(Eigen::Index(rows), Eigen::Index(k.num_params()));
  std::size_t row = 0;
  for_each_index(dims, [&](const std::vector<std::size_t>& idx) {
    for (std::size_t l = 0; l < dims.size(); ++l) {
      for (std::size_t r = 0; r < k.rank(); ++r) {
        double p = -1.0;
        for (std::size_t m = 0; m < dims.size(); ++m) {
          if (m != l) p *= k.factors[m](Eigen::Index(idx[m]), Eigen::Index(r));
        }
        j(Eigen::Index(row), Eigen::Index(param_index(k, l, idx[l], r))) = p;
      }
    }
    ++row;
  });
  return j;
}

/// J^T J from the generalized block formulas:
///   H_{l'l''} block (r', r'') = prod_{l != l', l''} omega^{(l)}_{r'r''} w^{(l')}_{r''} (w^{(l'')}_{r'})^T
///   H_{l'l'}  block (r', r'') = prod_{l != l'} omega^{(l)}_{r'r''} I
/// with omega^{(l)}_{r'r''} = <w^{(l)}_{r'}, w^{(l)}_{r''}>.
inline Matrix appendix_gram(const KruskalOperand& k) {
  const std::size_t order = k.order(), rank = k.rank();
  auto omega = [&](std::size_t l, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < k.factors[l].rows(); ++i) {
      s += k.factors[l](i, Eigen::Index(a)) * k.factors[l](i, Eigen::Index(b));
    }
    return s;
  };
  const auto n = Eigen::Index(k.num_params());
  Matrix h = Matrix::Zero(n, n);
  for (std::size_t l1 = 0; l1 < order; ++l1) {
    for (std::size_t l2 = 0; l2 < order; ++l2) {
      for (std::size_t r1 = 0; r1 < rank; ++r1) {
        for (std::size_t r2 = 0; r2 < rank; ++r2) {
          double c = 1.0;
          for (std::size_t l = 0; l < order; ++l) {
            if (l != l1 && l != l2) c *= omega(l, r1, r2);
          }
          const auto rows1 = std::size_t(k.factors[l1].rows());
          const auto rows2 = std::size_t(k.factors[l2].rows());
          for (std::size_t i = 0; i < rows1; ++i) {
            for (std::size_t j = 0; j < rows2; ++j) {
              double v;
              if (l1 == l2) {
                v = i == j ? c : 0.0;
              } else {
                v = c * k.factors[l1](Eigen::Index(i), Eigen::Index(r2)) *
                    k.factors[l2](Eigen::Index(j), Eigen::Index(r1));
              }
              h(Eigen::Index(param_index(k, l1, i, r1)), Eigen::Index(param_index(k, l2, j, r2))) = v;
            }
          }
        }
      }
    }
  }
  return h;
}

/// Scaling directions of a CPD (w_r^(a) up, w_r^(b) down) span an
/// R (L - 1) dimensional null space of J, so J^T J is never full rank.
/// Returns the orthogonal projector onto the complement of that null space.
inline Matrix gauge_free_projector(const KruskalOperand& k) {
  const auto n = Eigen::Index(k.num_params());
  Matrix null = Matrix::Zero(n, Eigen::Index(k.rank() * (k.order() - 1)));
  Eigen::Index col = 0;
  for (std::size_t r = 0; r < k.rank(); ++r) {
    for (std::size_t l = 1; l < k.order(); ++l, ++col) {
      for (Eigen::Index i = 0; i < k.factors[0].rows(); ++i)
        null(Eigen::Index(param_index(k, 0, std::size_t(i), r)), col) = k.factors[0](i, Eigen::Index(r));
      for (Eigen::Index i = 0; i < k.factors[l].rows(); ++i)
        null(Eigen::Index(param_index(k, l, std::size_t(i), r)), col) = -k.factors[l](i, Eigen::Index(r));
    }
  }
  const Eigen::HouseholderQR<Matrix> qr(null);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, null.cols());
  return Matrix::Identity(n, n) - q * q.transpose();
}

/// -D^{-1/2} (D^{-1/2} H D^{-1/2})^+ D^{-1/2} g, the limit of the solution of
/// (H + mu D) x = -g as mu -> 0.
inline Vector weighted_pinv_step(const Matrix& h, const Vector& d, const Vector& g) {
  const Vector dh = d.cwiseSqrt().cwiseInverse();
  const Matrix scaled = dh.asDiagonal() * h * dh.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(scaled);
  Vector inv = es.eigenvalues();
  const double top = inv.maxCoeff();
  for (auto& v : inv) v = v > 1e-10 * top ? 1.0 / v : 0.0;
  return -dh.cwiseProduct(es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() *
                          dh.cwiseProduct(g));
}

/// 0.5 ||T - T~||^2 with T~ from loops.
inline double objective(const DenseTensor& t, const KruskalOperand& k) {
  const DenseTensor m = full_by_loops(k);
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = t.data()[i] - m.data()[i];
    s += d * d;
  }
  return 0.5 * s;
}

/// Central differences of the objective in every parameter.
inline Vector fd_gradient(const DenseTensor& t, const KruskalOperand& k, double h) {
  const Vector w = k.to_vector();
  Vector g(w.size());
  for (Eigen::Index p = 0; p < w.size(); ++p) {
    Vector wp = w, wm = w;
    wp[p] += h;
    wm[p] -= h;
    const auto kp = KruskalOperand::from_vector({wp.data(), std::size_t(wp.size())}, k.dims(), k.rank());
    const auto km = KruskalOperand::from_vector({wm.data(), std::size_t(wm.size())}, k.dims(), k.rank());
    g[p] = (oracle::objective(t, kp) - oracle::objective(t, km)) / (2.0 * h);
  }
  return g;
}

inline double rel(const Vector& a, const Vector& b) {
  const double den = b.norm();
  return den > 0.0 ? (a - b).norm() / den : a.norm();
}

inline double rel(const Matrix& a, const Matrix& b) {
  const double den = b.norm();
  return den > 0.0 ? (a - b).norm() / den : a.norm();
}

inline double rel(const DenseTensor& a, const DenseTensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    den += b.data()[i] * b.data()[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace oracle
