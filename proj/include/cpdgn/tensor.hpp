#pragma once

// Dense tensors, Kruskal operands and the multilinear primitives built on
// them.
//
// Layout conventions (fixed, every other module relies on them):
//  * DenseTensor is row-major: mode 0 is the slowest-varying index.
//  * Modes are 0-based in the C++ API.
//  * unfold(t, l) is an I_l x (prod_{k != l} I_k) matrix; column index runs
//    lexicographically over the remaining indices, earliest mode slowest.
//  * Factor matrices are Eigen column-major, so vec(W) (column stacking) is
//    the matrix storage itself.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cpdgn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Dims = std::vector<std::size_t>;

std::size_t product(std::span<const std::size_t> dims);

class DenseTensor {
 public:
  DenseTensor() = default;
  /// Zero tensor with the given dims.
  explicit DenseTensor(Dims dims);
  DenseTensor(Dims dims, std::vector<double> data);

  std::size_t order() const noexcept { return dims_.size(); }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t mode) const { return dims_.at(mode); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Row-major strides, in elements.
  Dims strides() const;
  std::size_t offset(std::span<const std::size_t> index) const;

  double& operator()(std::initializer_list<std::size_t> index);
  double operator()(std::initializer_list<std::size_t> index) const;
  double& at(std::span<const std::size_t> index) { return data_[offset(index)]; }
  double at(std::span<const std::size_t> index) const { return data_[offset(index)]; }

  DenseTensor& operator+=(const DenseTensor& other);
  DenseTensor& operator-=(const DenseTensor& other);
  DenseTensor& operator*=(double s);

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

DenseTensor operator+(DenseTensor a, const DenseTensor& b);
DenseTensor operator-(DenseTensor a, const DenseTensor& b);
DenseTensor operator*(double s, DenseTensor a);

/// Factor-matrix form (W_1, ..., W_L) . I of a sum of R rank-one terms.
struct KruskalOperand {
  std::vector<Matrix> factors;

  KruskalOperand() = default;
  explicit KruskalOperand(std::vector<Matrix> f);

  std::size_t order() const noexcept { return factors.size(); }
  std::size_t rank() const;
  Dims dims() const;
  /// Number of scalar parameters, R * sum(I_l).
  std::size_t num_params() const;

  /// Concatenated vec(W_1); ...; vec(W_L).
  Vector to_vector() const;
  /// Inverse of to_vector for the given dims and rank.
  static KruskalOperand from_vector(std::span<const double> w, const Dims& dims,
                                    std::size_t rank);
};

/// Throws ShapeError unless all factors share one column count R >= 1.
void validate(const KruskalOperand& k);

double inner(const DenseTensor& t, const DenseTensor& s);
double norm(const DenseTensor& t);

/// x_1 (x) x_2 (x) ... (x) x_L.
DenseTensor outer(std::span<const Vector> vectors);
DenseTensor outer(std::initializer_list<Vector> vectors);

/// Multiplies every mode l by mats[l]: (M_1, ..., M_L) . t.
DenseTensor multilinear_mult(std::span<const Matrix> mats, const DenseTensor& t);
/// Single-mode product M x_l t.
DenseTensor mode_mult(const DenseTensor& t, std::size_t mode, const Matrix& m);

DenseTensor to_full(const KruskalOperand& k);

/// Diagonal tensor with ones at (r, r, ..., r).
DenseTensor identity_tensor(std::size_t order, std::size_t rank);

Matrix unfold(const DenseTensor& t, std::size_t mode);
DenseTensor refold(const Matrix& m, const Dims& dims, std::size_t mode);

/// Kronecker product, kept separate from the tensor outer product.
Matrix kronecker(const Matrix& a, const Matrix& b);

/// Frobenius norms of the mode-`mode` hyperslices t_{i_mode = k}.
Vector hyperslice_norms(const DenseTensor& t, std::size_t mode);

}  // namespace cpdgn
