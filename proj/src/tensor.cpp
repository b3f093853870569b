#include "cpdgn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "cpdgn/errors.hpp"
#include "cpdgn/kernels.hpp"

namespace cpdgn {

namespace {

std::string dims_string(const Dims& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

void require_same_dims(const DenseTensor& a, const DenseTensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": dims " + dims_string(a.dims()) + " vs " +
                     dims_string(b.dims()));
  }
}

void validate_dims(const Dims& dims) {
  if (dims.empty()) throw ShapeError("tensor order must be at least 1");
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_string(dims));
  }
}

}  // namespace

std::size_t product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(Dims dims) : dims_(std::move(dims)) {
  validate_dims(dims_);
  data_.assign(product(dims_), 0.0);
}

DenseTensor::DenseTensor(Dims dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  validate_dims(dims_);
  if (data_.size() != product(dims_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match dims " + dims_string(dims_));
  }
}

Dims DenseTensor::strides() const {
  Dims s(dims_.size(), 1);
  for (std::size_t l = dims_.size(); l-- > 1;) s[l - 1] = s[l] * dims_[l];
  return s;
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != dims_.size()) throw ShapeError("index order mismatch");
  std::size_t off = 0;
  for (std::size_t l = 0; l < dims_.size(); ++l) {
    if (index[l] >= dims_[l]) throw RangeError("tensor index out of range");
    off = off * dims_[l] + index[l];
  }
  return off;
}

double& DenseTensor::operator()(std::initializer_list<std::size_t> index) {
  return data_[offset(std::span(index.begin(), index.size()))];
}

double DenseTensor::operator()(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span(index.begin(), index.size()))];
}

DenseTensor& DenseTensor::operator+=(const DenseTensor& other) {
  require_same_dims(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

DenseTensor& DenseTensor::operator-=(const DenseTensor& other) {
  require_same_dims(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

DenseTensor& DenseTensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }
DenseTensor operator*(double s, DenseTensor a) { return a *= s; }

KruskalOperand::KruskalOperand(std::vector<Matrix> f) : factors(std::move(f)) {
  validate(*this);
}

std::size_t KruskalOperand::rank() const {
  return factors.empty() ? 0 : static_cast<std::size_t>(factors.front().cols());
}

Dims KruskalOperand::dims() const {
  Dims d;
  d.reserve(factors.size());
  for (const auto& f : factors) d.push_back(static_cast<std::size_t>(f.rows()));
  return d;
}

std::size_t KruskalOperand::num_params() const {
  std::size_t n = 0;
  for (const auto& f : factors) n += static_cast<std::size_t>(f.size());
  return n;
}

Vector KruskalOperand::to_vector() const {
  Vector w(static_cast<Eigen::Index>(num_params()));
  Eigen::Index off = 0;
  for (const auto& f : factors) {
    w.segment(off, f.size()) = f.reshaped();
    off += f.size();
  }
  return w;
}

KruskalOperand KruskalOperand::from_vector(std::span<const double> w, const Dims& dims,
                                           std::size_t rank) {
  std::size_t expected = 0;
  for (auto d : dims) expected += d * rank;
  if (w.size() != expected) {
    throw ShapeError("parameter vector length " + std::to_string(w.size()) +
                     " does not match R*sum(I) = " + std::to_string(expected));
  }
  std::vector<Matrix> f;
  f.reserve(dims.size());
  std::size_t off = 0;
  for (auto d : dims) {
    f.emplace_back(Eigen::Map<const Matrix>(w.data() + off, static_cast<Eigen::Index>(d),
                                            static_cast<Eigen::Index>(rank)));
    off += d * rank;
  }
  return KruskalOperand(std::move(f));
}

void validate(const KruskalOperand& k) {
  if (k.factors.empty()) throw ShapeError("Kruskal operand has no factors");
  const auto r = k.factors.front().cols();
  if (r < 1) throw ShapeError("Kruskal operand rank must be at least 1");
  for (const auto& f : k.factors) {
    if (f.cols() != r) throw ShapeError("Kruskal factors disagree on the rank");
    if (f.rows() < 1) throw ShapeError("Kruskal factor with zero rows");
  }
}

double inner(const DenseTensor& t, const DenseTensor& s) {
  require_same_dims(t, s, "inner");
  const auto a = t.data();
  const auto b = s.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const DenseTensor& t) { return std::sqrt(inner(t, t)); }

DenseTensor outer(std::span<const Vector> vectors) {
  if (vectors.empty()) throw ShapeError("outer: need at least one vector");
  Dims dims;
  for (const auto& v : vectors) {
    if (v.size() == 0) throw ShapeError("outer: empty vector");
    dims.push_back(static_cast<std::size_t>(v.size()));
  }
  DenseTensor out(dims);
  auto data = out.data();
  // Row-major fill: data = v_0 (x) (v_1 (x) (... )).
  data[0] = 1.0;
  std::size_t filled = 1;
  for (std::size_t l = vectors.size(); l-- > 0;) {
    const auto& v = vectors[l];
    const auto n = static_cast<std::size_t>(v.size());
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t j = 0; j < filled; ++j) data[i * filled + j] = v[static_cast<Eigen::Index>(i)] * data[j];
    }
    filled *= n;
  }
  return out;
}

DenseTensor outer(std::initializer_list<Vector> vectors) {
  return outer(std::span<const Vector>(vectors.begin(), vectors.size()));
}

DenseTensor mode_mult(const DenseTensor& t, std::size_t mode, const Matrix& m) {
  if (mode >= t.order()) throw RangeError("mode_mult: mode out of range");
  if (static_cast<std::size_t>(m.cols()) != t.dim(mode)) {
    throw ShapeError("mode_mult: matrix has " + std::to_string(m.cols()) +
                     " columns, tensor mode " + std::to_string(mode) + " has dim " +
                     std::to_string(t.dim(mode)));
  }
  return kernels::mode_mult(t, mode, m);
}

DenseTensor multilinear_mult(std::span<const Matrix> mats, const DenseTensor& t) {
  if (mats.size() != t.order()) {
    throw ShapeError("multilinear_mult: " + std::to_string(mats.size()) +
                     " matrices for a tensor of order " + std::to_string(t.order()));
  }
  DenseTensor out = t;
  for (std::size_t l = 0; l < mats.size(); ++l) out = mode_mult(out, l, mats[l]);
  return out;
}

DenseTensor to_full(const KruskalOperand& k) {
  validate(k);
  return kernels::kruskal_full(k.factors);
}

DenseTensor identity_tensor(std::size_t order, std::size_t rank) {
  DenseTensor out(Dims(order, rank));
  std::size_t diag_stride = 0;
  for (auto s : out.strides()) diag_stride += s;
  for (std::size_t r = 0; r < rank; ++r) out.data()[r * diag_stride] = 1.0;
  return out;
}

Matrix unfold(const DenseTensor& t, std::size_t mode) {
  if (mode >= t.order()) throw RangeError("unfold: mode out of range");
  const auto& dims = t.dims();
  const std::size_t pre = product(std::span(dims).first(mode));
  const std::size_t n = dims[mode];
  const std::size_t post = product(std::span(dims).subspan(mode + 1));
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pre * post));
  const auto data = t.data();
  for (std::size_t a = 0; a < pre; ++a)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t b = 0; b < post; ++b)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a * post + b)) =
            data[(a * n + i) * post + b];
  return m;
}

DenseTensor refold(const Matrix& m, const Dims& dims, std::size_t mode) {
  if (mode >= dims.size()) throw RangeError("refold: mode out of range");
  const std::size_t pre = product(std::span(dims).first(mode));
  const std::size_t n = dims[mode];
  const std::size_t post = product(std::span(dims).subspan(mode + 1));
  if (static_cast<std::size_t>(m.rows()) != n ||
      static_cast<std::size_t>(m.cols()) != pre * post) {
    throw ShapeError("refold: matrix shape does not match dims " + dims_string(dims));
  }
  DenseTensor t(dims);
  auto data = t.data();
  for (std::size_t a = 0; a < pre; ++a)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t b = 0; b < post; ++b)
        data[(a * n + i) * post + b] =
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a * post + b));
  return t;
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector hyperslice_norms(const DenseTensor& t, std::size_t mode) {
  return unfold(t, mode).rowwise().norm();
}

}  // namespace cpdgn
