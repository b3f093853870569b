// Reference kernels. Deliberately naive: straight multi-index loops with no
// blocking, used as the oracle for the OpenMP versions.

#include <vector>

#include "cpdgn/kernels.hpp"

namespace cpdgn::kernels {

namespace {

// Advances a row-major multi-index; returns false after the last index.
bool next_index(std::vector<std::size_t>& idx, const Dims& dims) {
  for (std::size_t l = dims.size(); l-- > 0;) {
    if (++idx[l] < dims[l]) return true;
    idx[l] = 0;
  }
  return false;
}

}  // namespace

Matrix khatri_rao_rows(std::span<const Matrix> factors, std::size_t first, std::size_t last,
                       std::size_t rank) {
  const auto r = static_cast<Eigen::Index>(rank);
  Matrix out = Matrix::Ones(1, r);
  for (std::size_t l = first; l < last; ++l) {
    const Matrix& f = factors[l];
    Matrix next(out.rows() * f.rows(), r);
    for (Eigen::Index a = 0; a < out.rows(); ++a)
      for (Eigen::Index i = 0; i < f.rows(); ++i)
        next.row(a * f.rows() + i) = out.row(a).cwiseProduct(f.row(i));
    out = std::move(next);
  }
  return out;
}

namespace serial {

DenseTensor mode_mult(const DenseTensor& t, std::size_t mode, const Matrix& m) {
  Dims out_dims = t.dims();
  out_dims[mode] = static_cast<std::size_t>(m.rows());
  DenseTensor out(out_dims);
  std::vector<std::size_t> idx(t.order(), 0);
  std::vector<std::size_t> oidx(t.order(), 0);
  do {
    const double v = t.at(idx);
    oidx = idx;
    for (Eigen::Index a = 0; a < m.rows(); ++a) {
      oidx[mode] = static_cast<std::size_t>(a);
      out.at(oidx) += m(a, static_cast<Eigen::Index>(idx[mode])) * v;
    }
  } while (next_index(idx, t.dims()));
  return out;
}

DenseTensor kruskal_full(std::span<const Matrix> factors) {
  Dims dims;
  for (const auto& f : factors) dims.push_back(static_cast<std::size_t>(f.rows()));
  const auto rank = factors.front().cols();
  DenseTensor out(dims);
  std::vector<std::size_t> idx(dims.size(), 0);
  std::size_t pos = 0;
  do {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < rank; ++r) {
      double p = 1.0;
      for (std::size_t l = 0; l < dims.size(); ++l)
        p *= factors[l](static_cast<Eigen::Index>(idx[l]), r);
      acc += p;
    }
    out.data()[pos++] = acc;
  } while (next_index(idx, dims));
  return out;
}

Matrix mttkrp(const DenseTensor& t, std::span<const Matrix> factors, std::size_t mode) {
  const auto rank = factors.front().cols();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.dim(mode)), rank);
  std::vector<std::size_t> idx(t.order(), 0);
  std::size_t pos = 0;
  do {
    const double v = t.data()[pos++];
    for (Eigen::Index r = 0; r < rank; ++r) {
      double p = v;
      for (std::size_t l = 0; l < t.order(); ++l) {
        if (l != mode) p *= factors[l](static_cast<Eigen::Index>(idx[l]), r);
      }
      out(static_cast<Eigen::Index>(idx[mode]), r) += p;
    }
  } while (next_index(idx, t.dims()));
  return out;
}

DenseTensor third_moment(const Matrix& samples) {
  const auto d = static_cast<std::size_t>(samples.cols());
  DenseTensor out(Dims{d, d, d});
  auto data = out.data();
  for (Eigen::Index s = 0; s < samples.rows(); ++s) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k)
          data[(i * d + j) * d + k] += samples(s, static_cast<Eigen::Index>(i)) *
                                       samples(s, static_cast<Eigen::Index>(j)) *
                                       samples(s, static_cast<Eigen::Index>(k));
  }
  const double inv_n = 1.0 / static_cast<double>(samples.rows());
  for (auto& v : data) v *= inv_n;
  return out;
}

}  // namespace serial
}  // namespace cpdgn::kernels
