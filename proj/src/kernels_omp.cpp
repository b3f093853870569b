#include <algorithm>
#include <array>
#include <vector>

#include "cpdgn/kernels.hpp"

namespace cpdgn::kernels::parallel {

namespace {

using Index = Eigen::Index;

std::ptrdiff_t as_signed(std::size_t v) { return static_cast<std::ptrdiff_t>(v); }

}  // namespace

DenseTensor mode_mult(const DenseTensor& t, std::size_t mode, const Matrix& m) {
  const auto& dims = t.dims();
  const std::size_t pre = product(std::span(dims).first(mode));
  const std::size_t n = dims[mode];
  const std::size_t post = product(std::span(dims).subspan(mode + 1));
  const auto n_out = static_cast<std::size_t>(m.rows());

  Dims out_dims = dims;
  out_dims[mode] = n_out;
  DenseTensor out(out_dims);
  const double* src = t.data().data();
  double* dst = out.data().data();

#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t a = 0; a < as_signed(pre); ++a) {
    for (std::ptrdiff_t o = 0; o < as_signed(n_out); ++o) {
      double* row = dst + (static_cast<std::size_t>(a) * n_out + static_cast<std::size_t>(o)) * post;
      for (std::size_t i = 0; i < n; ++i) {
        const double coeff = m(o, static_cast<Index>(i));
        const double* in = src + (static_cast<std::size_t>(a) * n + i) * post;
        for (std::size_t b = 0; b < post; ++b) row[b] += coeff * in[b];
      }
    }
  }
  return out;
}

DenseTensor kruskal_full(std::span<const Matrix> factors) {
  Dims dims;
  for (const auto& f : factors) dims.push_back(static_cast<std::size_t>(f.rows()));
  const auto rank = static_cast<std::size_t>(factors.front().cols());
  // Row-major Khatri-Rao of the trailing modes; one row per trailing multi-index.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tail =
      khatri_rao_rows(factors, 1, factors.size(), rank);
  const Matrix& head = factors.front();
  const std::size_t n0 = dims[0];
  const std::size_t cols = static_cast<std::size_t>(tail.rows());

  DenseTensor out(dims);
  double* dst = out.data().data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < as_signed(cols); ++c) {
    const double* k = tail.data() + static_cast<std::size_t>(c) * rank;
    for (std::size_t i = 0; i < n0; ++i) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rank; ++r) acc += head(static_cast<Index>(i), static_cast<Index>(r)) * k[r];
      dst[i * cols + static_cast<std::size_t>(c)] = acc;
    }
  }
  return out;
}

Matrix mttkrp(const DenseTensor& t, std::span<const Matrix> factors, std::size_t mode) {
  const auto& dims = t.dims();
  const auto rank = static_cast<std::size_t>(factors.front().cols());
  const std::size_t pre = product(std::span(dims).first(mode));
  const std::size_t n = dims[mode];
  const std::size_t post = product(std::span(dims).subspan(mode + 1));

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor kpre = khatri_rao_rows(factors, 0, mode, rank);
  const RowMajor kpost = khatri_rao_rows(factors, mode + 1, factors.size(), rank);
  const double* src = t.data().data();

  Matrix out = Matrix::Zero(static_cast<Index>(n), static_cast<Index>(rank));

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < as_signed(n); ++i) {
    std::vector<double> partial(rank);
    std::vector<double> acc(rank, 0.0);
    for (std::size_t a = 0; a < pre; ++a) {
      std::fill(partial.begin(), partial.end(), 0.0);
      const double* in = src + (a * n + static_cast<std::size_t>(i)) * post;
      for (std::size_t b = 0; b < post; ++b) {
        const double v = in[b];
        const double* kb = kpost.data() + b * rank;
        for (std::size_t r = 0; r < rank; ++r) partial[r] += v * kb[r];
      }
      const double* ka = kpre.data() + a * rank;
      for (std::size_t r = 0; r < rank; ++r) acc[r] += ka[r] * partial[r];
    }
    for (std::size_t r = 0; r < rank; ++r) out(i, static_cast<Index>(r)) = acc[r];
  }
  return out;
}

DenseTensor third_moment(const Matrix& samples) {
  const auto d = static_cast<std::size_t>(samples.cols());
  const auto n = samples.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  DenseTensor out(Dims{d, d, d});
  double* dst = out.data().data();

  // Only i <= j <= k is accumulated; the other five permutations are copies,
  // which makes the result exactly symmetric.
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < as_signed(d); ++i) {
    for (std::ptrdiff_t j = 0; j < as_signed(d); ++j) {
      if (j < i) continue;
      const Vector w = samples.col(i).cwiseProduct(samples.col(j));
      for (std::size_t k = static_cast<std::size_t>(j); k < d; ++k) {
        const double v = w.dot(samples.col(static_cast<Index>(k))) * inv_n;
        const std::array<std::size_t, 3> p{static_cast<std::size_t>(i),
                                           static_cast<std::size_t>(j), k};
        const std::size_t perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                         {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        for (const auto& q : perms) dst[(p[q[0]] * d + p[q[1]]) * d + p[q[2]]] = v;
      }
    }
  }
  return out;
}

}  // namespace cpdgn::kernels::parallel
