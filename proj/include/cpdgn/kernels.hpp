#pragma once

// Hot loops behind the tensor operations. Each kernel exists twice:
//   serial::   plain loops, kept as the reference the parallel code is
//              tested against;
//   parallel:: OpenMP version. Every output element is produced by exactly
//              one thread with a fixed summation order, so results do not
//              depend on the thread count.
// The unqualified names in `kernels` forward to the parallel versions.

#include <cstddef>
#include <span>

#include "cpdgn/tensor.hpp"

namespace cpdgn::kernels {

namespace serial {

DenseTensor mode_mult(const DenseTensor& t, std::size_t mode, const Matrix& m);
DenseTensor kruskal_full(std::span<const Matrix> factors);
/// Matricized tensor times Khatri-Rao product for `mode`:
///   out(i, r) = sum over other indices of t[..i..] * prod_{k != mode} W_k(i_k, r).
Matrix mttkrp(const DenseTensor& t, std::span<const Matrix> factors, std::size_t mode);
/// (1/N) sum_j x_j (x) x_j (x) x_j for the rows x_j of `samples`.
DenseTensor third_moment(const Matrix& samples);

}  // namespace serial

namespace parallel {

DenseTensor mode_mult(const DenseTensor& t, std::size_t mode, const Matrix& m);
DenseTensor kruskal_full(std::span<const Matrix> factors);
Matrix mttkrp(const DenseTensor& t, std::span<const Matrix> factors, std::size_t mode);
DenseTensor third_moment(const Matrix& samples);

}  // namespace parallel

using parallel::kruskal_full;
using parallel::mode_mult;
using parallel::mttkrp;
using parallel::third_moment;

/// Row-wise Khatri-Rao product of factors[first, last): row index runs
/// lexicographically over (i_first, ..., i_{last-1}). With an empty range the
/// result is a single row of ones.
Matrix khatri_rao_rows(std::span<const Matrix> factors, std::size_t first,
                       std::size_t last, std::size_t rank);

}  // namespace cpdgn::kernels
