#pragma once

// Seeded synthetic problems: collinear factors, double bottlenecks, the
// border-rank limit tensor and the matrix multiplication tensor.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "cpdgn/tensor.hpp"

namespace cpdgn {

struct ProblemInstance {
  DenseTensor tensor;        ///< what the solver sees (noisy when noise was added)
  DenseTensor clean_tensor;  ///< noise-free tensor, the reference for errors
  std::optional<KruskalOperand> ground_truth;
  /// Generator specific companion tensor (border rank: the rank-2 member T_k).
  std::optional<DenseTensor> auxiliary;

  std::string name;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;
};

/// Gaussian factors of the given dims and rank.
ProblemInstance random_instance(const Dims& dims, std::size_t rank, std::uint64_t seed);

/// Every factor column is q_1 + c q_i, where q_i are the columns of the thin
/// Q of a Gaussian matrix. Requires rank <= min(m, n, p).
ProblemInstance collinear_instance(std::size_t m, std::size_t n, std::size_t p, std::size_t rank,
                                   double c, std::uint64_t seed);

/// Columns 1 and 2 of each factor follow the collinear rule, the rest are
/// plain Q columns. Requires 2 <= rank <= min(m, n, p).
ProblemInstance bottleneck_instance(std::size_t m, std::size_t n, std::size_t p,
                                    std::size_t rank, double c, std::uint64_t seed);

/// T = x1 (x) x2 (x) y3 + x1 (x) y2 (x) x3 + y1 (x) x2 (x) x3 in R^{m x m x m},
/// with (x_i, y_i) an orthonormal pair per mode. `auxiliary` holds
///   T_k = k (x1 + y1/k) (x) (x2 + y2/k) (x) (x3 + y3/k) - k x1 (x) x2 (x) x3.
ProblemInstance border_rank_instance(std::size_t m, double k, std::uint64_t seed);

/// N^2 x N^2 x N^2 tensor of N x N matrix multiplication:
///   sum_{i,j,k} vec(E_ij) (x) vec(E_jk) (x) vec(E_ik),  vec(E_ij) = e_{i + j N}.
/// Contracting modes 0 and 1 with vec(A), vec(B) gives vec(A B).
ProblemInstance matmul_tensor(std::size_t n);

/// t + nu * N with N standard Gaussian.
DenseTensor add_noise(const DenseTensor& t, double nu, std::uint64_t seed);

/// Replaces inst.tensor by add_noise(inst.clean_tensor, nu, seed') where the
/// noise seed is derived from inst.seed.
ProblemInstance with_noise(ProblemInstance inst, double nu);

}  // namespace cpdgn
