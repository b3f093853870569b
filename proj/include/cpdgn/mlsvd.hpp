#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cpdgn/tensor.hpp"

namespace cpdgn {

/// Orthogonal Tucker form t ~= (U_1, ..., U_L) . core.
struct MlsvdResult {
  std::vector<Matrix> factors;          ///< I_l x R_l, orthonormal columns
  DenseTensor core;                     ///< dims (R_1, ..., R_L)
  std::vector<Vector> slice_energies;   ///< mode-l multilinear singular values, non-increasing
  Dims truncated_dims;                  ///< (R_1, ..., R_L) actually kept
  double input_norm = 0.0;              ///< ||t||, for relative errors

  Dims ranks() const { return truncated_dims; }
  /// (U_1, ..., U_L) . core.
  DenseTensor reconstruct() const;
};

struct MlsvdOptions {
  /// Relative reconstruction budget. Per mode, the smallest rank whose
  /// discarded squared singular values sum to at most (tol^2 / L) ||t||^2.
  double energy_tol = 0.0;
  /// Singular values at or below this fraction of the mode's largest one are
  /// treated as numerically zero and always dropped.
  double rank_rel_tol = 1e-12;
  /// Optional per-mode cap applied after the energy rule.
  std::optional<Dims> max_ranks;
};

/// Sequentially truncated HOSVD, modes processed in ascending order.
/// Throws DegenerateInputError for a zero tensor, ParameterError for a
/// tolerance outside [0, 1).
MlsvdResult compute_mlsvd(const DenseTensor& t, const MlsvdOptions& opts);
MlsvdResult compute_mlsvd(const DenseTensor& t, double energy_tol);

/// Variant for symmetric tensors (all dims equal): the mode-0 basis is used
/// for every mode, so the core stays symmetric.
MlsvdResult compute_mlsvd_symmetric(const DenseTensor& t, const MlsvdOptions& opts);

/// Keeps the leading target[l] columns of each factor and the leading core
/// block. Throws RangeError when a target exceeds the current rank or is 0.
MlsvdResult truncate(const MlsvdResult& res, const Dims& target);

/// ||S - S~|| with S~ zero-padded to the shape of S.
double truncation_error(const MlsvdResult& full, const MlsvdResult& truncated);

/// Per mode, number of singular values of the mode unfolding above
/// tol * (largest singular value of that mode).
Dims multilinear_rank(const DenseTensor& t, double tol);

/// (U_1 W_1, ..., U_L W_L): lifts a CPD of the core back to the full space.
KruskalOperand decompress_cpd(const MlsvdResult& res, const KruskalOperand& core_cpd);

}  // namespace cpdgn
