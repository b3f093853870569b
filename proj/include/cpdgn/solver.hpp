#pragma once

// Damped Gauss-Newton for the canonical polyadic decomposition.
//
// The unknown is w = [vec(W_1); ...; vec(W_L)] (column stacking, factors in
// mode order). With f(w) = vec(T - to_full(W)) and F = 0.5 ||f||^2 each outer
// iteration solves
//     (J^T J + mu D) x = -grad F
// by conjugate gradients, touching J^T J only through gram_matvec.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cpdgn/mlsvd.hpp"
#include "cpdgn/tensor.hpp"

namespace cpdgn {

struct SolverOptions {
  std::size_t rank = 1;
  std::size_t max_outer_iters = 200;
  /// 0 selects min(R * sum(I), 10 + outer iteration index).
  std::size_t cg_max_iters = 0;
  double cg_rel_tol = 1e-2;
  /// Unset: mean(diag(J^T J)) / mean(D) at the starting point.
  std::optional<double> initial_mu;

  // Damping schedule.
  double mu_grow = 1.5;
  double mu_shrink = 0.5;
  double gain_low = 0.75;
  double gain_high = 0.9;
  /// The gain-driven schedule keeps mu within [mu_min_ratio, mu_max_ratio]
  /// times the initial mu; the starting value is clamped into the same range.
  /// Rejected steps may push mu above the upper bound for one iteration.
  double mu_min_ratio = 1e-12;
  double mu_max_ratio = 1e-6;
  /// Rejected trial steps per outer iteration before giving up on it.
  std::size_t max_step_retries = 5;

  // Stopping.
  double stop_rel_error = 1e-12;
  double stop_step_norm = 1e-10;
  double stop_improvement = 1e-10;
  std::size_t improvement_window = 3;

  bool symmetric = false;
  bool compress = true;
  /// Energy budget of the MLSVD pre-compression (see MlsvdOptions).
  double compress_tol = 1e-10;
  std::uint64_t seed = 0;

  /// Throws ParameterError on inconsistent settings.
  void validate() const;
};

/// R x R tables behind the matrix-free J^T J product.
///   gram(l)     = W_l^T W_l                       (the omega tables)
///   pi(l)       = Hadamard of gram(k), k != l     (diagonal blocks)
///   pi(a, b)    = Hadamard of gram(k), k != a, b  (off-diagonal blocks)
/// For order 3 with (X, Y, Z): pi(0) = Pi_X, pi(0, 1) = Pi_XY = Z^T Z, etc.
class GramCache {
 public:
  explicit GramCache(const KruskalOperand& k);

  std::size_t order() const noexcept { return grams_.size(); }
  std::size_t rank() const noexcept { return rank_; }
  const Matrix& gram(std::size_t l) const { return grams_.at(l); }
  const Matrix& pi(std::size_t l) const { return diag_.at(l); }
  const Matrix& pi(std::size_t a, std::size_t b) const;
  /// Floats held by the cache.
  std::size_t stored_values() const;

 private:
  std::size_t rank_ = 0;
  std::vector<Matrix> grams_;
  std::vector<Matrix> diag_;
  std::vector<Matrix> pairs_;  // upper triangle, row-major over (a < b)
};

GramCache gram_cache(const KruskalOperand& k);

/// vec(T - to_full(k)) in the tensor's row-major order.
Vector residual(const DenseTensor& t, const KruskalOperand& k);
/// 0.5 ||T - to_full(k)||^2.
double objective(const DenseTensor& t, const KruskalOperand& k);
/// grad F = J^T f, computed by MTTKRP contractions of the residual.
Vector gradient(const DenseTensor& t, const KruskalOperand& k);

/// J^T J v without forming J^T J.
Vector gram_matvec(const GramCache& cache, const KruskalOperand& k, const Vector& v);
/// diag(J^T J): entry (l, i, r) equals pi(l)(r, r).
Vector jtj_diagonal(const GramCache& cache, const KruskalOperand& k);
/// Positive diagonal D with J^T J + D diagonally dominant: per row the larger
/// of diag(J^T J) and the off-diagonal absolute row sum of J^T J, floored at
/// 1e-12 times the largest entry.
Vector regularizer_diag(const GramCache& cache, const KruskalOperand& k);

struct CgOptions {
  std::size_t max_iters = 50;
  double rel_tol = 1e-2;
};

struct CgResult {
  Vector step;
  std::size_t iters = 0;
  double rel_residual = 0.0;
};

/// Jacobi-preconditioned CG on (J^T J + mu diag(d)) x = b.
/// Throws NumericalError when non-finite values appear.
CgResult cg_solve(const GramCache& cache, const KruskalOperand& k, double mu, const Vector& d,
                  const Vector& b, const CgOptions& opts);

/// Returned by gain_ratio when the predicted improvement is numerically zero.
/// Compares above any gain_high, i.e. the linear model is treated as exact.
inline constexpr double kExactModelGain = std::numeric_limits<double>::max();

/// (prev - new) / (prev - predicted), all squared errors.
double gain_ratio(double prev_sq_err, double new_sq_err, double predicted_sq_err);

/// g < gain_low: mu * mu_shrink; g > gain_high: mu * mu_grow; otherwise mu.
/// The result is clamped to [mu_min, mu_max].
double update_mu(double mu, double g, const SolverOptions& opts = {}, double mu_min = 0.0,
                 double mu_max = std::numeric_limits<double>::infinity());

/// Replaces every factor by the mean of all factors. Needs equal dims.
KruskalOperand enforce_symmetry(const KruskalOperand& k);

enum class Termination { RelativeError, StepNorm, NoImprovement, MaxIterations };

std::string to_string(Termination t);
Termination termination_from_string(const std::string& s);

struct IterationRecord {
  std::size_t iteration = 0;
  double rel_error = 0.0;      ///< ||T - T~|| / ||T|| after the iteration
  double mu = 0.0;             ///< damping used for the final trial of the iteration
  double gain = 0.0;
  std::size_t cg_iters = 0;
  double step_norm = 0.0;
  double grad_dot_step = 0.0;  ///< <grad F, step>, negative for a descent direction
  bool accepted = false;
  bool model_exact = false;    ///< gain_ratio hit its sentinel

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct SolveReport {
  KruskalOperand operand;          ///< in the input tensor's space
  KruskalOperand initial_operand;  ///< starting point lifted to the input space
  std::vector<IterationRecord> trace;
  double initial_rel_error = 0.0;
  double final_rel_error = 0.0;
  double wall_time_s = 0.0;
  Termination termination = Termination::MaxIterations;
  std::uint64_t seed = 0;
  Dims compressed_dims;
};

/// compress -> damped Gauss-Newton on the core -> decompress.
/// Throws DegenerateInputError for a zero tensor.
SolveReport solve_cpd(const DenseTensor& t, const SolverOptions& opts);

/// Same as solve_cpd but starting from `init` (given in the input space, no
/// compression applied).
SolveReport solve_cpd_from(const DenseTensor& t, const KruskalOperand& init,
                           const SolverOptions& opts);

struct MultiStartReport {
  SolveReport best;
  std::size_t best_index = 0;
  std::vector<double> final_errors;  ///< per restart, in restart order
  std::vector<std::uint64_t> seeds;
  double wall_time_s = 0.0;
};

/// Seed of restart `index` for a base seed.
std::uint64_t restart_seed(std::uint64_t base_seed, std::size_t index);

/// Runs `restarts` seeded solves (concurrently when OpenMP is available) over
/// one shared compression and keeps the smallest final error, ties broken by
/// restart index.
MultiStartReport solve_cpd_multistart(const DenseTensor& t, const SolverOptions& opts,
                                      std::size_t restarts);

}  // namespace cpdgn
