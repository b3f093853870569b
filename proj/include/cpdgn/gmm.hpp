#pragma once

// Spherical Gaussian mixtures with orthonormal means, learned by a symmetric
// CPD of the third-order moment tensor.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cpdgn/solver.hpp"
#include "cpdgn/tensor.hpp"

namespace cpdgn {

struct GmmModel {
  Vector weights;         ///< K mixing probabilities
  Matrix means;           ///< d x K, one component mean per column
  double variance = 0.0;  ///< common sigma^2, covariance sigma^2 I

  std::size_t dim() const { return static_cast<std::size_t>(means.rows()); }
  std::size_t components() const { return static_cast<std::size_t>(means.cols()); }
};

/// Throws ParameterError unless weights are positive and sum to 1, the means
/// are orthonormal, K <= d and the variance is non-negative.
void validate(const GmmModel& m, double tol = 1e-10);

/// Weights uniform on (0, 1) then normalized; means are the first K left
/// singular vectors of a Gaussian d x K matrix.
GmmModel random_model(std::size_t d, std::size_t k, double variance, std::uint64_t seed);

struct SampleSet {
  Matrix samples;                    ///< N x d, one draw per row
  std::vector<std::size_t> labels;  ///< hidden component of each draw
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(samples.cols()); }
};

/// N draws x = u_h + z with h ~ weights and z ~ N(0, sigma^2 I).
SampleSet sample(const GmmModel& m, std::size_t n, std::uint64_t seed);

struct Moments {
  Vector mean;        ///< mu^
  Matrix covariance;  ///< S^ = (1/N) sum x x^T - mu^ mu^T (biased)
  double variance;    ///< smallest eigenvalue of S^, clamped at 0
  DenseTensor m3;     ///< third moment with the three sigma^2 correction terms
};

/// Empirical estimators from samples. Throws DegenerateInputError for N < 2.
Moments empirical_moments(const Matrix& samples);
Moments empirical_moments(const SampleSet& s);

/// sum_i w_i u_i (x) u_i.
Matrix population_m2(const GmmModel& m);
/// sum_i w_i u_i (x) u_i (x) u_i.
DenseTensor population_m3(const GmmModel& m);

/// Splits each rank-one term of `k` into weight * u (x) u (x) u with unit u:
/// columns are normalized, signs of later modes aligned to mode 0, u taken
/// from the normalized mean of the aligned columns and the sign moved so the
/// weight is positive. Weights are not renormalized here.
GmmModel components_from_cpd(const KruskalOperand& k);

struct GmmLearnResult {
  GmmModel estimate;  ///< weights renormalized to sum 1
  Vector raw_weights; ///< weights before renormalization
  MultiStartReport cpd;
};

/// Symmetric rank-K CPD of the empirical third moment, best of `restarts`
/// by CPD error. opts.rank and opts.symmetric are overridden.
GmmLearnResult learn(const SampleSet& s, std::size_t k, SolverOptions opts, std::size_t restarts);

/// Same from a given third moment tensor; `variance` is copied into the
/// estimate.
GmmLearnResult learn_from_moment(const DenseTensor& m3, std::size_t k, double variance,
                                 SolverOptions opts, std::size_t restarts);

struct FitBreakdown {
  double weight_error = 0.0;  ///< ||w^ - w|| / ||w||
  double mean_error = 0.0;    ///< ||U^ - U|| / ||U||
  double total = 0.0;
  /// permutation[i] is the estimate column matched to truth column i.
  std::vector<std::size_t> permutation;
};

/// Aligns the estimate to the truth (greedy largest |cos| matching of mean
/// columns, then sign alignment) and evaluates both relative errors.
FitBreakdown fit_breakdown(const GmmModel& est, const GmmModel& truth);
double fit_metric(const GmmModel& est, const GmmModel& truth);

}  // namespace cpdgn
