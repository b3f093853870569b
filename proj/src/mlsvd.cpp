#include "cpdgn/mlsvd.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "cpdgn/errors.hpp"

namespace cpdgn {

namespace {

struct ModeBasis {
  Matrix u;       // leading left singular vectors
  Vector sigma;   // matching singular values
};

void check_options(const DenseTensor& t, const MlsvdOptions& opts) {
  if (!(opts.energy_tol >= 0.0 && opts.energy_tol < 1.0)) {
    throw ParameterError("energy_tol must lie in [0, 1), got " + std::to_string(opts.energy_tol));
  }
  if (opts.max_ranks && opts.max_ranks->size() != t.order()) {
    throw ShapeError("max_ranks has the wrong number of modes");
  }
  if (t.empty() || norm(t) == 0.0) throw DegenerateInputError("MLSVD of a zero tensor");
}

// Chooses how many leading singular values of one mode to keep.
Eigen::Index kept_rank(const Vector& sigma, double budget_sq, double rank_rel_tol,
                       std::size_t cap, std::size_t mode) {
  if (sigma.size() == 0 || sigma[0] <= 0.0) {
    throw DegenerateInputError("mode " + std::to_string(mode) + " has numerical rank 0");
  }
  Eigen::Index keep = sigma.size();
  while (keep > 1 && sigma[keep - 1] <= rank_rel_tol * sigma[0]) --keep;
  // Drop trailing values while the discarded energy stays within budget.
  double dropped = 0.0;
  for (Eigen::Index k = sigma.size(); k-- > keep;) dropped += sigma[k] * sigma[k];
  while (keep > 1) {
    const double next = dropped + sigma[keep - 1] * sigma[keep - 1];
    if (next > budget_sq) break;
    dropped = next;
    --keep;
  }
  return std::min<Eigen::Index>(keep, static_cast<Eigen::Index>(cap));
}

ModeBasis mode_basis(const DenseTensor& t, std::size_t mode, double budget_sq,
                     const MlsvdOptions& opts) {
  const Matrix a = unfold(t, mode);
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU);
  const Vector& sigma = svd.singularValues();
  const std::size_t cap = opts.max_ranks ? std::max<std::size_t>(1, (*opts.max_ranks)[mode])
                                         : static_cast<std::size_t>(sigma.size());
  const auto keep = kept_rank(sigma, budget_sq, opts.rank_rel_tol, cap, mode);
  return {svd.matrixU().leftCols(keep), sigma.head(keep)};
}

}  // namespace

DenseTensor MlsvdResult::reconstruct() const { return multilinear_mult(factors, core); }

MlsvdResult compute_mlsvd(const DenseTensor& t, const MlsvdOptions& opts) {
  check_options(t, opts);
  const double total_sq = inner(t, t);
  const double budget_sq =
      opts.energy_tol * opts.energy_tol / static_cast<double>(t.order()) * total_sq;

  MlsvdResult res;
  res.input_norm = std::sqrt(total_sq);
  DenseTensor core = t;
  for (std::size_t l = 0; l < t.order(); ++l) {
    ModeBasis basis = mode_basis(core, l, budget_sq, opts);
    core = mode_mult(core, l, basis.u.transpose());
    res.truncated_dims.push_back(static_cast<std::size_t>(basis.u.cols()));
    res.factors.push_back(std::move(basis.u));
    res.slice_energies.push_back(std::move(basis.sigma));
  }
  res.core = std::move(core);
  return res;
}

MlsvdResult compute_mlsvd(const DenseTensor& t, double energy_tol) {
  MlsvdOptions opts;
  opts.energy_tol = energy_tol;
  return compute_mlsvd(t, opts);
}

MlsvdResult compute_mlsvd_symmetric(const DenseTensor& t, const MlsvdOptions& opts) {
  check_options(t, opts);
  for (auto d : t.dims()) {
    if (d != t.dim(0)) throw ShapeError("symmetric MLSVD needs equal dims");
  }
  const double total_sq = inner(t, t);
  const double budget_sq =
      opts.energy_tol * opts.energy_tol / static_cast<double>(t.order()) * total_sq;
  ModeBasis basis = mode_basis(t, 0, budget_sq, opts);

  MlsvdResult res;
  res.input_norm = std::sqrt(total_sq);
  res.factors.assign(t.order(), basis.u);
  std::vector<Matrix> proj(t.order(), basis.u.transpose());
  res.core = multilinear_mult(proj, t);
  for (std::size_t l = 0; l < t.order(); ++l) {
    res.truncated_dims.push_back(static_cast<std::size_t>(basis.u.cols()));
    res.slice_energies.push_back(hyperslice_norms(res.core, l));
  }
  return res;
}

MlsvdResult truncate(const MlsvdResult& res, const Dims& target) {
  const auto& ranks = res.truncated_dims;
  if (target.size() != ranks.size()) throw ShapeError("truncate: wrong number of modes");
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    if (target[l] < 1 || target[l] > ranks[l]) {
      throw RangeError("truncate: target rank " + std::to_string(target[l]) + " for mode " +
                       std::to_string(l) + " outside [1, " + std::to_string(ranks[l]) + "]");
    }
  }
  MlsvdResult out;
  out.input_norm = res.input_norm;
  out.truncated_dims = target;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    const auto keep = static_cast<Eigen::Index>(target[l]);
    out.factors.push_back(res.factors[l].leftCols(keep));
    out.slice_energies.push_back(res.slice_energies[l].head(keep));
  }
  out.core = DenseTensor(target);
  std::vector<std::size_t> idx(target.size(), 0);
  auto data = out.core.data();
  for (std::size_t pos = 0; pos < data.size(); ++pos) {
    data[pos] = res.core.at(idx);
    for (std::size_t l = target.size(); l-- > 0;) {
      if (++idx[l] < target[l]) break;
      idx[l] = 0;
    }
  }
  return out;
}

double truncation_error(const MlsvdResult& full, const MlsvdResult& truncated) {
  const Dims& keep = truncated.truncated_dims;
  const Dims& dims = full.core.dims();
  if (keep.size() != dims.size()) throw ShapeError("truncation_error: mode mismatch");
  std::vector<std::size_t> idx(dims.size(), 0);
  double acc = 0.0;
  for (double v : full.core.data()) {
    bool inside = true;
    for (std::size_t l = 0; l < dims.size(); ++l) inside = inside && idx[l] < keep[l];
    if (!inside) acc += v * v;
    for (std::size_t l = dims.size(); l-- > 0;) {
      if (++idx[l] < dims[l]) break;
      idx[l] = 0;
    }
  }
  return std::sqrt(acc);
}

Dims multilinear_rank(const DenseTensor& t, double tol) {
  if (tol < 0.0) throw ParameterError("multilinear_rank: tol must be non-negative");
  Dims ranks;
  for (std::size_t l = 0; l < t.order(); ++l) {
    Eigen::JacobiSVD<Matrix> svd(unfold(t, l));
    const Vector& s = svd.singularValues();
    std::size_t count = 0;
    if (s.size() > 0 && s[0] > 0.0) {
      for (Eigen::Index k = 0; k < s.size(); ++k) count += s[k] > tol * s[0] ? 1 : 0;
    }
    ranks.push_back(count);
  }
  return ranks;
}

KruskalOperand decompress_cpd(const MlsvdResult& res, const KruskalOperand& core_cpd) {
  validate(core_cpd);
  if (core_cpd.order() != res.factors.size()) {
    throw ShapeError("decompress_cpd: operand order does not match the MLSVD");
  }
  std::vector<Matrix> lifted;
  for (std::size_t l = 0; l < res.factors.size(); ++l) {
    if (core_cpd.factors[l].rows() != res.factors[l].cols()) {
      throw ShapeError("decompress_cpd: factor " + std::to_string(l) + " has " +
                       std::to_string(core_cpd.factors[l].rows()) + " rows, core dim is " +
                       std::to_string(res.factors[l].cols()));
    }
    lifted.push_back(res.factors[l] * core_cpd.factors[l]);
  }
  return KruskalOperand(std::move(lifted));
}

}  // namespace cpdgn
