#include "cpdgn/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include "cpdgn/errors.hpp"
#include "cpdgn/kernels.hpp"

namespace cpdgn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_shapes(const DenseTensor& t, const KruskalOperand& k) {
  validate(k);
  if (k.dims() != t.dims()) throw ShapeError("Kruskal operand dims do not match the tensor");
}

DenseTensor residual_tensor(const DenseTensor& t, const KruskalOperand& k) {
  return t - kernels::kruskal_full(k.factors);
}

Vector gradient_from_residual(const DenseTensor& f, const KruskalOperand& k) {
  Vector g(static_cast<Eigen::Index>(k.num_params()));
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < k.order(); ++l) {
    const Matrix m = kernels::mttkrp(f, k.factors, l);
    g.segment(off, m.size()) = -m.reshaped();
    off += m.size();
  }
  return g;
}

KruskalOperand random_operand(const Dims& dims, std::size_t rank, bool symmetric,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Matrix> f;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    if (symmetric && l > 0) {
      f.push_back(f.front());
      continue;
    }
    Matrix m(static_cast<Eigen::Index>(dims[l]), static_cast<Eigen::Index>(rank));
    for (auto& v : m.reshaped()) v = normal(rng);
    f.push_back(std::move(m));
  }
  return KruskalOperand(std::move(f));
}

// The tensor the iteration actually runs on, plus what is needed to express
// its errors relative to the original input.
struct Prepared {
  DenseTensor target;
  std::optional<MlsvdResult> compression;
  double input_norm = 0.0;
  double truncation_err = 0.0;  // ||T - (U) . core||
};

Prepared prepare(const DenseTensor& t, const SolverOptions& opts) {
  Prepared p;
  p.input_norm = norm(t);
  if (!(p.input_norm > 0.0)) throw DegenerateInputError("cannot decompose a zero tensor");
  if (!opts.compress) {
    p.target = t;
    return p;
  }
  MlsvdOptions mo;
  mo.energy_tol = opts.compress_tol;
  // The multilinear rank of a rank-R tensor never exceeds R in any mode.
  mo.max_ranks = Dims(t.order(), opts.rank);
  p.compression = opts.symmetric ? compute_mlsvd_symmetric(t, mo) : compute_mlsvd(t, mo);
  p.target = p.compression->core;
  p.truncation_err = norm(t - p.compression->reconstruct());
  return p;
}

struct RunState {
  KruskalOperand w;
  std::vector<IterationRecord> trace;
  double initial_rel_error = 0.0;
  Termination termination = Termination::MaxIterations;
};

RunState run_dgn(const DenseTensor& target, KruskalOperand w, const SolverOptions& opts,
                 double input_norm, double truncation_err) {
  const double trunc_sq = truncation_err * truncation_err;
  auto rel_error = [&](double err_sq) { return std::sqrt(err_sq + trunc_sq) / input_norm; };

  if (opts.symmetric) w = enforce_symmetry(w);
  DenseTensor f = residual_tensor(target, w);
  double err_sq = inner(f, f);

  RunState state;
  state.initial_rel_error = rel_error(err_sq);

  GramCache cache(w);
  Vector d = regularizer_diag(cache, w);
  const double mu0 = opts.initial_mu.value_or(jtj_diagonal(cache, w).mean() / d.mean());
  const double mu_min = mu0 * opts.mu_min_ratio;
  const double mu_max = mu0 * opts.mu_max_ratio;
  double mu = std::clamp(mu0, mu_min, mu_max);

  const std::size_t n_params = w.num_params();
  std::size_t stalled = 0;

  for (std::size_t it = 0; it < opts.max_outer_iters; ++it) {
    if (rel_error(err_sq) <= opts.stop_rel_error) {
      state.termination = Termination::RelativeError;
      break;
    }
    const Vector grad = gradient_from_residual(f, w);
    const Vector rhs = -grad;

    CgOptions cg;
    cg.max_iters = opts.cg_max_iters ? opts.cg_max_iters : std::min(n_params, 10 + it);
    // Inexact-Newton forcing: solve more accurately as the error shrinks.
    cg.rel_tol = std::clamp(opts.cg_rel_tol * std::sqrt(rel_error(err_sq)), 1e-12,
                            opts.cg_rel_tol);

    IterationRecord rec;
    rec.iteration = it;
    KruskalOperand trial;
    DenseTensor trial_f;
    double trial_sq = 0.0;
    Vector step;
    for (std::size_t attempt = 0; attempt <= opts.max_step_retries; ++attempt) {
      CgResult sol = cg_solve(cache, w, mu, d, rhs, cg);
      step = std::move(sol.step);
      rec.mu = mu;
      rec.cg_iters += sol.iters;
      const double predicted_sq =
          err_sq + 2.0 * grad.dot(step) + step.dot(gram_matvec(cache, w, step));

      Vector next = w.to_vector() + step;
      trial = KruskalOperand::from_vector(std::span<const double>(next.data(), next.size()),
                                          w.dims(), w.rank());
      if (opts.symmetric) trial = enforce_symmetry(trial);
      trial_f = residual_tensor(target, trial);
      trial_sq = inner(trial_f, trial_f);
      if (!std::isfinite(trial_sq)) throw NumericalError("non-finite error after step", it);

      if (trial_sq <= err_sq) {
        rec.accepted = true;
        rec.gain = gain_ratio(err_sq, trial_sq, predicted_sq);
        rec.model_exact = rec.gain == kExactModelGain;
        mu = update_mu(mu, rec.gain, opts, mu_min, mu_max);
        break;
      }
      // The step would increase the error: damp harder and retry. Only the
      // gain-driven schedule is capped, rejections may push past mu_max.
      mu *= opts.mu_grow;
    }
    rec.step_norm = step.norm();
    rec.grad_dot_step = grad.dot(step);

    if (!rec.accepted) {
      rec.rel_error = rel_error(err_sq);
      state.trace.push_back(rec);
      continue;
    }

    const double prev_rel = rel_error(err_sq);
    const double w_norm = w.to_vector().norm();
    w = std::move(trial);
    f = std::move(trial_f);
    err_sq = trial_sq;
    rec.rel_error = rel_error(err_sq);
    state.trace.push_back(rec);

    const double improvement = prev_rel > 0.0 ? (prev_rel - rec.rel_error) / prev_rel : 0.0;
    stalled = improvement <= opts.stop_improvement ? stalled + 1 : 0;
    if (rec.rel_error <= opts.stop_rel_error) {
      state.termination = Termination::RelativeError;
      break;
    }
    if (rec.step_norm <= opts.stop_step_norm * w_norm) {
      state.termination = Termination::StepNorm;
      break;
    }
    if (stalled >= opts.improvement_window) {
      state.termination = Termination::NoImprovement;
      break;
    }
    cache = GramCache(w);
    d = regularizer_diag(cache, w);
  }
  state.w = std::move(w);
  return state;
}

SolveReport finish(const DenseTensor& t, const Prepared& p, RunState&& state,
                   const KruskalOperand& init, std::uint64_t seed, Clock::time_point start) {
  SolveReport rep;
  if (p.compression) {
    rep.operand = decompress_cpd(*p.compression, state.w);
    rep.initial_operand = decompress_cpd(*p.compression, init);
    rep.compressed_dims = p.compression->truncated_dims;
  } else {
    rep.operand = std::move(state.w);
    rep.initial_operand = init;
    rep.compressed_dims = t.dims();
  }
  rep.trace = std::move(state.trace);
  rep.termination = state.termination;
  rep.initial_rel_error = state.initial_rel_error;
  rep.final_rel_error = norm(t - to_full(rep.operand)) / p.input_norm;
  rep.seed = seed;
  rep.wall_time_s = seconds_since(start);
  return rep;
}

SolveReport solve_prepared(const DenseTensor& t, const Prepared& p, const SolverOptions& opts,
                           std::uint64_t seed, Clock::time_point start) {
  KruskalOperand init = random_operand(p.target.dims(), opts.rank, opts.symmetric, seed);
  // Match the scale of the target so the first steps are not spent on it.
  const double model_norm = norm(to_full(init));
  if (model_norm > 0.0) {
    const double s = std::pow(norm(p.target) / model_norm, 1.0 / static_cast<double>(init.order()));
    for (auto& f : init.factors) f *= s;
  }
  RunState state = run_dgn(p.target, init, opts, p.input_norm, p.truncation_err);
  return finish(t, p, std::move(state), init, seed, start);
}

}  // namespace

void SolverOptions::validate() const {
  auto fail = [](const std::string& m) { throw ParameterError("SolverOptions: " + m); };
  if (rank < 1) fail("rank must be at least 1");
  if (!(cg_rel_tol > 0.0)) fail("cg_rel_tol must be positive");
  if (initial_mu && !(*initial_mu > 0.0)) fail("initial_mu must be positive");
  if (!(0.0 < mu_shrink && mu_shrink < 1.0)) fail("mu_shrink must lie in (0, 1)");
  if (!(mu_grow > 1.0)) fail("mu_grow must exceed 1");
  if (!(gain_low < gain_high)) fail("gain_low must be below gain_high");
  if (!(mu_min_ratio > 0.0 && mu_min_ratio <= mu_max_ratio)) {
    fail("need 0 < mu_min_ratio <= mu_max_ratio");
  }
  if (!(stop_rel_error >= 0.0 && stop_step_norm >= 0.0 && stop_improvement >= 0.0)) {
    fail("stopping thresholds must be non-negative");
  }
  if (improvement_window < 1) fail("improvement_window must be at least 1");
  if (!(compress_tol >= 0.0 && compress_tol < 1.0)) fail("compress_tol must lie in [0, 1)");
}

Vector residual(const DenseTensor& t, const KruskalOperand& k) {
  check_shapes(t, k);
  const DenseTensor f = residual_tensor(t, k);
  return Eigen::Map<const Vector>(f.data().data(), static_cast<Eigen::Index>(f.size()));
}

double objective(const DenseTensor& t, const KruskalOperand& k) {
  check_shapes(t, k);
  const DenseTensor f = residual_tensor(t, k);
  return 0.5 * inner(f, f);
}

Vector gradient(const DenseTensor& t, const KruskalOperand& k) {
  check_shapes(t, k);
  return gradient_from_residual(residual_tensor(t, k), k);
}

double gain_ratio(double prev_sq_err, double new_sq_err, double predicted_sq_err) {
  const double predicted = prev_sq_err - predicted_sq_err;
  const double actual = prev_sq_err - new_sq_err;
  if (std::abs(predicted) <= std::numeric_limits<double>::epsilon() * std::abs(prev_sq_err)) {
    return kExactModelGain;
  }
  return actual / predicted;
}

double update_mu(double mu, double g, const SolverOptions& opts, double mu_min, double mu_max) {
  double next = mu;
  if (g < opts.gain_low) {
    next = mu * opts.mu_shrink;
  } else if (g > opts.gain_high) {
    next = mu * opts.mu_grow;
  }
  return std::clamp(next, mu_min, mu_max);
}

KruskalOperand enforce_symmetry(const KruskalOperand& k) {
  validate(k);
  for (const auto& f : k.factors) {
    if (f.rows() != k.factors.front().rows()) {
      throw ShapeError("enforce_symmetry: all modes must have the same dimension");
    }
  }
  bool equal = true;
  for (const auto& f : k.factors) equal = equal && f == k.factors.front();
  if (equal) return k;
  Matrix mean = Matrix::Zero(k.factors.front().rows(), k.factors.front().cols());
  for (const auto& f : k.factors) mean += f;
  mean /= static_cast<double>(k.order());
  return KruskalOperand(std::vector<Matrix>(k.order(), mean));
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::RelativeError: return "relative_error";
    case Termination::StepNorm: return "step_norm";
    case Termination::NoImprovement: return "no_improvement";
    case Termination::MaxIterations: return "max_iterations";
  }
  return "unknown";
}

Termination termination_from_string(const std::string& s) {
  for (auto t : {Termination::RelativeError, Termination::StepNorm, Termination::NoImprovement,
                 Termination::MaxIterations}) {
    if (to_string(t) == s) return t;
  }
  throw ParameterError("unknown termination reason '" + s + "'");
}

SolveReport solve_cpd(const DenseTensor& t, const SolverOptions& opts) {
  opts.validate();
  const auto start = Clock::now();
  const Prepared p = prepare(t, opts);
  return solve_prepared(t, p, opts, opts.seed, start);
}

SolveReport solve_cpd_from(const DenseTensor& t, const KruskalOperand& init,
                           const SolverOptions& opts) {
  opts.validate();
  check_shapes(t, init);
  const auto start = Clock::now();
  Prepared p;
  p.input_norm = norm(t);
  if (!(p.input_norm > 0.0)) throw DegenerateInputError("cannot decompose a zero tensor");
  p.target = t;
  RunState state = run_dgn(p.target, init, opts, p.input_norm, 0.0);
  return finish(t, p, std::move(state), init, opts.seed, start);
}

std::uint64_t restart_seed(std::uint64_t base_seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed), static_cast<std::uint32_t>(base_seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

MultiStartReport solve_cpd_multistart(const DenseTensor& t, const SolverOptions& opts,
                                      std::size_t restarts) {
  opts.validate();
  if (restarts < 1) throw ParameterError("restarts must be at least 1");
  const auto start = Clock::now();
  const Prepared p = prepare(t, opts);

  std::vector<SolveReport> runs(restarts);
  std::vector<std::string> failures(restarts);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(restarts); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      runs[idx] = solve_prepared(t, p, opts, restart_seed(opts.seed, idx), Clock::now());
    } catch (const std::exception& e) {
      failures[idx] = e.what();
    }
  }

  MultiStartReport rep;
  bool found = false;
  for (std::size_t i = 0; i < restarts; ++i) {
    rep.seeds.push_back(restart_seed(opts.seed, i));
    if (!failures[i].empty()) {
      rep.final_errors.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    rep.final_errors.push_back(runs[i].final_rel_error);
    if (!found || runs[i].final_rel_error < runs[rep.best_index].final_rel_error) {
      rep.best_index = i;
      found = true;
    }
  }
  if (!found) throw NumericalError("every restart failed: " + failures.front(), 0);
  rep.best = std::move(runs[rep.best_index]);
  rep.wall_time_s = seconds_since(start);
  return rep;
}

}  // namespace cpdgn
