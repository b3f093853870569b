#include "cpdgn/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "cpdgn/errors.hpp"
#include "cpdgn/kernels.hpp"

namespace cpdgn {

void validate(const GmmModel& m, double tol) {
  const auto k = m.means.cols();
  if (k < 1) throw ParameterError("mixture needs at least one component");
  if (m.weights.size() != k) throw ShapeError("one weight per mean column expected");
  if (m.means.rows() < k) throw ParameterError("need d >= K");
  if ((m.weights.array() <= 0.0).any()) throw ParameterError("weights must be positive");
  if (std::abs(m.weights.sum() - 1.0) > tol) throw ParameterError("weights must sum to 1");
  const Matrix gram = m.means.transpose() * m.means;
  if ((gram - Matrix::Identity(k, k)).norm() > tol) {
    throw ParameterError("means must be orthonormal");
  }
  if (!(m.variance >= 0.0)) throw ParameterError("variance must be non-negative");
}

GmmModel random_model(std::size_t d, std::size_t k, double variance, std::uint64_t seed) {
  if (k < 1 || k > d) throw ParameterError("need 1 <= K <= d");
  if (!(variance >= 0.0)) throw ParameterError("variance must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  GmmModel m;
  m.weights.resize(static_cast<Eigen::Index>(k));
  for (auto& w : m.weights) {
    do w = unit(rng); while (w == 0.0);
  }
  m.weights /= m.weights.sum();

  Matrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  for (auto& v : g.reshaped()) v = normal(rng);
  Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeThinU);
  m.means = svd.matrixU().leftCols(static_cast<Eigen::Index>(k));
  m.variance = variance;
  return m;
}

SampleSet sample(const GmmModel& m, std::size_t n, std::uint64_t seed) {
  validate(m);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(m.weights.data(),
                                               m.weights.data() + m.weights.size());
  std::normal_distribution<double> normal(0.0, std::sqrt(m.variance));

  SampleSet s;
  s.seed = seed;
  s.samples.resize(static_cast<Eigen::Index>(n), m.means.rows());
  s.labels.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t h = pick(rng);
    s.labels[j] = h;
    const auto row = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < m.means.rows(); ++i) {
      s.samples(row, i) = m.means(i, static_cast<Eigen::Index>(h)) + normal(rng);
    }
  }
  return s;
}

Moments empirical_moments(const Matrix& samples) {
  const auto n = samples.rows();
  if (n < 2) throw DegenerateInputError("empirical moments need at least 2 samples");
  const auto d = samples.cols();

  Moments mo;
  mo.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - mo.mean.transpose();
  mo.covariance = centered.transpose() * centered / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(mo.covariance, Eigen::EigenvaluesOnly);
  mo.variance = std::max(0.0, eig.eigenvalues()[0]);

  mo.m3 = kernels::third_moment(samples);
  const double s2 = mo.variance;
  const auto du = static_cast<std::size_t>(d);
  auto data = mo.m3.data();
  for (std::size_t a = 0; a < du; ++a) {
    for (std::size_t b = 0; b < du; ++b) {
      for (std::size_t c = 0; c < du; ++c) {
        double corr = 0.0;
        if (b == c) corr += mo.mean[static_cast<Eigen::Index>(a)];
        if (a == c) corr += mo.mean[static_cast<Eigen::Index>(b)];
        if (a == b) corr += mo.mean[static_cast<Eigen::Index>(c)];
        if (corr != 0.0) data[(a * du + b) * du + c] -= s2 * corr;
      }
    }
  }
  return mo;
}

Moments empirical_moments(const SampleSet& s) { return empirical_moments(s.samples); }

Matrix population_m2(const GmmModel& m) {
  return m.means * m.weights.asDiagonal() * m.means.transpose();
}

DenseTensor population_m3(const GmmModel& m) {
  Matrix weighted = m.means * m.weights.asDiagonal();
  std::vector<Matrix> f{weighted, m.means, m.means};
  return to_full(KruskalOperand(std::move(f)));
}

GmmModel components_from_cpd(const KruskalOperand& k) {
  validate(k);
  const auto rank = static_cast<Eigen::Index>(k.rank());
  const auto d = k.factors.front().rows();
  for (const auto& f : k.factors) {
    if (f.rows() != d) throw ShapeError("components_from_cpd needs equal dims");
  }
  GmmModel m;
  m.weights.resize(rank);
  m.means.resize(d, rank);
  for (Eigen::Index r = 0; r < rank; ++r) {
    double w = 1.0;
    Vector u = Vector::Zero(d);
    Vector ref;
    for (const auto& f : k.factors) {
      const double len = f.col(r).norm();
      if (!(len > 0.0)) throw DegenerateInputError("CPD component has a zero column");
      Vector v = f.col(r) / len;
      w *= len;
      if (ref.size() == 0) {
        ref = v;
      } else if (v.dot(ref) < 0.0) {
        v = -v;
        w = -w;
      }
      u += v;
    }
    u.normalize();
    // u (x) u (x) u with u -> -u flips the term, so the sign can move to u.
    if (w < 0.0 && k.order() % 2 == 1) {
      w = -w;
      u = -u;
    }
    m.weights[r] = w;
    m.means.col(r) = u;
  }
  return m;
}

GmmLearnResult learn_from_moment(const DenseTensor& m3, std::size_t k, double variance,
                                 SolverOptions opts, std::size_t restarts) {
  if (m3.order() != 3) throw ShapeError("third moment tensor must have order 3");
  if (k < 1 || k > m3.dim(0)) throw ParameterError("need 1 <= K <= d");
  opts.rank = k;
  opts.symmetric = true;

  GmmLearnResult res;
  res.cpd = solve_cpd_multistart(m3, opts, restarts);
  GmmModel est = components_from_cpd(res.cpd.best.operand);
  res.raw_weights = est.weights;
  est.weights /= est.weights.sum();
  est.variance = variance;
  res.estimate = std::move(est);
  return res;
}

GmmLearnResult learn(const SampleSet& s, std::size_t k, SolverOptions opts, std::size_t restarts) {
  const Moments mo = empirical_moments(s);
  return learn_from_moment(mo.m3, k, mo.variance, std::move(opts), restarts);
}

FitBreakdown fit_breakdown(const GmmModel& est, const GmmModel& truth) {
  const auto k = truth.means.cols();
  if (est.means.cols() != k || est.weights.size() != k || truth.weights.size() != k) {
    throw ShapeError("fit_metric: component counts differ");
  }
  if (est.means.rows() != truth.means.rows()) throw ShapeError("fit_metric: dims differ");

  Matrix cosines(k, k);  // (truth i, est j)
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double den = truth.means.col(i).norm() * est.means.col(j).norm();
      cosines(i, j) = den > 0.0 ? std::abs(truth.means.col(i).dot(est.means.col(j))) / den : 0.0;
    }
  }
  FitBreakdown fb;
  fb.permutation.assign(static_cast<std::size_t>(k), 0);
  std::vector<bool> truth_used(k, false), est_used(k, false);
  for (Eigen::Index step = 0; step < k; ++step) {
    Eigen::Index bi = -1, bj = -1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (truth_used[i]) continue;
      for (Eigen::Index j = 0; j < k; ++j) {
        if (!est_used[j] && cosines(i, j) > best) {
          best = cosines(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    truth_used[bi] = est_used[bj] = true;
    fb.permutation[static_cast<std::size_t>(bi)] = static_cast<std::size_t>(bj);
  }

  Vector w(k);
  Matrix u(truth.means.rows(), k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto j = static_cast<Eigen::Index>(fb.permutation[static_cast<std::size_t>(i)]);
    w[i] = est.weights[j];
    u.col(i) = est.means.col(j);
    if (u.col(i).dot(truth.means.col(i)) < 0.0) u.col(i) = -u.col(i);
  }
  fb.weight_error = (w - truth.weights).norm() / truth.weights.norm();
  fb.mean_error = (u - truth.means).norm() / truth.means.norm();
  fb.total = fb.weight_error + fb.mean_error;
  return fb;
}

double fit_metric(const GmmModel& est, const GmmModel& truth) {
  return fit_breakdown(est, truth).total;
}

}  // namespace cpdgn
