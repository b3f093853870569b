#include "cpdgn/generators.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/QR>

#include "cpdgn/errors.hpp"

namespace cpdgn {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (auto& v : m.reshaped()) v = normal(rng);
  return m;
}

// Thin Q factor of a Gaussian rows x cols matrix.
Matrix random_orthonormal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(rows, cols, rng));
  return qr.householderQ() * Matrix::Identity(static_cast<Eigen::Index>(rows),
                                              static_cast<Eigen::Index>(cols));
}

void check_rank(std::size_t m, std::size_t n, std::size_t p, std::size_t rank) {
  if (rank < 1) throw ParameterError("rank must be at least 1");
  if (rank > std::min({m, n, p})) {
    throw ParameterError("rank " + std::to_string(rank) + " exceeds min(m, n, p) = " +
                         std::to_string(std::min({m, n, p})));
  }
}

ProblemInstance from_operand(KruskalOperand k, std::string name, std::uint64_t seed) {
  ProblemInstance inst;
  inst.clean_tensor = to_full(k);
  inst.tensor = inst.clean_tensor;
  inst.ground_truth = std::move(k);
  inst.name = std::move(name);
  inst.seed = seed;
  return inst;
}

// Factor whose columns [first, last) are q_1 + c q_i and the others q_i.
Matrix collinear_factor(std::size_t rows, std::size_t rank, double c, std::size_t last,
                        std::mt19937_64& rng) {
  const Matrix q = random_orthonormal(rows, rank, rng);
  Matrix x = q;
  for (std::size_t i = 0; i < last; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    x.col(col) = q.col(0) + c * q.col(col);
  }
  return x;
}

}  // namespace

ProblemInstance random_instance(const Dims& dims, std::size_t rank, std::uint64_t seed) {
  if (rank < 1) throw ParameterError("rank must be at least 1");
  if (dims.empty()) throw ShapeError("random_instance needs at least one mode");
  std::mt19937_64 rng(seed);
  std::vector<Matrix> f;
  for (auto d : dims) f.push_back(gaussian(d, rank, rng));
  ProblemInstance inst = from_operand(KruskalOperand(std::move(f)), "random", seed);
  inst.params["R"] = static_cast<double>(rank);
  return inst;
}

ProblemInstance collinear_instance(std::size_t m, std::size_t n, std::size_t p, std::size_t rank,
                                   double c, std::uint64_t seed) {
  check_rank(m, n, p, rank);
  if (!(c >= 0.0)) throw ParameterError("collinearity c must be non-negative");
  std::mt19937_64 rng(seed);
  std::vector<Matrix> f;
  for (auto d : {m, n, p}) f.push_back(collinear_factor(d, rank, c, rank, rng));
  ProblemInstance inst = from_operand(KruskalOperand(std::move(f)), "collinear", seed);
  inst.params = {{"m", double(m)}, {"n", double(n)}, {"p", double(p)}, {"R", double(rank)},
                 {"c", c}};
  return inst;
}

ProblemInstance bottleneck_instance(std::size_t m, std::size_t n, std::size_t p,
                                    std::size_t rank, double c, std::uint64_t seed) {
  if (rank < 2) throw ParameterError("a double bottleneck needs rank >= 2");
  check_rank(m, n, p, rank);
  if (!(c >= 0.0)) throw ParameterError("collinearity c must be non-negative");
  std::mt19937_64 rng(seed);
  std::vector<Matrix> f;
  for (auto d : {m, n, p}) f.push_back(collinear_factor(d, rank, c, 2, rng));
  ProblemInstance inst = from_operand(KruskalOperand(std::move(f)), "bottleneck", seed);
  inst.params = {{"m", double(m)}, {"n", double(n)}, {"p", double(p)}, {"R", double(rank)},
                 {"c", c}};
  return inst;
}

ProblemInstance border_rank_instance(std::size_t m, double k, std::uint64_t seed) {
  if (!(k > 0.0)) throw ParameterError("border rank parameter k must be positive");
  if (m < 2) throw ParameterError("border rank tensor needs m >= 2");
  std::mt19937_64 rng(seed);
  std::vector<Vector> x, y;
  for (int mode = 0; mode < 3; ++mode) {
    const Matrix q = random_orthonormal(m, 2, rng);
    x.push_back(q.col(0));
    y.push_back(q.col(1));
  }
  const auto mi = static_cast<Eigen::Index>(m);
  std::vector<Matrix> f(3, Matrix(mi, 3));
  // Term r puts y in mode 2 - r and x elsewhere.
  for (int mode = 0; mode < 3; ++mode) {
    for (int r = 0; r < 3; ++r) f[mode].col(r) = (mode == 2 - r) ? y[mode] : x[mode];
  }
  ProblemInstance inst = from_operand(KruskalOperand(std::move(f)), "border_rank", seed);

  DenseTensor tk = k * outer({x[0] + y[0] / k, x[1] + y[1] / k, x[2] + y[2] / k});
  tk -= k * outer({x[0], x[1], x[2]});
  inst.auxiliary = std::move(tk);
  inst.params = {{"m", double(m)}, {"k", k}, {"R", 2.0}};
  return inst;
}

ProblemInstance matmul_tensor(std::size_t n) {
  if (n < 1) throw ParameterError("matrix size N must be at least 1");
  const auto nn = static_cast<Eigen::Index>(n * n);
  const auto terms = static_cast<Eigen::Index>(n * n * n);
  std::vector<Matrix> f(3, Matrix::Zero(nn, terms));
  auto vec_index = [n](std::size_t i, std::size_t j) {
    return static_cast<Eigen::Index>(i + j * n);
  };
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k, ++r) {
        f[0](vec_index(i, j), r) = 1.0;
        f[1](vec_index(j, k), r) = 1.0;
        f[2](vec_index(i, k), r) = 1.0;
      }
    }
  }
  ProblemInstance inst = from_operand(KruskalOperand(std::move(f)), "matmul", 0);
  inst.params = {{"N", double(n)},
                 {"R", std::ceil(std::pow(double(n), std::log2(7.0)) - 1e-9)}};
  return inst;
}

DenseTensor add_noise(const DenseTensor& t, double nu, std::uint64_t seed) {
  if (!(nu >= 0.0)) throw ParameterError("noise level must be non-negative");
  DenseTensor out = t;
  if (nu == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.data()) v += nu * normal(rng);
  return out;
}

ProblemInstance with_noise(ProblemInstance inst, double nu) {
  std::seed_seq seq{static_cast<std::uint32_t>(inst.seed),
                    static_cast<std::uint32_t>(inst.seed >> 32), 0x6e6f6973u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  const std::uint64_t noise_seed = (std::uint64_t{words[0]} << 32) | words[1];
  inst.tensor = add_noise(inst.clean_tensor, nu, noise_seed);
  inst.params["nu"] = nu;
  return inst;
}

}  // namespace cpdgn
