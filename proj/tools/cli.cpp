#include "cli.hpp"

#include <charconv>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"
#include "cpdgn/errors.hpp"
#include "cpdgn/generators.hpp"
#include "cpdgn/gmm.hpp"
#include "cpdgn/io.hpp"
#include "cpdgn/mlsvd.hpp"
#include "cpdgn/solver.hpp"
#include "json.hpp"

namespace cpdgn::cli {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kThreadsEnv = "CPDGN_NUM_THREADS";

// Bad flags or inputs detected after CLI11 parsing; exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::size_t rank = 1;
  std::uint64_t seed = 0;
  std::size_t maxiter = 200;
  double tol = 1e-12;
  std::size_t restarts = 1;
  bool symm = false;
  bool no_compress = false;
  std::string output;
  std::string format = "json";
};

struct GenParams {
  std::string name;
  std::vector<std::size_t> dims;
  double c = 0.5;
  double nu = 0.0;
  std::size_t m = 5;
  double k = 1.0;
  std::size_t n = 2;
};

void add_output_flags(CLI::App* app, Common& c) {
  app->add_option("-o,--output", c.output, "Write the result here instead of stdout");
  app->add_option("--format", c.format, "Output format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
}

void add_solver_flags(CLI::App* app, Common& c) {
  app->add_option("--rank", c.rank, "CPD rank R")->capture_default_str();
  app->add_option("--seed", c.seed, "Base random seed")->capture_default_str();
  app->add_option("--maxiter", c.maxiter, "Maximum outer iterations")->capture_default_str();
  app->add_option("--tol", c.tol, "Stop at this relative error")->capture_default_str();
  app->add_option("--restarts", c.restarts, "Seeded restarts, best kept")->capture_default_str();
  app->add_flag("--symm", c.symm, "Symmetric CPD (all factors equal)");
  app->add_flag("--no-compress", c.no_compress, "Skip the MLSVD compression");
  add_output_flags(app, c);
}

void add_generator_flags(CLI::App* app, GenParams& g) {
  app->add_option("generator", g.name, "random | collinear | bottleneck | border | matmul")
      ->required()
      ->check(CLI::IsMember({"random", "collinear", "bottleneck", "border", "matmul"}));
  app->add_option("--dims", g.dims, "Tensor dims, comma separated")->delimiter(',');
  app->add_option("--c", g.c, "Collinearity parameter")->capture_default_str();
  app->add_option("--nu", g.nu, "Gaussian noise level")->capture_default_str();
  app->add_option("--m", g.m, "Border rank: dimension")->capture_default_str();
  app->add_option("--k", g.k, "Border rank: sequence parameter")->capture_default_str();
  app->add_option("--n", g.n, "Matrix multiplication: matrix size N")->capture_default_str();
}

SolverOptions solver_options(const Common& c) {
  SolverOptions o;
  o.rank = c.rank;
  o.seed = c.seed;
  o.max_outer_iters = c.maxiter;
  o.stop_rel_error = c.tol;
  o.symmetric = c.symm;
  o.compress = !c.no_compress;
  try {
    o.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  if (c.restarts < 1) throw UsageError("--restarts must be at least 1");
  return o;
}

ProblemInstance make_instance(const GenParams& g, std::size_t rank, std::uint64_t seed) {
  auto dims3 = [&]() {
    if (g.dims.size() != 3) throw UsageError(g.name + " needs --dims m,n,p");
    return g.dims;
  };
  ProblemInstance inst;
  try {
    if (g.name == "random") {
      if (g.dims.empty()) throw UsageError("random needs --dims");
      inst = random_instance(g.dims, rank, seed);
    } else if (g.name == "collinear") {
      const auto d = dims3();
      inst = collinear_instance(d[0], d[1], d[2], rank, g.c, seed);
    } else if (g.name == "bottleneck") {
      const auto d = dims3();
      inst = bottleneck_instance(d[0], d[1], d[2], rank, g.c, seed);
    } else if (g.name == "border") {
      inst = border_rank_instance(g.m, g.k, seed);
    } else {
      inst = matmul_tensor(g.n);
    }
    if (g.nu > 0.0) inst = with_noise(std::move(inst), g.nu);
    else if (g.nu < 0.0) throw UsageError("--nu must be non-negative");
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  return inst;
}

ProblemInfo problem_info(const ProblemInstance& inst) {
  ProblemInfo p;
  p.name = inst.name;
  p.dims = inst.tensor.dims();
  p.params = inst.params;
  p.seed = inst.seed;
  return p;
}

void emit(const Common& c, const std::string& content, std::ostream& out) {
  if (c.output.empty()) {
    out << content;
  } else {
    write_file_atomic(c.output, content);
  }
}

DenseTensor load_tensor(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path);
  try {
    return read_tensor(path);
  } catch (const ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

Json matrix_columns(const Matrix& m) {
  Json cols = Json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Json col = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) col.push_back(m(i, j));
    cols.push_back(std::move(col));
  }
  return cols;
}

std::vector<Matrix> matrices_from_json(const Json& arr) {
  std::vector<Matrix> out;
  for (const auto& f : arr) {
    const auto rows = f.at("rows").get<Eigen::Index>();
    const auto cols = f.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    Eigen::Index i = 0;
    for (const auto& v : f.at("data")) m.reshaped()[i++] = v.get<double>();
    out.push_back(std::move(m));
  }
  return out;
}

Json matrices_json(const std::vector<Matrix>& ms) {
  Json arr = Json::array();
  for (const auto& m : ms) {
    Json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = std::vector<double>(m.data(), m.data() + m.size());
    arr.push_back(std::move(j));
  }
  return arr;
}

// Ground truth stored next to a generated tensor, if any.
std::optional<DenseTensor> sidecar_clean_tensor(const std::string& path, const Dims& dims) {
  const fs::path sidecar = path + ".json";
  if (!fs::exists(sidecar)) return std::nullopt;
  try {
    const Json j = Json::parse(read_file(sidecar));
    auto it = j.find("ground_truth");
    if (it == j.end() || it->is_null()) return std::nullopt;
    DenseTensor clean = to_full(KruskalOperand(matrices_from_json(*it)));
    if (clean.dims() != dims) return std::nullopt;
    return clean;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

double relative_to(const DenseTensor& reference, const KruskalOperand& k) {
  return norm(reference - to_full(k)) / norm(reference);
}

// ---- subcommands -----------------------------------------------------------

int cmd_decompose(const Common& c, const std::string& path, std::ostream& out) {
  const SolverOptions opts = solver_options(c);
  const DenseTensor t = load_tensor(path);
  const MultiStartReport rep = solve_cpd_multistart(t, opts, c.restarts);

  ProblemInfo info;
  info.name = "file";
  info.source = path;
  info.dims = t.dims();
  ResultRecord rec = make_record(rep, opts, c.restarts, info);
  if (auto clean = sidecar_clean_tensor(path, t.dims())) {
    rec.clean_rel_error = relative_to(*clean, rep.best.operand);
  }
  emit(c, c.format == "csv" ? trace_csv(rec.trace) : serialize_report(rec), out);
  return kExitOk;
}

int cmd_mlsvd(const Common& c, const std::string& path, double energy_tol,
              const std::vector<std::size_t>& ranks, const std::string& core_output,
              std::ostream& out) {
  if (!(energy_tol >= 0.0 && energy_tol < 1.0)) throw UsageError("--energy-tol must lie in [0, 1)");
  const DenseTensor t = load_tensor(path);
  MlsvdResult res = compute_mlsvd(t, energy_tol);
  if (!ranks.empty()) {
    try {
      res = truncate(res, ranks);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  const double rel_err = norm(t - res.reconstruct()) / norm(t);
  if (!core_output.empty()) write_tensor(res.core, core_output);

  std::string content;
  if (c.format == "csv") {
    content = "mode,index,singular_value\n";
    for (std::size_t l = 0; l < res.slice_energies.size(); ++l) {
      for (Eigen::Index i = 0; i < res.slice_energies[l].size(); ++i) {
        Json v = res.slice_energies[l][i];
        content += std::to_string(l) + ',' + std::to_string(i) + ',' + v.dump() + '\n';
      }
    }
  } else {
    Json j;
    j["schema"] = "cpdgn.mlsvd/1";
    j["source"] = path;
    j["dims"] = t.dims();
    j["energy_tol"] = energy_tol;
    j["truncated_dims"] = res.truncated_dims;
    j["input_norm"] = res.input_norm;
    j["reconstruction_error"] = rel_err;
    Json energies = Json::array();
    for (const auto& s : res.slice_energies) energies.push_back(std::vector<double>(s.begin(), s.end()));
    j["singular_values"] = std::move(energies);
    content = j.dump(2) + "\n";
  }
  emit(c, content, out);
  return kExitOk;
}

int cmd_gen(const Common& c, const GenParams& g, bool binary, const std::string& clean_output,
            std::ostream& out) {
  if (c.output.empty()) throw UsageError("gen needs --output");
  const ProblemInstance inst = make_instance(g, c.rank, c.seed);
  write_tensor(inst.tensor, c.output, binary ? TensorFormat::Binary : TensorFormat::Text);
  if (!clean_output.empty()) write_tensor(inst.clean_tensor, clean_output);

  Json j;
  j["schema"] = "cpdgn.instance/1";
  j["name"] = inst.name;
  Json params = Json::object();
  for (const auto& [k, v] : inst.params) params[k] = v;
  j["params"] = std::move(params);
  j["seed"] = inst.seed;
  j["dims"] = inst.tensor.dims();
  j["format"] = binary ? "binary" : "text";
  j["clean_norm"] = norm(inst.clean_tensor);
  j["ground_truth"] = inst.ground_truth ? matrices_json(inst.ground_truth->factors) : Json(nullptr);
  write_file_atomic(c.output + ".json", j.dump(2) + "\n");
  out << c.output << '\n';
  return kExitOk;
}

int cmd_bench(const Common& c, const GenParams& g, std::vector<std::size_t> sweep,
              const std::string& accept_ref, std::ostream& out) {
  SolverOptions opts = solver_options(c);
  if (sweep.empty()) sweep.push_back(c.maxiter);
  for (auto m : sweep) {
    if (m < 1) throw UsageError("--maxiter-sweep entries must be positive");
  }
  std::optional<double> threshold;
  if (!accept_ref.empty()) {
    if (!fs::exists(accept_ref)) throw UsageError("no such file: " + accept_ref);
    // Either a decompose report or an earlier bench output; for the latter
    // the best run is the reference.
    std::vector<ResultRecord> refs;
    try {
      const std::string text = read_file(accept_ref);
      const Json j = Json::parse(text);
      if (j.is_object() && j.value("schema", "") == "cpdgn.bench/1") {
        for (const auto& run : j.at("runs")) refs.push_back(parse_report(run.dump()));
      } else {
        refs.push_back(parse_report(text));
      }
    } catch (const Json::exception& e) {
      throw UsageError(accept_ref + ": " + e.what());
    } catch (const Error& e) {
      throw UsageError(accept_ref + ": " + e.what());
    }
    if (refs.empty()) throw UsageError(accept_ref + ": no runs");
    double eps = std::numeric_limits<double>::infinity();
    for (const auto& r : refs) eps = std::min(eps, r.clean_rel_error.value_or(r.final_rel_error));
    threshold = eps + eps / 100.0;
  }

  const ProblemInstance inst = make_instance(g, c.rank, c.seed);
  Json runs = Json::array();
  std::string csv = "maxiter,final_rel_error,clean_rel_error,iterations,wall_time_s,accepted\n";
  for (auto m : sweep) {
    opts.max_outer_iters = m;
    const MultiStartReport rep = solve_cpd_multistart(inst.tensor, opts, c.restarts);
    ResultRecord rec = make_record(rep, opts, c.restarts, problem_info(inst));
    rec.clean_rel_error = relative_to(inst.clean_tensor, rep.best.operand);
    Json j = Json::parse(serialize_report(rec));
    const bool accepted = threshold && *rec.clean_rel_error <= *threshold;
    if (threshold) j["accepted"] = accepted;
    runs.push_back(std::move(j));
    csv += std::to_string(m) + ',' + Json(rec.final_rel_error).dump() + ',' +
           Json(*rec.clean_rel_error).dump() + ',' + std::to_string(rec.trace.size()) + ',' +
           Json(rec.wall_time_s).dump() + ',' + (threshold ? (accepted ? "1" : "0") : "") + '\n';
  }
  if (c.format == "csv") {
    emit(c, csv, out);
  } else {
    Json j;
    j["schema"] = "cpdgn.bench/1";
    j["generator"] = g.name;
    if (threshold) {
      j["accept_ref"] = accept_ref;
      j["accept_threshold"] = *threshold;
    }
    j["runs"] = std::move(runs);
    emit(c, j.dump(2) + "\n", out);
  }
  return kExitOk;
}

struct GmmArgs {
  std::string samples_path;
  std::size_t dim = 10;
  std::size_t components = 3;
  double variance = 0.0059;
  std::size_t samples = 10000;
  bool exact = false;
  bool restarts_given = false;
};

Json model_json(const GmmModel& m) {
  Json j;
  j["weights"] = std::vector<double>(m.weights.begin(), m.weights.end());
  j["means"] = matrix_columns(m.means);
  j["variance"] = m.variance;
  return j;
}

int cmd_gmm(Common c, const GmmArgs& a, std::ostream& out) {
  if (!a.restarts_given) c.restarts = 100;
  if (a.components < 1) throw UsageError("--components must be at least 1");
  c.rank = a.components;
  SolverOptions opts = solver_options(c);

  std::optional<GmmModel> truth;
  GmmLearnResult res;
  std::size_t n = 0, d = 0;
  if (!a.samples_path.empty()) {
    if (!fs::exists(a.samples_path)) throw UsageError("no such file: " + a.samples_path);
    Matrix x;
    try {
      x = parse_samples_csv(read_file(a.samples_path));
    } catch (const ParseError& e) {
      throw UsageError(a.samples_path + ": " + e.what());
    }
    n = static_cast<std::size_t>(x.rows());
    d = static_cast<std::size_t>(x.cols());
    if (a.components > d) throw UsageError("--components exceeds the sample dimension");
    if (n < 2) throw UsageError("need at least 2 samples");
    const Moments mo = empirical_moments(x);
    res = learn_from_moment(mo.m3, a.components, mo.variance, opts, c.restarts);
  } else {
    if (a.components > a.dim) throw UsageError("--components exceeds --dim");
    if (!(a.variance >= 0.0)) throw UsageError("--variance must be non-negative");
    d = a.dim;
    truth = random_model(a.dim, a.components, a.variance, c.seed);
    if (a.exact) {
      res = learn_from_moment(population_m3(*truth), a.components, truth->variance, opts, c.restarts);
    } else {
      if (a.samples < 2) throw UsageError("--samples-n must be at least 2");
      n = a.samples;
      const SampleSet s = sample(*truth, a.samples, restart_seed(c.seed, 1u << 20));
      res = learn(s, a.components, opts, c.restarts);
    }
  }

  std::string content;
  if (c.format == "csv") {
    content = "component,weight";
    for (std::size_t i = 0; i < d; ++i) content += ",u" + std::to_string(i);
    content += '\n';
    for (Eigen::Index r = 0; r < res.estimate.means.cols(); ++r) {
      content += std::to_string(r) + ',' + Json(res.estimate.weights[r]).dump();
      for (Eigen::Index i = 0; i < res.estimate.means.rows(); ++i) {
        content += ',' + Json(res.estimate.means(i, r)).dump();
      }
      content += '\n';
    }
  } else {
    Json j;
    j["schema"] = "cpdgn.gmm/1";
    j["d"] = d;
    j["K"] = a.components;
    j["N"] = n;
    j["source"] = a.samples_path.empty() ? (a.exact ? "exact" : "synthetic") : a.samples_path;
    j["seed"] = c.seed;
    j["restarts"] = c.restarts;
    j["estimate"] = model_json(res.estimate);
    j["raw_weights"] = std::vector<double>(res.raw_weights.begin(), res.raw_weights.end());
    j["cpd_rel_error"] = res.cpd.best.final_rel_error;
    j["restart_errors"] = res.cpd.final_errors;
    j["wall_time_s"] = res.cpd.wall_time_s;
    if (truth) {
      j["truth"] = model_json(*truth);
      const FitBreakdown fb = fit_breakdown(res.estimate, *truth);
      Json fit;
      fit["weight_error"] = fb.weight_error;
      fit["mean_error"] = fb.mean_error;
      fit["total"] = fb.total;
      fit["permutation"] = fb.permutation;
      j["fit"] = std::move(fit);
    }
    content = j.dump(2) + "\n";
  }
  emit(c, content, out);
  return kExitOk;
}

void configure_threads() {
  const char* env = std::getenv(kThreadsEnv);
  if (!env || !*env) return;
  int n = 0;
  const char* end = env + std::char_traits<char>::length(env);
  auto [ptr, ec] = std::from_chars(env, end, n);
  if (ec != std::errc() || ptr != end || n < 1) {
    throw UsageError(std::string(kThreadsEnv) + " must be a positive integer");
  }
  omp_set_num_threads(n);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dense CPD by damped Gauss-Newton with MLSVD compression"};
  app.name(args.empty() ? "cpdgn" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);

  Common common;
  GenParams gen;

  auto* decompose = app.add_subcommand("decompose", "Rank-R CPD of a tensor file");
  std::string tensor_path;
  decompose->add_option("file", tensor_path, "Tensor file (text or binary)")->required();
  add_solver_flags(decompose, common);

  auto* mlsvd = app.add_subcommand("mlsvd", "Multilinear SVD of a tensor file");
  double energy_tol = 0.0;
  std::vector<std::size_t> ranks;
  std::string core_output;
  mlsvd->add_option("file", tensor_path, "Tensor file (text or binary)")->required();
  mlsvd->add_option("--energy-tol", energy_tol, "Relative truncation budget")->capture_default_str();
  mlsvd->add_option("--ranks", ranks, "Truncate to these multilinear ranks")->delimiter(',');
  mlsvd->add_option("--core-output", core_output, "Write the core tensor here");
  add_output_flags(mlsvd, common);

  auto* bench = app.add_subcommand("bench", "Generate a problem and solve it");
  std::vector<std::size_t> sweep;
  std::string accept_ref;
  add_generator_flags(bench, gen);
  add_solver_flags(bench, common);
  bench->add_option("--maxiter-sweep", sweep, "Run once per maxiter value")->delimiter(',');
  bench->add_option("--accept-ref", accept_ref,
                    "Reference report; a run is accepted when its error <= eps + eps/100");

  auto* gmm = app.add_subcommand("gmm", "Learn a Gaussian mixture from third moments");
  GmmArgs gmm_args;
  gmm->add_option("--samples", gmm_args.samples_path, "CSV file, one sample per row");
  gmm->add_option("--dim", gmm_args.dim, "Synthetic: dimension d")->capture_default_str();
  gmm->add_option("--components", gmm_args.components, "Number of components K")
      ->capture_default_str();
  gmm->add_option("--variance", gmm_args.variance, "Synthetic: sigma^2")->capture_default_str();
  gmm->add_option("--samples-n", gmm_args.samples, "Synthetic: number of samples")
      ->capture_default_str();
  gmm->add_flag("--exact", gmm_args.exact, "Synthetic: use the exact third moment");
  add_solver_flags(gmm, common);
  gmm->get_option("--rank")->description("Ignored, the rank is --components");
  gmm->get_option("--restarts")->description("Seeded restarts, best kept (default 100)");

  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic tensor and its JSON sidecar");
  bool binary = false;
  std::string clean_output;
  add_generator_flags(gen_cmd, gen);
  gen_cmd->add_option("--rank", common.rank, "Rank of the generated factors")->capture_default_str();
  gen_cmd->add_option("--seed", common.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("-o,--output", common.output, "Tensor file to write")->required();
  gen_cmd->add_option("--clean-output", clean_output, "Also write the noise-free tensor");
  gen_cmd->add_flag("--binary", binary, "Binary tensor format");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("cpdgn");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    configure_threads();
    if (*decompose) return cmd_decompose(common, tensor_path, out);
    if (*mlsvd) return cmd_mlsvd(common, tensor_path, energy_tol, ranks, core_output, out);
    if (*bench) return cmd_bench(common, gen, sweep, accept_ref, out);
    if (*gmm) {
      gmm_args.restarts_given = gmm->count("--restarts") > 0;
      return cmd_gmm(common, gmm_args, out);
    }
    return cmd_gen(common, gen, binary, clean_output, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace cpdgn::cli
