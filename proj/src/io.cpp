#include "cpdgn/io.hpp"

#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "cpdgn/errors.hpp"
#include "json.hpp"

namespace cpdgn {

namespace {

using Json = nlohmann::ordered_json;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

struct Token {
  std::string_view text;
  std::size_t offset;
};

// Whitespace tokenizer that remembers byte offsets.
class Scanner {
 public:
  explicit Scanner(std::string_view s, std::size_t pos = 0) : s_(s), pos_(pos) {}

  std::optional<Token> next() {
    while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
    if (pos_ >= s_.size()) return std::nullopt;
    const std::size_t start = pos_;
    while (pos_ < s_.size() && !is_space(s_[pos_])) ++pos_;
    return Token{s_.substr(start, pos_ - start), start};
  }

 private:
  std::string_view s_;
  std::size_t pos_;
};

std::size_t parse_count(const Token& tok, const char* what) {
  std::size_t v = 0;
  const char* end = tok.text.data() + tok.text.size();
  auto [ptr, ec] = std::from_chars(tok.text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(std::string("malformed header: ") + what + " '" + std::string(tok.text) +
                         "' is not a non-negative integer",
                     tok.offset);
  }
  return v;
}

double parse_value(const Token& tok) {
  double v = 0.0;
  const char* end = tok.text.data() + tok.text.size();
  auto [ptr, ec] = std::from_chars(tok.text.data(), end, v);
  if (ec == std::errc::result_out_of_range) {
    throw ParseError("non-finite value '" + std::string(tok.text) + "'", tok.offset);
  }
  if (ec != std::errc() || ptr != end) {
    throw ParseError("invalid number '" + std::string(tok.text) + "'", tok.offset);
  }
  if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(tok.text) + "'", tok.offset);
  return v;
}

// Parses "L d_1 ... d_L" from the first line; returns dims.
Dims parse_header(std::string_view line) {
  Scanner sc(line);
  auto first = sc.next();
  if (!first) throw ParseError("malformed header: empty first line", 0);
  const std::size_t order = parse_count(*first, "order");
  if (order < 1) throw ParseError("malformed header: order must be at least 1", first->offset);
  Dims dims;
  for (std::size_t l = 0; l < order; ++l) {
    auto tok = sc.next();
    if (!tok) {
      throw ParseError("malformed header: expected " + std::to_string(order) + " dims, found " +
                           std::to_string(l),
                       line.size());
    }
    const std::size_t d = parse_count(*tok, "dim");
    if (d < 1) throw ParseError("malformed header: dims must be positive", tok->offset);
    dims.push_back(d);
  }
  if (auto extra = sc.next()) {
    throw ParseError("malformed header: unexpected token '" + std::string(extra->text) + "'",
                     extra->offset);
  }
  return dims;
}

std::string_view first_line(std::string_view s) {
  const auto nl = s.find('\n');
  return nl == std::string_view::npos ? s : s.substr(0, nl);
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, ptr);
}

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

// ---- JSON helpers ----------------------------------------------------------

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double as_double(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

const Json& required(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("report is missing field '") + key + "'");
  return *it;
}

Json options_json(const SolverOptions& o) {
  Json j;
  j["rank"] = o.rank;
  j["max_outer_iters"] = o.max_outer_iters;
  j["cg_max_iters"] = o.cg_max_iters;
  j["cg_rel_tol"] = o.cg_rel_tol;
  j["initial_mu"] = o.initial_mu ? Json(*o.initial_mu) : Json(nullptr);
  j["mu_grow"] = o.mu_grow;
  j["mu_shrink"] = o.mu_shrink;
  j["gain_low"] = o.gain_low;
  j["gain_high"] = o.gain_high;
  j["mu_min_ratio"] = o.mu_min_ratio;
  j["mu_max_ratio"] = o.mu_max_ratio;
  j["max_step_retries"] = o.max_step_retries;
  j["stop_rel_error"] = o.stop_rel_error;
  j["stop_step_norm"] = o.stop_step_norm;
  j["stop_improvement"] = o.stop_improvement;
  j["improvement_window"] = o.improvement_window;
  j["symmetric"] = o.symmetric;
  j["compress"] = o.compress;
  j["compress_tol"] = o.compress_tol;
  j["seed"] = o.seed;
  return j;
}

// Fields absent from the JSON keep their defaults.
SolverOptions options_from_json(const Json& j) {
  SolverOptions o;
  auto get = [&](const char* key, auto& field) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
      it->get_to(field);
    }
  };
  get("rank", o.rank);
  get("max_outer_iters", o.max_outer_iters);
  get("cg_max_iters", o.cg_max_iters);
  get("cg_rel_tol", o.cg_rel_tol);
  if (auto it = j.find("initial_mu"); it != j.end() && !it->is_null()) {
    o.initial_mu = it->get<double>();
  }
  get("mu_grow", o.mu_grow);
  get("mu_shrink", o.mu_shrink);
  get("gain_low", o.gain_low);
  get("gain_high", o.gain_high);
  get("mu_min_ratio", o.mu_min_ratio);
  get("mu_max_ratio", o.mu_max_ratio);
  get("max_step_retries", o.max_step_retries);
  get("stop_rel_error", o.stop_rel_error);
  get("stop_step_norm", o.stop_step_norm);
  get("stop_improvement", o.stop_improvement);
  get("improvement_window", o.improvement_window);
  get("symmetric", o.symmetric);
  get("compress", o.compress);
  get("compress_tol", o.compress_tol);
  get("seed", o.seed);
  return o;
}

Json trace_json(const IterationRecord& r) {
  Json j;
  j["iteration"] = r.iteration;
  j["rel_error"] = number(r.rel_error);
  j["mu"] = number(r.mu);
  j["gain"] = number(r.gain);
  j["cg_iters"] = r.cg_iters;
  j["step_norm"] = number(r.step_norm);
  j["grad_dot_step"] = number(r.grad_dot_step);
  j["accepted"] = r.accepted;
  j["model_exact"] = r.model_exact;
  return j;
}

IterationRecord trace_from_json(const Json& j) {
  IterationRecord r;
  r.iteration = required(j, "iteration").get<std::size_t>();
  r.rel_error = as_double(required(j, "rel_error"));
  r.mu = as_double(required(j, "mu"));
  r.gain = as_double(required(j, "gain"));
  r.cg_iters = required(j, "cg_iters").get<std::size_t>();
  r.step_norm = as_double(required(j, "step_norm"));
  r.grad_dot_step = as_double(j.value("grad_dot_step", Json(0.0)));
  r.accepted = required(j, "accepted").get<bool>();
  r.model_exact = j.value("model_exact", false);
  return r;
}

Json matrix_json(const Matrix& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  Json data = Json::array();
  for (double v : m.reshaped()) data.push_back(number(v));
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = required(j, "rows").get<Eigen::Index>();
  const auto cols = required(j, "cols").get<Eigen::Index>();
  const Json& data = required(j, "data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw SchemaError("factor matrix data has the wrong length");
  }
  Matrix m(rows, cols);
  Eigen::Index i = 0;
  for (const auto& v : data) m.reshaped()[i++] = as_double(v);
  return m;
}

}  // namespace

// ---- tensors ---------------------------------------------------------------

DenseTensor parse_tensor_text(std::string_view content) {
  const std::string_view header = first_line(content);
  Dims dims = parse_header(header);
  const std::size_t expected = product(dims);
  std::vector<double> values;
  values.reserve(expected);
  Scanner sc(content, header.size());
  while (auto tok = sc.next()) {
    if (values.size() == expected) {
      throw ParseError("entry count mismatch: more than " + std::to_string(expected) + " values",
                       tok->offset);
    }
    values.push_back(parse_value(*tok));
  }
  if (values.size() != expected) {
    throw ParseError("entry count mismatch: expected " + std::to_string(expected) +
                         " values, found " + std::to_string(values.size()),
                     content.size());
  }
  return DenseTensor(std::move(dims), std::move(values));
}

DenseTensor parse_tensor_binary(std::string_view content) {
  if (content.size() < kBinaryHeaderBytes) {
    throw ParseError("binary tensor shorter than its header", content.size());
  }
  if (content[kBinaryHeaderBytes - 1] != '\n' ||
      first_line(content).size() != kBinaryHeaderBytes - 1) {
    throw ParseError("binary header must be one line of exactly 256 bytes",
                     first_line(content).size());
  }
  Dims dims = parse_header(content.substr(0, kBinaryHeaderBytes - 1));
  const std::size_t n = product(dims);
  const std::size_t want = kBinaryHeaderBytes + 8 * n;
  if (content.size() != want) {
    throw ParseError("entry count mismatch: expected " + std::to_string(n) + " values (" +
                         std::to_string(want) + " bytes), file has " +
                         std::to_string(content.size()) + " bytes",
                     std::min(content.size(), want));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = kBinaryHeaderBytes + 8 * i;
    std::uint64_t bits = 0;
    std::memcpy(&bits, content.data() + off, 8);
    const double v = std::bit_cast<double>(to_little(bits));
    if (!std::isfinite(v)) throw ParseError("non-finite value", off);
    values[i] = v;
  }
  return DenseTensor(std::move(dims), std::move(values));
}

TensorFormat detect_format(std::string_view content) {
  if (content.size() < kBinaryHeaderBytes || content[kBinaryHeaderBytes - 1] != '\n' ||
      first_line(content).size() != kBinaryHeaderBytes - 1) {
    return TensorFormat::Text;
  }
  try {
    const Dims dims = parse_header(content.substr(0, kBinaryHeaderBytes - 1));
    if (content.size() == kBinaryHeaderBytes + 8 * product(dims)) return TensorFormat::Binary;
  } catch (const ParseError&) {
  }
  return TensorFormat::Text;
}

std::string format_tensor_text(const DenseTensor& t) {
  std::string out = std::to_string(t.order());
  for (auto d : t.dims()) out += ' ' + std::to_string(d);
  out += '\n';
  const std::size_t row = t.dims().empty() ? 1 : t.dims().back();
  const auto data = t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    append_double(out, data[i]);
    out += (i + 1) % row == 0 ? '\n' : ' ';
  }
  return out;
}

std::string format_tensor_binary(const DenseTensor& t) {
  std::string header = std::to_string(t.order());
  for (auto d : t.dims()) header += ' ' + std::to_string(d);
  if (header.size() > kBinaryHeaderBytes - 1) throw ShapeError("tensor header too long for binary format");
  header.resize(kBinaryHeaderBytes - 1, ' ');
  header += '\n';
  std::string out = std::move(header);
  out.reserve(kBinaryHeaderBytes + 8 * t.size());
  for (double v : t.data()) {
    const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.append(buf, 8);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move result into '" + path.string() + "'");
  }
}

DenseTensor read_tensor(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  return detect_format(content) == TensorFormat::Binary ? parse_tensor_binary(content)
                                                        : parse_tensor_text(content);
}

void write_tensor(const DenseTensor& t, const std::filesystem::path& path, TensorFormat format) {
  write_file_atomic(path, format == TensorFormat::Binary ? format_tensor_binary(t)
                                                         : format_tensor_text(t));
}

Matrix parse_samples_csv(std::string_view content) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      std::size_t count = 0, field = 0;
      while (true) {
        std::size_t comma = line.find(',', field);
        std::string_view cell = line.substr(field, comma == std::string_view::npos ? line.npos : comma - field);
        std::size_t lead = 0;
        while (lead < cell.size() && is_space(cell[lead])) ++lead;
        std::size_t trail = cell.size();
        while (trail > lead && is_space(cell[trail - 1])) --trail;
        values.push_back(parse_value(Token{cell.substr(lead, trail - lead), pos + field + lead}));
        ++count;
        if (comma == std::string_view::npos) break;
        field = comma + 1;
      }
      if (rows == 0) cols = count;
      if (count != cols) {
        throw ParseError("row has " + std::to_string(count) + " columns, expected " +
                             std::to_string(cols),
                         pos);
      }
      ++rows;
    }
    pos = end + 1;
  }
  if (rows == 0) throw ParseError("no samples", 0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * cols + j];
    }
  }
  return m;
}

std::string format_samples_csv(const Matrix& samples) {
  std::string out;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if (j > 0) out += ',';
      append_double(out, samples(i, j));
    }
    out += '\n';
  }
  return out;
}

// ---- reports ---------------------------------------------------------------

ResultRecord make_record(const MultiStartReport& rep, const SolverOptions& opts,
                         std::size_t restarts, ProblemInfo problem) {
  ResultRecord r;
  r.problem = std::move(problem);
  r.options = opts;
  r.restarts = restarts;
  r.trace = rep.best.trace;
  r.initial_rel_error = rep.best.initial_rel_error;
  r.final_rel_error = rep.best.final_rel_error;
  r.termination = rep.best.termination;
  r.wall_time_s = rep.wall_time_s;
  r.seed = rep.best.seed;
  r.best_index = rep.best_index;
  r.restart_errors = rep.final_errors;
  r.restart_seeds = rep.seeds;
  r.compressed_dims = rep.best.compressed_dims;
  r.factors = rep.best.operand.factors;
  return r;
}

std::string serialize_report(const ResultRecord& r) {
  Json j;
  j["schema"] = kReportSchema;
  Json problem;
  problem["name"] = r.problem.name;
  problem["source"] = r.problem.source;
  problem["dims"] = r.problem.dims;
  Json params = Json::object();
  for (const auto& [k, v] : r.problem.params) params[k] = number(v);
  problem["params"] = std::move(params);
  problem["seed"] = r.problem.seed;
  j["problem"] = std::move(problem);
  j["options"] = options_json(r.options);
  j["restarts"] = r.restarts;
  j["initial_rel_error"] = number(r.initial_rel_error);
  j["final_rel_error"] = number(r.final_rel_error);
  j["clean_rel_error"] = r.clean_rel_error ? number(*r.clean_rel_error) : Json(nullptr);
  j["termination"] = to_string(r.termination);
  j["wall_time_s"] = number(r.wall_time_s);
  j["seed"] = r.seed;
  j["best_index"] = r.best_index;
  Json errs = Json::array();
  for (double e : r.restart_errors) errs.push_back(number(e));
  j["restart_errors"] = std::move(errs);
  j["restart_seeds"] = r.restart_seeds;
  j["compressed_dims"] = r.compressed_dims;
  Json trace = Json::array();
  for (const auto& t : r.trace) trace.push_back(trace_json(t));
  j["trace"] = std::move(trace);
  Json factors = Json::array();
  for (const auto& f : r.factors) factors.push_back(matrix_json(f));
  j["factors"] = std::move(factors);
  return j.dump(2) + "\n";
}

ResultRecord parse_report(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw SchemaError("report must be a JSON object");
  const auto schema = j.find("schema");
  if (schema == j.end() || !schema->is_string()) throw SchemaError("report has no schema version");
  if (schema->get<std::string>() != kReportSchema) {
    throw SchemaError("unsupported report schema '" + schema->get<std::string>() + "', expected '" +
                      kReportSchema + "'");
  }
  try {
    ResultRecord r;
    const Json& p = required(j, "problem");
    r.problem.name = p.value("name", std::string());
    r.problem.source = p.value("source", std::string());
    r.problem.dims = p.value("dims", Dims{});
    if (auto it = p.find("params"); it != p.end()) {
      for (const auto& [k, v] : it->items()) r.problem.params[k] = as_double(v);
    }
    r.problem.seed = p.value("seed", std::uint64_t{0});
    r.options = options_from_json(required(j, "options"));
    r.restarts = j.value("restarts", std::size_t{1});
    r.initial_rel_error = as_double(j.value("initial_rel_error", Json(nullptr)));
    r.final_rel_error = as_double(required(j, "final_rel_error"));
    if (auto it = j.find("clean_rel_error"); it != j.end() && !it->is_null()) {
      r.clean_rel_error = it->get<double>();
    }
    r.termination = termination_from_string(required(j, "termination").get<std::string>());
    r.wall_time_s = as_double(j.value("wall_time_s", Json(0.0)));
    r.seed = j.value("seed", std::uint64_t{0});
    r.best_index = j.value("best_index", std::size_t{0});
    if (auto it = j.find("restart_errors"); it != j.end()) {
      for (const auto& e : *it) r.restart_errors.push_back(as_double(e));
    }
    r.restart_seeds = j.value("restart_seeds", std::vector<std::uint64_t>{});
    r.compressed_dims = j.value("compressed_dims", Dims{});
    for (const auto& t : required(j, "trace")) r.trace.push_back(trace_from_json(t));
    if (auto it = j.find("factors"); it != j.end()) {
      for (const auto& f : *it) r.factors.push_back(matrix_from_json(f));
    }
    return r;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed report: ") + e.what());
  } catch (const ParameterError& e) {
    throw SchemaError(std::string("malformed report: ") + e.what());
  }
}

void write_report(const ResultRecord& r, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_report(r));
}

ResultRecord read_report(const std::filesystem::path& path) { return parse_report(read_file(path)); }

std::string trace_csv(const std::vector<IterationRecord>& trace) {
  std::string out = "iteration,rel_error,mu,gain,cg_iters,step_norm,grad_dot_step,accepted,model_exact\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iteration) + ',';
    append_double(out, r.rel_error);
    out += ',';
    append_double(out, r.mu);
    out += ',';
    append_double(out, r.gain);
    out += ',' + std::to_string(r.cg_iters) + ',';
    append_double(out, r.step_norm);
    out += ',';
    append_double(out, r.grad_dot_step);
    out += std::string(",") + (r.accepted ? "1" : "0") + ',' + (r.model_exact ? "1" : "0") + '\n';
  }
  return out;
}

void write_trace_csv(const std::vector<IterationRecord>& trace, const std::filesystem::path& path) {
  write_file_atomic(path, trace_csv(trace));
}

}  // namespace cpdgn
