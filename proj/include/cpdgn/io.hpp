#pragma once

// Tensor files and JSON/CSV result records.
//
// Text tensor format:
//     L d_1 ... d_L
//     v_0 v_1 ...          (prod d values, row-major, any whitespace)
// Binary format: the same header line space-padded to exactly 256 bytes
// (byte 255 is '\n'), followed by the values as little-endian 64-bit floats.
//
// Every writer goes through write_file_atomic: the content lands in a
// temporary file next to the target which is then renamed over it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cpdgn/solver.hpp"
#include "cpdgn/tensor.hpp"

namespace cpdgn {

inline constexpr std::size_t kBinaryHeaderBytes = 256;
inline constexpr const char* kReportSchema = "cpdgn.result/1";

enum class TensorFormat { Text, Binary };

/// Throws ParseError (with byte offset) on malformed input.
DenseTensor parse_tensor_text(std::string_view content);
DenseTensor parse_tensor_binary(std::string_view content);
/// Binary when the first line is exactly kBinaryHeaderBytes long and the
/// size matches the header, text otherwise.
TensorFormat detect_format(std::string_view content);

std::string format_tensor_text(const DenseTensor& t);
std::string format_tensor_binary(const DenseTensor& t);

/// Throws Error when the file cannot be opened.
DenseTensor read_tensor(const std::filesystem::path& path);
void write_tensor(const DenseTensor& t, const std::filesystem::path& path,
                  TensorFormat format = TensorFormat::Text);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Samples as CSV: one row per line, comma separated, equal column counts.
/// Blank lines are skipped. Throws ParseError with the byte offset.
Matrix parse_samples_csv(std::string_view content);
std::string format_samples_csv(const Matrix& samples);

struct ProblemInfo {
  std::string name;    ///< generator name or "file"
  std::string source;  ///< input path, empty for generated problems
  Dims dims;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  friend bool operator==(const ProblemInfo&, const ProblemInfo&) = default;
};

struct ResultRecord {
  ProblemInfo problem;
  SolverOptions options;
  std::size_t restarts = 1;

  std::vector<IterationRecord> trace;  ///< of the selected restart
  double initial_rel_error = 0.0;
  double final_rel_error = 0.0;
  /// Error against the noise-free tensor when the problem has one.
  std::optional<double> clean_rel_error;
  Termination termination = Termination::MaxIterations;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;  ///< seed of the selected restart
  std::size_t best_index = 0;
  std::vector<double> restart_errors;
  std::vector<std::uint64_t> restart_seeds;
  Dims compressed_dims;
  std::vector<Matrix> factors;
};

ResultRecord make_record(const MultiStartReport& rep, const SolverOptions& opts,
                         std::size_t restarts, ProblemInfo problem);

/// Pretty-printed JSON. Doubles are written in shortest round-trip form.
std::string serialize_report(const ResultRecord& r);
/// Ignores unknown fields; SchemaError on a missing or different schema
/// version or a missing required field.
ResultRecord parse_report(std::string_view json);

void write_report(const ResultRecord& r, const std::filesystem::path& path);
ResultRecord read_report(const std::filesystem::path& path);

/// Header plus one row per iteration.
std::string trace_csv(const std::vector<IterationRecord>& trace);
void write_trace_csv(const std::vector<IterationRecord>& trace, const std::filesystem::path& path);

}  // namespace cpdgn
