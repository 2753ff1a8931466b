#pragma once

// Benchmark harness and command implementations behind the mbq tool.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbq/quantizer.hpp"
#include "mbq/rnn.hpp"
#include "mbq/ste.hpp"

namespace mbq {

inline constexpr int kReportVersion = 1;

/// Methods compared in the approximation table, in column order.
inline constexpr Method kCompareMethods[] = {Method::kUniform, Method::kBalanced, Method::kGreedy,
                                             Method::kRefined, Method::kAlternating};

struct CompareConfig {
  std::vector<int> bits{2, 3, 4};
  std::size_t trials = 1;
  std::size_t n = 100000;  // synthetic vector length
  std::uint64_t seed = 1;
  int cycles = kDefaultCycles;
  /// When set, every tensor of this MBQW file is quantized row by row instead
  /// of drawing Gaussian vectors.
  std::optional<std::filesystem::path> weights;
};

struct CompareRow {
  std::string source;  // "gaussian" or the tensor name
  Method method = Method::kAlternating;
  int bits = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t trials = 0;
};

struct CompareReport {
  std::uint64_t seed = 0;
  std::vector<CompareRow> rows;
};

/// Relative MSE of each method at each bit width.
CompareReport compare_methods(const CompareConfig& config);

/// One uniform/balanced/greedy/refined/alternating value for a single vector.
double method_relative_mse(std::span<const double> w, Method method, int k, int cycles);

std::string to_tsv(const CompareReport& report);
std::string to_json(const CompareReport& report);

struct GemvBenchConfig {
  std::size_t m = 4096;
  std::size_t n = 1024;
  int weight_bits = 2;
  int activation_bits = 2;
  int cycles = kDefaultCycles;
  std::size_t repeats = 30;
  std::size_t warmup = 5;
  std::uint64_t seed = 1;
};

struct GemvBenchReport {
  GemvBenchConfig config;
  double dense_ms = 0.0;      // median dense f32 product
  double quant_ms = 0.0;      // median on-line activation quantization
  double total_ms = 0.0;      // median quantization + packed product
  double quant_share = 0.0;   // quant_ms / total_ms
  double speedup = 0.0;       // dense_ms / total_ms
  double theoretical = 0.0;   // cost-model ratio
  double max_abs_error = 0.0; // packed product vs dense product of the reconstruction
  std::string machine;
};

/// Single-threaded timing of the dense baseline against on-line activation
/// quantization followed by the packed product.
GemvBenchReport bench_gemv(const GemvBenchConfig& config);

std::string to_tsv(const GemvBenchReport& report);
std::string to_json(const GemvBenchReport& report);

/// CPU model and compiler, best effort.
std::string machine_descriptor();

struct QuantizeSummary {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double relative_mse = 0.0;
};

/// MBQW -> MBQQ. Every rank-2 tensor is quantized row-wise with `method`;
/// other tensors are copied as dense entries.
std::vector<QuantizeSummary> quantize_file(const std::filesystem::path& in, const std::filesystem::path& out,
                                           int k, int cycles, Method method, unsigned threads = 1);

/// Evaluates an MBQW or MBQQ model, chosen by the file's magic.
LmEvalReport eval_ppw_file(const std::filesystem::path& model, const std::filesystem::path& tokens,
                           int activation_bits, int cycles);

std::string to_json(const LmEvalReport& report, std::uint64_t seed);
std::string to_json(const TrainReport& report, const TrainConfig& config, const TaskSpec& task);

struct SelfCheckResult {
  std::string name;
  bool passed = false;
  std::size_t trials = 0;
  std::string detail;
};

/// Oracle suites: exhaustive code assignment, alternating descent, kernel
/// equivalence and format round-trips. `level` 1 is quick, 10 runs ten times
/// the trials.
std::vector<SelfCheckResult> selfcheck(int level, std::uint64_t seed, std::ostream* log = nullptr);

}  // namespace mbq
