#pragma once

// Multi-bit quantization: approximate a real vector w by sum_i alpha_i * b_i
// with b_i in {-1,+1}^n, plus the uniform, balanced and ternary baselines.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbq/bitplane.hpp"
#include "mbq/matrix.hpp"

namespace mbq {

inline constexpr int kMaxCodebookBits = 16;
inline constexpr int kDefaultCycles = 2;

/// k coefficients and k sign planes of equal length. Canonical form keeps the
/// coefficients nonnegative and in descending order.
struct MultiBitCode {
  std::vector<double> alphas;
  std::vector<PackedBitPlane> planes;

  /// The code of the zero vector: zero coefficients, all-positive planes.
  static MultiBitCode zeros(std::size_t n, int k);

  int bits() const noexcept { return static_cast<int>(alphas.size()); }
  std::size_t size() const noexcept { return planes.empty() ? 0 : planes.front().size(); }

  std::vector<double> reconstruct() const;
  /// Flip planes with negative coefficients, then sort descending (stable).
  void canonicalize();
  bool is_canonical() const noexcept;

  friend bool operator==(const MultiBitCode&, const MultiBitCode&) = default;
};

/// The 2^k reconstruction values in ascending order. Bit i of patterns[j] is
/// set when plane i carries +1 for values[j].
struct Codebook {
  int bits = 0;
  std::vector<double> values;
  std::vector<std::uint32_t> patterns;

  int sign(std::size_t j, int plane) const noexcept { return (patterns[j] >> plane) & 1u ? 1 : -1; }
};

struct TernaryCode {
  double alpha = 0.0;
  std::vector<std::int8_t> trits;

  std::vector<double> reconstruct() const;
};

struct UniformResult {
  std::vector<double> values;
  double scale = 1.0;
};

struct RefitResult {
  std::vector<double> alphas;
  /// Set when the Gram matrix was singular and the ridge fallback was used.
  bool regularized = false;
};

/// Alternating quantization with the per-half-step residual history.
struct AlternatingTrace {
  MultiBitCode code;
  /// residuals[0] is the greedy initialization; then two entries per cycle
  /// (after the coefficient refit, after the code reassignment). Cycles stop
  /// early once the residual is exactly zero.
  std::vector<double> residuals;
  bool regularized = false;
};

/// Uniform k-bit quantizer. With `unit_scale` the input is used as-is
/// (clamped to [-1,1]); otherwise it is scaled by its max-abs value.
UniformResult uniform_quantize(std::span<const double> x, int k, bool unit_scale = false);

/// The uniform quantizer's output written as sum_i alpha_i * b_i, with
/// alpha_i = scale * 2^i / (2^k - 1) (canonicalized).
MultiBitCode uniform_quantize_code(std::span<const double> x, int k, bool unit_scale = false);

/// Ternary code as two sign planes with equal coefficients alpha/2.
MultiBitCode ternary_as_code(const TernaryCode& code);

/// Equal-mass quantile intervals mapped linearly onto the uniform codes.
std::vector<double> balanced_quantize(std::span<const double> x, int k);

/// Residual binarization: alpha_i = mean|r_{i-1}|, b_i = sign(r_{i-1}).
MultiBitCode greedy_quantize(std::span<const double> w, int k);

/// Greedy rounds with a least-squares refit of all coefficients after each.
MultiBitCode refined_greedy_quantize(std::span<const double> w, int k);

/// Least-squares coefficients for fixed planes via the k x k normal equations.
/// Coefficients are returned in plane order and are not canonicalized.
RefitResult refit_coefficients(std::span<const PackedBitPlane> planes, std::span<const double> w);

/// Throws std::invalid_argument for more than kMaxCodebookBits coefficients.
Codebook build_codebook(std::span<const double> alphas);

/// Nearest codebook index by recursive halving; ties go to the upper half.
inline std::size_t bst_assign(double w, const Codebook& codebook) noexcept {
  std::size_t lo = 0;
  std::size_t size = codebook.values.size();
  while (size > 1) {
    const std::size_t half = size / 2;
    const double below = codebook.values[lo + half - 1];
    const double above = codebook.values[lo + half];
    // w >= midpoint, phrased as a distance comparison so the decision matches
    // |w - below| vs |w - above| exactly.
    lo += half & -static_cast<std::size_t>(w - below >= above - w);
    size = half;
  }
  return lo;
}

/// Per-entry nearest code, returned as sign planes in coefficient order.
std::vector<PackedBitPlane> assign_codes(std::span<const double> w, const Codebook& codebook);

MultiBitCode alternating_quantize(std::span<const double> w, int k, int cycles = kDefaultCycles);
AlternatingTrace alternating_quantize_traced(std::span<const double> w, int k,
                                             int cycles = kDefaultCycles);

TernaryCode ternary_quantize(std::span<const double> w);

/// ||w - w_hat||^2 / ||w||^2. Throws for mismatched sizes or a zero-norm w.
double relative_mse(std::span<const double> w, std::span<const double> w_hat);

/// ||w - w_hat||^2.
double squared_residual(std::span<const double> w, std::span<const double> w_hat);

// ---------------------------------------------------------------------------
// Row-wise matrix quantization
// ---------------------------------------------------------------------------

/// A matrix quantized row by row. Plane i of row r occupies words
/// [(i*m + r) * words_per_row, ... + words_per_row), so the planes form one
/// (k*m) x n binary matrix.
class QuantizedMatrix {
 public:
  QuantizedMatrix() = default;
  /// Validates shape, canonical coefficients and zero padding.
  QuantizedMatrix(std::size_t rows, std::size_t cols, int bits, std::vector<float> row_alphas,
                  std::vector<std::uint64_t> plane_words);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int bits() const noexcept { return bits_; }
  std::size_t words_per_row() const noexcept { return words_for(cols_); }

  std::span<const float> row_alphas(std::size_t r) const noexcept {
    return {alphas_.data() + r * static_cast<std::size_t>(bits_), static_cast<std::size_t>(bits_)};
  }
  std::span<const std::uint64_t> plane_row(int plane, std::size_t r) const noexcept {
    return {words_.data() + (static_cast<std::size_t>(plane) * rows_ + r) * words_per_row(),
            words_per_row()};
  }
  std::span<const float> alphas() const noexcept { return alphas_; }
  std::span<const std::uint64_t> plane_words() const noexcept { return words_; }

  MultiBitCode row_code(std::size_t r) const;
  std::vector<double> reconstruct_row(std::size_t r) const;
  MatrixD reconstruct() const;

  friend bool operator==(const QuantizedMatrix&, const QuantizedMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int bits_ = 0;
  std::vector<float> alphas_;
  std::vector<std::uint64_t> words_;
};

enum class Method { kUniform, kBalanced, kGreedy, kRefined, kAlternating, kTernary };

const char* method_name(Method method) noexcept;
/// Throws std::invalid_argument for unknown names.
Method parse_method(const std::string& name);

/// Row-wise alternating quantization. Rows are distributed over `threads`
/// workers; the result does not depend on the thread count.
template <typename T>
QuantizedMatrix quantize_matrix_rowwise(const Matrix<T>& w, int k, int cycles = kDefaultCycles,
                                        unsigned threads = 1);

/// Row-wise quantization with any method whose output is a sum of sign planes.
/// Uniform rows use the binary expansion of the level index; ternary rows are
/// stored as 2-bit codes with equal coefficients. Balanced levels carry an
/// offset and are rejected with std::invalid_argument.
template <typename T>
QuantizedMatrix quantize_matrix_rowwise(const Matrix<T>& w, int k, Method method, int cycles,
                                        unsigned threads = 1);

/// Packs per-row codes into a QuantizedMatrix (coefficients rounded to float).
QuantizedMatrix assemble_rows(std::size_t cols, int k, std::span<const MultiBitCode> rows);

}  // namespace mbq
