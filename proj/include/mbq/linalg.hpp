#pragma once

// Quantized matrix-vector products over packed sign planes, the dense
// reference products, and the operation-count models.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mbq/matrix.hpp"
#include "mbq/quantizer.hpp"

namespace mbq {

struct GemvCost {
  std::uint64_t binary_ops = 0;
  std::uint64_t nonbinary_ops = 0;

  friend bool operator==(const GemvCost&, const GemvCost&) = default;
};

/// y[r] = sum_i sum_j W.alpha[r][i] * a.alpha[j] * <W.plane_i[r], a.plane_j>,
/// evaluated one (weight plane, activation plane) pair at a time.
std::vector<double> quantized_gemv(const QuantizedMatrix& w, const MultiBitCode& a);

/// Same product with the weight planes treated as one (k_w*m) x n binary
/// matrix: every binary row is read once against all k_h activation planes,
/// then the k_w partial vectors are scaled and summed. Rows may be split across
/// `threads` workers without changing the result.
std::vector<double> quantized_gemv_concat(const QuantizedMatrix& w, const MultiBitCode& a,
                                          unsigned threads = 1);

/// Reference product with sequential per-row summation in double precision.
template <typename T>
std::vector<double> dense_gemv(const Matrix<T>& w, std::span<const double> x);

/// Single-precision dense baseline used for timing. Each row is reduced with
/// eight interleaved partial sums in a fixed order.
void dense_gemv_f32(const MatrixF& w, std::span<const float> x, std::span<float> y) noexcept;

/// Dense-to-quantized cost ratio for a k_w-bit m x n matrix times a k_h-bit
/// vector, with binary operations discounted 32x.
double theoretical_speedup(std::uint64_t m, std::uint64_t n, std::uint64_t k_w, std::uint64_t k_h);

/// Operations to quantize an n-vector to k bits with T alternating cycles:
/// (2*T*k^2*n binary, 2*(T+1)*k*n non-binary).
GemvCost quantization_cost(std::uint64_t n, std::uint64_t k, std::uint64_t cycles);

/// Operation counts behind theoretical_speedup (activation quantized with T=2).
GemvCost quantized_gemv_cost(std::uint64_t m, std::uint64_t n, std::uint64_t k_w, std::uint64_t k_h);

}  // namespace mbq
