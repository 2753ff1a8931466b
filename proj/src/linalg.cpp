#include "mbq/linalg.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <stdexcept>
#include <string>
#include <thread>

namespace mbq {

namespace {

void check_shapes(const QuantizedMatrix& w, const MultiBitCode& a) {
  if (a.bits() < 1) throw std::invalid_argument("activation code has no planes");
  if (w.cols() != a.size()) {
    throw std::invalid_argument("dimension mismatch: matrix has " + std::to_string(w.cols()) +
                                " columns, vector has " + std::to_string(a.size()) + " entries");
  }
}

// Integer dots of `rows` consecutive binary rows against KH activation planes,
// folded with the activation coefficients.
template <int KH>
void fold_rows(const std::uint64_t* rows_base, std::size_t first, std::size_t last, std::size_t wpr,
               std::size_t n, const std::uint64_t* const* act, const double* beta, std::int64_t fault,
               double* out) {
  const auto pad = static_cast<std::int64_t>(wpr * kWordBits - n);
  const auto nn = static_cast<std::int64_t>(n);
  for (std::size_t r = first; r < last; ++r) {
    const std::uint64_t* row = rows_base + r * wpr;
    std::array<std::int64_t, KH> matches{};
    for (std::size_t w = 0; w < wpr; ++w) {
      const std::uint64_t x = row[w];
      for (int j = 0; j < KH; ++j) matches[j] += std::popcount(~(x ^ act[j][w]));
    }
    double s = 0.0;
    for (int j = 0; j < KH; ++j) {
      const std::int64_t dot = 2 * (matches[j] - pad) - nn + fault;
      s += beta[j] * static_cast<double>(dot);
    }
    out[r] = s;
  }
}

void fold_rows_generic(const std::uint64_t* rows_base, std::size_t first, std::size_t last, std::size_t wpr,
                       std::size_t n, const std::uint64_t* const* act, const double* beta, int kh,
                       std::int64_t fault, double* out) {
  const auto pad = static_cast<std::int64_t>(wpr * kWordBits - n);
  const auto nn = static_cast<std::int64_t>(n);
  for (std::size_t r = first; r < last; ++r) {
    const std::uint64_t* row = rows_base + r * wpr;
    double s = 0.0;
    for (int j = 0; j < kh; ++j) {
      std::int64_t matches = 0;
      for (std::size_t w = 0; w < wpr; ++w) matches += std::popcount(~(row[w] ^ act[j][w]));
      s += beta[j] * static_cast<double>(2 * (matches - pad) - nn + fault);
    }
    out[r] = s;
  }
}

void fold_dispatch(int kh, const std::uint64_t* rows_base, std::size_t first, std::size_t last, std::size_t wpr,
                   std::size_t n, const std::uint64_t* const* act, const double* beta, std::int64_t fault,
                   double* out) {
  switch (kh) {
    case 1: fold_rows<1>(rows_base, first, last, wpr, n, act, beta, fault, out); break;
    case 2: fold_rows<2>(rows_base, first, last, wpr, n, act, beta, fault, out); break;
    case 3: fold_rows<3>(rows_base, first, last, wpr, n, act, beta, fault, out); break;
    case 4: fold_rows<4>(rows_base, first, last, wpr, n, act, beta, fault, out); break;
    default: fold_rows_generic(rows_base, first, last, wpr, n, act, beta, kh, fault, out); break;
  }
}

}  // namespace

std::vector<double> quantized_gemv(const QuantizedMatrix& w, const MultiBitCode& a) {
  check_shapes(w, a);
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  std::vector<double> y(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const auto alphas = w.row_alphas(r);
    double acc = 0.0;
    for (int i = 0; i < w.bits(); ++i) {
      const auto row = w.plane_row(i, r);
      for (int j = 0; j < a.bits(); ++j) {
        const auto dot = xnor_popcount_dot(row, a.planes[static_cast<std::size_t>(j)].words(), n);
        acc += static_cast<double>(alphas[static_cast<std::size_t>(i)]) * a.alphas[static_cast<std::size_t>(j)] *
               static_cast<double>(dot);
      }
    }
    y[r] = acc;
  }
  return y;
}

std::vector<double> quantized_gemv_concat(const QuantizedMatrix& w, const MultiBitCode& a, unsigned threads) {
  check_shapes(w, a);
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const std::size_t wpr = w.words_per_row();
  const int kw = w.bits();
  const int kh = a.bits();

  std::vector<const std::uint64_t*> act(static_cast<std::size_t>(kh));
  for (int j = 0; j < kh; ++j) act[static_cast<std::size_t>(j)] = a.planes[static_cast<std::size_t>(j)].words().data();
  const std::int64_t fault = testing::popcount_fault_enabled() ? 2 : 0;

  // partial[i*m + r]: binary row (i, r) folded against the activation code.
  std::vector<double> partial(static_cast<std::size_t>(kw) * m);
  const std::uint64_t* base = w.plane_words().data();
  const std::size_t total_rows = static_cast<std::size_t>(kw) * m;
  auto run = [&](std::size_t first, std::size_t last) {
    fold_dispatch(kh, base, first, last, wpr, n, act.data(), a.alphas.data(), fault, partial.data());
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total_rows));
  if (threads <= 1) {
    run(0, total_rows);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (total_rows + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t first = std::min(total_rows, t * chunk);
      const std::size_t last = std::min(total_rows, first + chunk);
      pool.emplace_back(run, first, last);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<double> y(m, 0.0);
  for (int i = 0; i < kw; ++i) {
    const double* part = partial.data() + static_cast<std::size_t>(i) * m;
    for (std::size_t r = 0; r < m; ++r) {
      y[r] += static_cast<double>(w.row_alphas(r)[static_cast<std::size_t>(i)]) * part[r];
    }
  }
  return y;
}

template <typename T>
std::vector<double> dense_gemv(const Matrix<T>& w, std::span<const double> x) {
  if (w.cols() != x.size()) {
    throw std::invalid_argument("dimension mismatch: matrix has " + std::to_string(w.cols()) +
                                " columns, vector has " + std::to_string(x.size()) + " entries");
  }
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += static_cast<double>(row[c]) * x[c];
    y[r] = s;
  }
  return y;
}

template std::vector<double> dense_gemv<float>(const MatrixF&, std::span<const double>);
template std::vector<double> dense_gemv<double>(const MatrixD&, std::span<const double>);

void dense_gemv_f32(const MatrixF& w, std::span<const float> x, std::span<float> y) noexcept {
  constexpr std::size_t kLanes = 8;
  const std::size_t n = w.cols();
  const std::size_t body = n - n % kLanes;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const float* row = w.row(r).data();
    std::array<float, kLanes> acc{};
    for (std::size_t c = 0; c < body; c += kLanes) {
      for (std::size_t l = 0; l < kLanes; ++l) acc[l] += row[c + l] * x[c + l];
    }
    for (std::size_t c = body; c < n; ++c) acc[c - body] += row[c] * x[c];
    y[r] = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  }
}

GemvCost quantized_gemv_cost(std::uint64_t m, std::uint64_t n, std::uint64_t k_w, std::uint64_t k_h) {
  return {2 * k_w * k_h * m * n + 4 * k_h * k_h * n, 6 * k_h * n + 2 * k_w * k_h * m};
}

double theoretical_speedup(std::uint64_t m, std::uint64_t n, std::uint64_t k_w, std::uint64_t k_h) {
  if (m == 0 || n == 0 || k_w == 0 || k_h == 0) throw std::invalid_argument("sizes and bit counts must be positive");
  const GemvCost cost = quantized_gemv_cost(m, n, k_w, k_h);
  const double dense = 2.0 * static_cast<double>(m) * static_cast<double>(n);
  return dense / (static_cast<double>(cost.binary_ops) / 32.0 + static_cast<double>(cost.nonbinary_ops));
}

GemvCost quantization_cost(std::uint64_t n, std::uint64_t k, std::uint64_t cycles) {
  return {2 * cycles * k * k * n, 2 * (cycles + 1) * k * n};
}

}  // namespace mbq
