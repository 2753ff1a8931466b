#include "mbq/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace mbq {

namespace {

void check_bits(int k, int max_bits = kMaxCodebookBits) {
  if (k < 1 || k > max_bits) {
    throw std::invalid_argument("bit count " + std::to_string(k) + " outside [1, " +
                                std::to_string(max_bits) + "]");
  }
}

void check_input(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("empty input");
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!std::isfinite(x[j])) {
      throw std::invalid_argument("non-finite entry at index " + std::to_string(j));
    }
  }
}

// Sum of f(j) for j < n over four interleaved accumulators, in a fixed order.
template <typename F>
double lane_sum(std::size_t n, F&& f) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc[0] += f(j);
    acc[1] += f(j + 1);
    acc[2] += f(j + 2);
    acc[3] += f(j + 3);
  }
  for (; j < n; ++j) acc[j % 4] += f(j);
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double flip_sign(double v, std::uint64_t negative) {
  return std::bit_cast<double>(std::bit_cast<std::uint64_t>(v) ^ (negative << 63));
}

// Residual binarization of r into (mean |r|, sign(r)); updates r in place.
void binarize_residual(std::vector<double>& r, double& alpha, PackedBitPlane& plane) {
  const auto n = static_cast<double>(r.size());
  alpha = lane_sum(r.size(), [&](std::size_t j) { return std::abs(r[j]); }) / n;
  std::vector<std::uint64_t> words(words_for(r.size()), 0);
  for (std::size_t b = 0; b < words.size(); ++b) {
    const std::size_t base = b * kWordBits;
    const std::size_t end = std::min(r.size(), base + kWordBits);
    std::uint64_t word = 0;
    for (std::size_t j = base; j < end; ++j) {
      const std::uint64_t negative = r[j] < 0.0;
      word |= (negative ^ 1u) << (j - base);
      r[j] -= flip_sign(alpha, negative);
    }
    words[b] = word;
  }
  plane = PackedBitPlane(r.size(), std::move(words));
}

// sum_j s_j * w_j for the +-1 vector s stored in `plane`.
double signed_sum(const PackedBitPlane& plane, std::span<const double> w) {
  const auto words = plane.words();
  return lane_sum(w.size(), [&](std::size_t j) {
    return flip_sign(w[j], ~(words[j / kWordBits] >> (j % kWordBits)) & 1u);
  });
}

// Cholesky solve of the symmetric system in place. Returns false when a pivot
// falls at or below `min_pivot`.
bool cholesky_solve(std::vector<double> a, std::vector<double>& x, std::size_t k, double min_pivot) {
  for (std::size_t j = 0; j < k; ++j) {
    double d = a[j * k + j];
    for (std::size_t p = 0; p < j; ++p) d -= a[j * k + p] * a[j * k + p];
    if (!(d > min_pivot)) return false;
    const double l = std::sqrt(d);
    a[j * k + j] = l;
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = a[i * k + j];
      for (std::size_t p = 0; p < j; ++p) s -= a[i * k + p] * a[j * k + p];
      a[i * k + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    double s = x[i];
    for (std::size_t p = 0; p < i; ++p) s -= a[i * k + p] * x[p];
    x[i] = s / a[i * k + i];
  }
  for (std::size_t i = k; i-- > 0;) {
    double s = x[i];
    for (std::size_t p = i + 1; p < k; ++p) s -= a[p * k + i] * x[p];
    x[i] = s / a[i * k + i];
  }
  return true;
}

std::vector<std::uint64_t> uniform_level_indices(std::span<const double> x, int k, bool unit_scale,
                                                 double& scale) {
  check_input(x);
  check_bits(k, 30);
  scale = 1.0;
  if (!unit_scale) {
    double max_abs = 0.0;
    for (double v : x) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs > 0.0) scale = max_abs;
  }
  const double levels = std::ldexp(1.0, k) - 1.0;
  std::vector<std::uint64_t> idx(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double u = std::clamp(x[j] / scale, -1.0, 1.0);
    // std::round rounds half away from zero.
    idx[j] = static_cast<std::uint64_t>(std::round(levels * ((u + 1.0) / 2.0)));
  }
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// MultiBitCode / TernaryCode
// ---------------------------------------------------------------------------

MultiBitCode MultiBitCode::zeros(std::size_t n, int k) {
  MultiBitCode code;
  code.alphas.assign(static_cast<std::size_t>(k), 0.0);
  code.planes.assign(static_cast<std::size_t>(k), PackedBitPlane(n, true));
  return code;
}

std::vector<double> MultiBitCode::reconstruct() const {
  const std::size_t n = size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const auto words = planes[i].words();
    const double a = alphas[i];
    for (std::size_t j = 0; j < n; ++j) {
      out[j] += ((words[j / kWordBits] >> (j % kWordBits)) & 1u) ? a : -a;
    }
  }
  return out;
}

void MultiBitCode::canonicalize() {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] < 0.0) {
      alphas[i] = -alphas[i];
      planes[i].flip();
    }
  }
  std::vector<std::size_t> order(alphas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return alphas[a] > alphas[b]; });
  std::vector<double> sorted_alphas;
  std::vector<PackedBitPlane> sorted_planes;
  sorted_alphas.reserve(order.size());
  sorted_planes.reserve(order.size());
  for (auto i : order) {
    sorted_alphas.push_back(alphas[i]);
    sorted_planes.push_back(std::move(planes[i]));
  }
  alphas = std::move(sorted_alphas);
  planes = std::move(sorted_planes);
}

bool MultiBitCode::is_canonical() const noexcept {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0)) return false;
    if (i > 0 && alphas[i] > alphas[i - 1]) return false;
  }
  return true;
}

std::vector<double> TernaryCode::reconstruct() const {
  std::vector<double> out(trits.size());
  for (std::size_t j = 0; j < trits.size(); ++j) out[j] = alpha * trits[j];
  return out;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

UniformResult uniform_quantize(std::span<const double> x, int k, bool unit_scale) {
  UniformResult result;
  const auto idx = uniform_level_indices(x, k, unit_scale, result.scale);
  const double levels = std::ldexp(1.0, k) - 1.0;
  result.values.resize(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double q = 2.0 * (static_cast<double>(idx[j]) / levels - 0.5);
    result.values[j] = result.scale * q;
  }
  return result;
}

MultiBitCode uniform_quantize_code(std::span<const double> x, int k, bool unit_scale) {
  check_bits(k);
  double scale = 1.0;
  const auto idx = uniform_level_indices(x, k, unit_scale, scale);
  const double levels = std::ldexp(1.0, k) - 1.0;
  MultiBitCode code;
  for (int i = 0; i < k; ++i) {
    code.alphas.push_back(scale * std::ldexp(1.0, i) / levels);
    PackedBitPlane plane(x.size(), false);
    for (std::size_t j = 0; j < x.size(); ++j) plane.set(j, (idx[j] >> i) & 1u);
    code.planes.push_back(std::move(plane));
  }
  code.canonicalize();
  return code;
}

std::vector<double> balanced_quantize(std::span<const double> x, int k) {
  check_input(x);
  check_bits(k, 30);
  const std::size_t n = x.size();
  const std::size_t intervals = std::size_t{1} << k;
  if (n < intervals) throw std::invalid_argument("too few samples for 2^k intervals");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  auto bound = [&](std::size_t j) { return j * n / intervals; };
  std::vector<double> centers(intervals);
  std::vector<double> codes(intervals);
  for (std::size_t j = 0; j < intervals; ++j) {
    centers[j] = 0.5 * (x[order[bound(j)]] + x[order[bound(j + 1) - 1]]);
    codes[j] = 2.0 * (static_cast<double>(j) / static_cast<double>(intervals - 1) - 0.5);
  }

  // Least-squares affine fit codes ~ slope * centers + offset, inverted below.
  const double mc = std::accumulate(centers.begin(), centers.end(), 0.0) / intervals;
  const double mu = std::accumulate(codes.begin(), codes.end(), 0.0) / intervals;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t j = 0; j < intervals; ++j) {
    sxy += (centers[j] - mc) * (codes[j] - mu);
    sxx += (centers[j] - mc) * (centers[j] - mc);
  }
  std::vector<double> levels = centers;
  if (sxx > 0.0) {
    const double slope = sxy / sxx;
    const double offset = mu - slope * mc;
    for (std::size_t j = 0; j < intervals; ++j) levels[j] = (codes[j] - offset) / slope;
  }

  std::vector<double> out(n);
  for (std::size_t j = 0; j < intervals; ++j) {
    for (std::size_t r = bound(j); r < bound(j + 1); ++r) out[order[r]] = levels[j];
  }
  return out;
}

TernaryCode ternary_quantize(std::span<const double> w) {
  check_input(w);
  const auto n = static_cast<double>(w.size());
  double l1 = 0.0;
  for (double v : w) l1 += std::abs(v);
  const double threshold = 0.7 * l1 / n;

  TernaryCode code;
  code.trits.resize(w.size());
  double tw = 0.0;
  double tt = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (std::abs(w[j]) < threshold || l1 == 0.0) {
      code.trits[j] = 0;
      continue;
    }
    code.trits[j] = w[j] >= 0.0 ? 1 : -1;
    tw += std::abs(w[j]);
    tt += 1.0;
  }
  code.alpha = tt > 0.0 ? tw / tt : 0.0;
  return code;
}

MultiBitCode ternary_as_code(const TernaryCode& code) {
  const std::size_t n = code.trits.size();
  MultiBitCode out;
  out.alphas = {code.alpha / 2.0, code.alpha / 2.0};
  PackedBitPlane upper(n, false);
  PackedBitPlane lower(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    // +1 -> (+,+), 0 -> (+,-), -1 -> (-,-)
    upper.set(j, code.trits[j] >= 0);
    lower.set(j, code.trits[j] > 0);
  }
  out.planes.push_back(std::move(upper));
  out.planes.push_back(std::move(lower));
  return out;
}

// ---------------------------------------------------------------------------
// Greedy family
// ---------------------------------------------------------------------------

namespace {

MultiBitCode greedy_with_residual(std::span<const double> w, int k, double& sq_residual) {
  check_bits(k, 64);
  check_input(w);
  MultiBitCode code;
  code.alphas.resize(static_cast<std::size_t>(k));
  code.planes.resize(static_cast<std::size_t>(k));
  std::vector<double> r(w.begin(), w.end());
  for (std::size_t i = 0; i < code.alphas.size(); ++i) binarize_residual(r, code.alphas[i], code.planes[i]);
  code.canonicalize();
  sq_residual = lane_sum(r.size(), [&](std::size_t j) { return r[j] * r[j]; });
  return code;
}

}  // namespace

MultiBitCode greedy_quantize(std::span<const double> w, int k) {
  double unused = 0.0;
  return greedy_with_residual(w, k, unused);
}

MultiBitCode refined_greedy_quantize(std::span<const double> w, int k) {
  check_bits(k, 64);
  check_input(w);
  MultiBitCode code;
  std::vector<double> r(w.begin(), w.end());
  for (int i = 0; i < k; ++i) {
    double alpha = 0.0;
    PackedBitPlane plane;
    binarize_residual(r, alpha, plane);
    code.alphas.push_back(alpha);
    code.planes.push_back(std::move(plane));
    code.alphas = refit_coefficients(code.planes, w).alphas;
    const auto approx = code.reconstruct();
    for (std::size_t j = 0; j < w.size(); ++j) r[j] = w[j] - approx[j];
  }
  code.canonicalize();
  return code;
}

RefitResult refit_coefficients(std::span<const PackedBitPlane> planes, std::span<const double> w) {
  const std::size_t k = planes.size();
  if (k == 0) throw std::invalid_argument("refit needs at least one plane");
  for (const auto& p : planes) {
    if (p.size() != w.size()) throw std::invalid_argument("plane length does not match vector length");
  }
  std::vector<double> gram(k * k);
  std::vector<double> rhs(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      const auto g = static_cast<double>(xnor_popcount_dot(planes[i], planes[j]));
      gram[i * k + j] = g;
      gram[j * k + i] = g;
    }
    rhs[i] = signed_sum(planes[i], w);
  }

  const auto n = static_cast<double>(w.size());
  RefitResult result;
  result.alphas = rhs;
  if (cholesky_solve(gram, result.alphas, k, 1e-9 * n)) return result;

  const double ridge = 1e-8 * n;
  for (std::size_t i = 0; i < k; ++i) gram[i * k + i] += ridge;
  result.alphas = rhs;
  result.regularized = true;
  if (!cholesky_solve(gram, result.alphas, k, 0.0)) {
    throw std::runtime_error("ridge-regularized Gram matrix is not positive definite");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Codebook and BST assignment
// ---------------------------------------------------------------------------

Codebook build_codebook(std::span<const double> alphas) {
  const auto k = static_cast<int>(alphas.size());
  if (k > kMaxCodebookBits) throw std::invalid_argument("codebook too large");
  if (k < 1) throw std::invalid_argument("codebook needs at least one coefficient");

  const std::size_t count = std::size_t{1} << k;
  // Enumerate in lexicographic sign order (plane 0 most significant, '-' < '+').
  std::vector<double> values(count);
  std::vector<std::uint32_t> patterns(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::uint32_t mask = 0;
    double v = 0.0;
    for (int i = 0; i < k; ++i) {
      const bool positive = (p >> (k - 1 - i)) & 1u;
      if (positive) mask |= std::uint32_t{1} << i;
      v += positive ? alphas[static_cast<std::size_t>(i)] : -alphas[static_cast<std::size_t>(i)];
    }
    values[p] = v;
    patterns[p] = mask;
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  Codebook cb;
  cb.bits = k;
  cb.values.reserve(count);
  cb.patterns.reserve(count);
  for (auto i : order) {
    cb.values.push_back(values[i]);
    cb.patterns.push_back(patterns[i]);
  }
  return cb;
}


namespace {

// K > 0 fixes the plane count at compile time; K == 0 reads it from the codebook.
template <int K>
std::vector<PackedBitPlane> assign_planes(std::span<const double> w, const Codebook& codebook, double& sq_error) {
  const std::size_t n = w.size();
  const auto k = K > 0 ? static_cast<std::size_t>(K) : static_cast<std::size_t>(codebook.bits);
  const std::size_t nw = words_for(n);
  std::vector<std::vector<std::uint64_t>> words(k, std::vector<std::uint64_t>(nw, 0));
  std::vector<std::uint32_t> index(n);
  for (std::size_t b = 0; b < nw; ++b) {
    const std::size_t base = b * kWordBits;
    const std::size_t end = std::min(n, base + kWordBits);
    std::uint64_t acc[K > 0 ? K : kMaxCodebookBits];
    std::fill_n(acc, k, 0);
    for (std::size_t j = base; j < end; ++j) {
      const std::size_t idx = bst_assign(w[j], codebook);
      index[j] = static_cast<std::uint32_t>(idx);
      const std::uint64_t pattern = codebook.patterns[idx];
      for (std::size_t i = 0; i < k; ++i) acc[i] |= ((pattern >> i) & 1u) << (j - base);
    }
    for (std::size_t i = 0; i < k; ++i) words[i][b] = acc[i];
  }
  sq_error = lane_sum(n, [&](std::size_t j) {
    const double d = w[j] - codebook.values[index[j]];
    return d * d;
  });
  std::vector<PackedBitPlane> planes;
  planes.reserve(k);
  for (auto& wv : words) planes.emplace_back(n, std::move(wv));
  return planes;
}

std::vector<PackedBitPlane> assign_with_error(std::span<const double> w, const Codebook& codebook,
                                              double& sq_error) {
  switch (codebook.bits) {
    case 1: return assign_planes<1>(w, codebook, sq_error);
    case 2: return assign_planes<2>(w, codebook, sq_error);
    case 3: return assign_planes<3>(w, codebook, sq_error);
    case 4: return assign_planes<4>(w, codebook, sq_error);
    default: return assign_planes<0>(w, codebook, sq_error);
  }
}

}  // namespace

std::vector<PackedBitPlane> assign_codes(std::span<const double> w, const Codebook& codebook) {
  double unused = 0.0;
  return assign_with_error(w, codebook, unused);
}

// ---------------------------------------------------------------------------
// Alternating minimization
// ---------------------------------------------------------------------------

namespace {

template <bool kRecord>
AlternatingTrace run_alternating(std::span<const double> w, int k, int cycles) {
  check_bits(k);
  if (cycles < 0) throw std::invalid_argument("cycle count must be >= 0");
  AlternatingTrace trace;
  double residual = 0.0;
  trace.code = greedy_with_residual(w, k, residual);
  if constexpr (kRecord) trace.residuals.push_back(squared_residual(w, trace.code.reconstruct()));
  // Stops early once the fit is exact.
  for (int t = 0; t < cycles && residual > 0.0; ++t) {
    auto refit = refit_coefficients(trace.code.planes, w);
    trace.regularized = trace.regularized || refit.regularized;
    trace.code.alphas = std::move(refit.alphas);
    trace.code.canonicalize();
    if constexpr (kRecord) trace.residuals.push_back(squared_residual(w, trace.code.reconstruct()));
    trace.code.planes = assign_with_error(w, build_codebook(trace.code.alphas), residual);
    if constexpr (kRecord) trace.residuals.push_back(squared_residual(w, trace.code.reconstruct()));
  }
  return trace;
}

}  // namespace

MultiBitCode alternating_quantize(std::span<const double> w, int k, int cycles) {
  return run_alternating<false>(w, k, cycles).code;
}

AlternatingTrace alternating_quantize_traced(std::span<const double> w, int k, int cycles) {
  return run_alternating<true>(w, k, cycles);
}

// ---------------------------------------------------------------------------
// Error metrics
// ---------------------------------------------------------------------------

double squared_residual(std::span<const double> w, std::span<const double> w_hat) {
  if (w.size() != w_hat.size()) throw std::invalid_argument("length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double d = w[j] - w_hat[j];
    s += d * d;
  }
  return s;
}

double relative_mse(std::span<const double> w, std::span<const double> w_hat) {
  const double err = squared_residual(w, w_hat);
  double norm = 0.0;
  for (double v : w) norm += v * v;
  if (!(norm > 0.0)) throw std::invalid_argument("zero-norm reference vector");
  return err / norm;
}

// ---------------------------------------------------------------------------
// QuantizedMatrix
// ---------------------------------------------------------------------------

QuantizedMatrix::QuantizedMatrix(std::size_t rows, std::size_t cols, int bits, std::vector<float> alphas_in,
                                 std::vector<std::uint64_t> plane_words)
    : rows_(rows), cols_(cols), bits_(bits), alphas_(std::move(alphas_in)), words_(std::move(plane_words)) {
  if (bits_ < 1 || bits_ > 255) throw std::invalid_argument("bit count outside [1, 255]");
  const auto k = static_cast<std::size_t>(bits_);
  if (alphas_.size() != rows_ * k) throw std::invalid_argument("coefficient table has the wrong size");
  if (words_.size() != k * rows_ * words_per_row()) throw std::invalid_argument("bitplane storage has the wrong size");
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto a = row_alphas(r);
    for (std::size_t i = 0; i < k; ++i) {
      if (!(a[i] >= 0.0f) || (i > 0 && a[i] > a[i - 1])) {
        throw std::invalid_argument("non-canonical coefficients in row " + std::to_string(r));
      }
    }
  }
  const std::uint64_t pad = ~tail_mask(cols_);
  if (pad != 0 && words_per_row() > 0) {
    for (std::size_t row = 0; row < k * rows_; ++row) {
      if (words_[(row + 1) * words_per_row() - 1] & pad) throw std::invalid_argument("corrupt bitplane");
    }
  }
}

MultiBitCode QuantizedMatrix::row_code(std::size_t r) const {
  MultiBitCode code;
  for (int i = 0; i < bits_; ++i) {
    code.alphas.push_back(row_alphas(r)[static_cast<std::size_t>(i)]);
    const auto words = plane_row(i, r);
    code.planes.emplace_back(cols_, std::vector<std::uint64_t>(words.begin(), words.end()));
  }
  return code;
}

std::vector<double> QuantizedMatrix::reconstruct_row(std::size_t r) const {
  std::vector<double> out(cols_, 0.0);
  for (int i = 0; i < bits_; ++i) {
    const double a = row_alphas(r)[static_cast<std::size_t>(i)];
    const auto words = plane_row(i, r);
    for (std::size_t j = 0; j < cols_; ++j) {
      out[j] += ((words[j / kWordBits] >> (j % kWordBits)) & 1u) ? a : -a;
    }
  }
  return out;
}

MatrixD QuantizedMatrix::reconstruct() const {
  MatrixD out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto row = reconstruct_row(r);
    std::copy(row.begin(), row.end(), out.row(r).begin());
  }
  return out;
}

QuantizedMatrix assemble_rows(std::size_t cols, int k, std::span<const MultiBitCode> rows) {
  const std::size_t m = rows.size();
  const std::size_t wpr = words_for(cols);
  const auto kk = static_cast<std::size_t>(k);
  std::vector<float> alphas(m * kk);
  std::vector<std::uint64_t> words(kk * m * wpr);
  for (std::size_t r = 0; r < m; ++r) {
    const auto& code = rows[r];
    if (code.bits() != k || code.size() != cols) {
      throw std::invalid_argument("row " + std::to_string(r) + " code shape does not match");
    }
    for (std::size_t i = 0; i < kk; ++i) {
      alphas[r * kk + i] = static_cast<float>(code.alphas[i]);
      const auto src = code.planes[i].words();
      std::copy(src.begin(), src.end(), words.begin() + static_cast<std::ptrdiff_t>((i * m + r) * wpr));
    }
  }
  return QuantizedMatrix(m, cols, k, std::move(alphas), std::move(words));
}

const char* method_name(Method method) noexcept {
  switch (method) {
    case Method::kUniform: return "uniform";
    case Method::kBalanced: return "balanced";
    case Method::kGreedy: return "greedy";
    case Method::kRefined: return "refined";
    case Method::kAlternating: return "alternating";
    case Method::kTernary: return "ternary";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kUniform, Method::kBalanced, Method::kGreedy, Method::kRefined, Method::kAlternating,
                 Method::kTernary}) {
    if (name == method_name(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

namespace {

constexpr const char* kBalancedUnsupported =
    "balanced levels are offset from zero and cannot be stored as sign planes";

MultiBitCode quantize_row(std::span<const double> row, int k, Method method, int cycles) {
  switch (method) {
    case Method::kUniform: return uniform_quantize_code(row, k);
    case Method::kGreedy: return greedy_quantize(row, k);
    case Method::kRefined: return refined_greedy_quantize(row, k);
    case Method::kAlternating: return alternating_quantize(row, k, cycles);
    case Method::kTernary:
      if (k != 2) throw std::invalid_argument("ternary codes are 2-bit");
      return ternary_as_code(ternary_quantize(row));
    case Method::kBalanced: break;
  }
  throw std::invalid_argument(kBalancedUnsupported);
}

}  // namespace

template <typename T>
QuantizedMatrix quantize_matrix_rowwise(const Matrix<T>& w, int k, Method method, int cycles, unsigned threads) {
  if (w.rows() == 0 || w.cols() == 0) throw std::invalid_argument("matrix must be non-empty");
  if (method == Method::kBalanced) throw std::invalid_argument(kBalancedUnsupported);
  const std::size_t m = w.rows();
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, m));

  std::vector<MultiBitCode> codes(m);
  std::vector<std::exception_ptr> errors(m);
  auto work = [&](unsigned worker) {
    std::vector<double> row(w.cols());
    for (std::size_t r = worker; r < m; r += threads) {
      try {
        const auto src = w.row(r);
        std::transform(src.begin(), src.end(), row.begin(), [](T v) { return static_cast<double>(v); });
        codes[r] = quantize_row(row, k, method, cycles);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (std::size_t r = 0; r < m; ++r) {
    if (!errors[r]) continue;
    try {
      std::rethrow_exception(errors[r]);
    } catch (const std::exception& e) {
      throw std::invalid_argument("row " + std::to_string(r) + ": " + e.what());
    }
  }
  return assemble_rows(w.cols(), k, codes);
}

template <typename T>
QuantizedMatrix quantize_matrix_rowwise(const Matrix<T>& w, int k, int cycles, unsigned threads) {
  return quantize_matrix_rowwise(w, k, Method::kAlternating, cycles, threads);
}

template QuantizedMatrix quantize_matrix_rowwise<float>(const MatrixF&, int, int, unsigned);
template QuantizedMatrix quantize_matrix_rowwise<double>(const MatrixD&, int, int, unsigned);
template QuantizedMatrix quantize_matrix_rowwise<float>(const MatrixF&, int, Method, int, unsigned);
template QuantizedMatrix quantize_matrix_rowwise<double>(const MatrixD&, int, Method, int, unsigned);

}  // namespace mbq
