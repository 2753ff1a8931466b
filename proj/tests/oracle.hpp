#pragma once

// Naive reference implementations used to derive and cross-check the frozen
// expected values in the tests. Nothing here shares code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace oracle {

using Signs = std::vector<std::vector<int>>;  // k rows of +-1

inline int sgn(double v) { return v >= 0.0 ? 1 : -1; }

inline std::vector<double> combine(const std::vector<double>& alphas, const Signs& s) {
  std::vector<double> out(s.empty() ? 0 : s[0].size(), 0.0);
  for (std::size_t i = 0; i < alphas.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += alphas[i] * s[i][j];
  return out;
}

inline double sq_err(const std::vector<double>& a, const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) e += (a[j] - b[j]) * (a[j] - b[j]);
  return e;
}

inline double sq_norm(const std::vector<double>& a) {
  double e = 0.0;
  for (double v : a) e += v * v;
  return e;
}

// Residual binarization without any canonical reordering.
inline void greedy(const std::vector<double>& w, int k, std::vector<double>& alphas, Signs& s) {
  std::vector<double> r = w;
  alphas.clear();
  s.clear();
  for (int i = 0; i < k; ++i) {
    double l1 = 0.0;
    for (double v : r) l1 += std::fabs(v);
    const double a = l1 / static_cast<double>(r.size());
    std::vector<int> b(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) {
      b[j] = sgn(r[j]);
      r[j] -= a * b[j];
    }
    alphas.push_back(a);
    s.push_back(b);
  }
}

// Least squares through Gaussian elimination with partial pivoting on the
// normal equations. Returns false for a (numerically) singular system.
inline bool least_squares(const Signs& s, const std::vector<double>& w, std::vector<double>& x) {
  const std::size_t k = s.size();
  std::vector<std::vector<double>> a(k, std::vector<double>(k + 1, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t t = 0; t < w.size(); ++t) a[i][j] += s[i][t] * s[j][t];
    for (std::size_t t = 0; t < w.size(); ++t) a[i][k] += s[i][t] * w[t];
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < k; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
    if (std::fabs(a[p][c]) < 1e-9) return false;
    std::swap(a[p], a[c]);
    for (std::size_t r = 0; r < k; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= k; ++j) a[r][j] -= f * a[c][j];
    }
  }
  x.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) x[i] = a[i][k] / a[i][i];
  return true;
}

// min over all sign matrices of the least-squares residual. Negating a plane
// leaves its span unchanged, so entry 0 of every plane is pinned to +1.
inline double brute_force_optimum(const std::vector<double>& w, int k) {
  const std::size_t n = w.size();
  const std::size_t free_bits = n - 1;
  const std::uint64_t total = std::uint64_t{1} << (static_cast<std::uint64_t>(k) * free_bits);
  double best = sq_norm(w);
  Signs s(static_cast<std::size_t>(k), std::vector<int>(n, 1));
  std::vector<double> x;
  for (std::uint64_t m = 0; m < total; ++m) {
    for (int i = 0; i < k; ++i)
      for (std::size_t j = 1; j < n; ++j) s[i][j] = (m >> (i * free_bits + j - 1)) & 1u ? 1 : -1;
    if (least_squares(s, w, x)) {
      best = std::min(best, sq_err(w, combine(x, s)));
    } else {
      // Dependent planes span the line of plane 0.
      Signs one{s[0]};
      if (least_squares(one, w, x)) best = std::min(best, sq_err(w, combine(x, one)));
    }
  }
  return best;
}

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Lloyd iteration on the standard normal density; returns the mean squared
// distortion of the optimal `levels`-level scalar quantizer.
inline double lloyd_max_gaussian(int levels, int iterations = 2000) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> q(static_cast<std::size_t>(levels));
  for (int i = 0; i < levels; ++i) q[i] = -2.0 + 4.0 * (i + 0.5) / levels;
  std::vector<double> t(static_cast<std::size_t>(levels + 1));
  for (int it = 0; it < iterations; ++it) {
    t[0] = -inf;
    t[levels] = inf;
    for (int i = 1; i < levels; ++i) t[i] = 0.5 * (q[i - 1] + q[i]);
    for (int i = 0; i < levels; ++i) {
      const double mass = Phi(t[i + 1]) - Phi(t[i]);
      q[i] = (phi(t[i]) - phi(t[i + 1])) / mass;
    }
  }
  // E[(X - q_i)^2 ; X in cell i] using E[X^2; a<X<b] = mass + a phi(a) - b phi(b).
  auto xphi = [](double x) { return std::isinf(x) ? 0.0 : x * phi(x); };
  double d = 0.0;
  for (int i = 0; i < levels; ++i) {
    const double a = t[i], b = t[i + 1];
    const double mass = Phi(b) - Phi(a);
    const double m1 = phi(a) - phi(b);
    const double m2 = mass + xphi(a) - xphi(b);
    d += m2 - 2.0 * q[i] * m1 + q[i] * q[i] * mass;
  }
  return d;
}

// q_k(x) evaluated literally for x in [-1, 1].
inline double uniform_level(double x, int k) {
  const double levels = std::pow(2.0, k) - 1.0;
  const double v = levels * ((x + 1.0) / 2.0);
  const double r = v >= 0.0 ? std::floor(v + 0.5) : -std::floor(-v + 0.5);
  return 2.0 * (r / levels - 0.5);
}

inline std::int64_t naive_dot(const std::vector<std::int8_t>& a, const std::vector<std::int8_t>& b) {
  std::int64_t s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

}  // namespace oracle
