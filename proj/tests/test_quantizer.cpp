#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mbq/quantizer.hpp"
#include "oracle.hpp"

using namespace mbq;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

std::vector<int> signs_of(const PackedBitPlane& p) {
  std::vector<int> out;
  for (auto s : p.unpack()) out.push_back(s);
  return out;
}

}  // namespace

// ----- uniform --------------------------------------------------------------

TEST(Uniform, UnitScaleHandValue) {
  // round(3 * 0.65) = 2 -> 2 * (2/3 - 1/2)
  const double expected = 1.0 / 3.0;
  EXPECT_NEAR(oracle::uniform_level(0.3, 2), expected, 1e-15);
  const std::vector<double> x{0.3};
  const auto r = uniform_quantize(x, 2, true);
  EXPECT_NEAR(r.values[0], expected, 1e-12);
  EXPECT_EQ(r.scale, 1.0);
}

TEST(Uniform, MaxAbsScaleMapsPeakToItself) {
  const std::vector<double> x{0.3};
  const auto r = uniform_quantize(x, 2);
  EXPECT_DOUBLE_EQ(r.scale, 0.3);
  EXPECT_NEAR(r.values[0], 0.3, 1e-15);
}

TEST(Uniform, EndpointsAreFixed) {
  const std::vector<double> x{1.0, -1.0};
  const auto r = uniform_quantize(x, 3, true);
  EXPECT_EQ(r.values[0], 1.0);
  EXPECT_EQ(r.values[1], -1.0);
}

TEST(Uniform, ZeroTieRoundsAwayFromZero) {
  // (2^2 - 1) * 0.5 = 1.5 -> 2 -> +1/3
  const std::vector<double> x{0.0, 0.0, 0.0};
  const auto r = uniform_quantize(x, 2);
  EXPECT_EQ(r.scale, 1.0);
  for (double v : r.values) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Uniform, MatchesLiteralFormulaOnGrid) {
  for (int k = 1; k <= 6; ++k) {
    std::vector<double> x;
    for (int i = -100; i <= 100; ++i) x.push_back(i / 100.0);
    const auto r = uniform_quantize(x, k, true);
    for (std::size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(r.values[j], oracle::uniform_level(x[j], k), 1e-12);
  }
}

TEST(Uniform, CodeFormReconstructsSameValues) {
  const auto x = gaussian(300, 3);
  for (int k = 1; k <= 5; ++k) {
    const auto r = uniform_quantize(x, k);
    const auto code = uniform_quantize_code(x, k);
    EXPECT_TRUE(code.is_canonical());
    const auto rec = code.reconstruct();
    for (std::size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(rec[j], r.values[j], 1e-12);
  }
}

TEST(Uniform, Errors) {
  EXPECT_THROW(uniform_quantize(std::vector<double>{}, 2), std::invalid_argument);
  EXPECT_THROW(uniform_quantize(std::vector<double>{1.0, NAN}, 2), std::invalid_argument);
  EXPECT_THROW(uniform_quantize(std::vector<double>{1.0, INFINITY}, 2), std::invalid_argument);
  try {
    uniform_quantize(std::vector<double>{}, 2);
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "empty input");
  }
}

// ----- balanced -------------------------------------------------------------

TEST(Balanced, TwoIntervalHandCase) {
  const std::vector<double> x{1, 2, 3, 4};
  const auto q = balanced_quantize(x, 1);
  const std::vector<double> expected{1.5, 1.5, 3.5, 3.5};
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(q[j], expected[j], 1e-12);
}

TEST(Balanced, SymmetricTwoPointUnchanged) {
  const std::vector<double> x{-0.7, 0.7, 0.7, -0.7, 0.7, -0.7};
  const auto q = balanced_quantize(x, 1);
  for (std::size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(q[j], x[j], 1e-12);
}

TEST(Balanced, WorseThanAlternatingOnGaussian) {
  const auto x = gaussian(100000, 11);
  const double balanced = relative_mse(x, balanced_quantize(x, 2));
  const double alternating = relative_mse(x, alternating_quantize(x, 2).reconstruct());
  EXPECT_GT(balanced, alternating);
}

TEST(Balanced, TooFewSamples) {
  try {
    balanced_quantize(std::vector<double>{1, 2, 3}, 2);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "too few samples for 2^k intervals");
  }
}

// ----- greedy ---------------------------------------------------------------

TEST(Greedy, HandTrace124) {
  const std::vector<double> w{1, 2, 4};
  std::vector<double> a;
  oracle::Signs s;
  oracle::greedy(w, 2, a, s);
  // Frozen from the oracle: mean |w| = 7/3; residual [-4/3,-1/3,5/3] -> 10/9.
  ASSERT_NEAR(a[0], 7.0 / 3.0, 1e-15);
  ASSERT_NEAR(a[1], 10.0 / 9.0, 1e-15);

  const auto code = greedy_quantize(w, 2);
  EXPECT_NEAR(code.alphas[0], 7.0 / 3.0, 1e-15);
  EXPECT_NEAR(code.alphas[1], 10.0 / 9.0, 1e-15);
  EXPECT_EQ(signs_of(code.planes[0]), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(signs_of(code.planes[1]), (std::vector<int>{-1, -1, 1}));
  const auto rec = code.reconstruct();
  EXPECT_NEAR(rec[0], 11.0 / 9.0, 1e-12);
  EXPECT_NEAR(rec[1], 11.0 / 9.0, 1e-12);
  EXPECT_NEAR(rec[2], 31.0 / 9.0, 1e-12);
}

TEST(Greedy, ConstantVectorOneBit) {
  const std::vector<double> w(17, 2.5);
  const auto code = greedy_quantize(w, 1);
  EXPECT_DOUBLE_EQ(code.alphas[0], 2.5);
  for (int s : signs_of(code.planes[0])) EXPECT_EQ(s, 1);
  EXPECT_EQ(squared_residual(w, code.reconstruct()), 0.0);
}

TEST(Greedy, ExactTwoEntryCase) {
  const std::vector<double> w{0.5, -1.5};
  const auto code = greedy_quantize(w, 2);
  EXPECT_DOUBLE_EQ(code.alphas[0], 1.0);
  EXPECT_DOUBLE_EQ(code.alphas[1], 0.5);
  EXPECT_EQ(signs_of(code.planes[0]), (std::vector<int>{1, -1}));
  EXPECT_EQ(signs_of(code.planes[1]), (std::vector<int>{-1, -1}));
  EXPECT_EQ(squared_residual(w, code.reconstruct()), 0.0);
}

TEST(Greedy, MatchesOracleAndResidualShrinks) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto w = gaussian(97, seed);
    std::vector<double> a;
    oracle::Signs s;
    oracle::greedy(w, 4, a, s);
    const auto code = greedy_quantize(w, 4);
    EXPECT_LT(oracle::sq_err(w, code.reconstruct()) - oracle::sq_err(w, oracle::combine(a, s)), 1e-10);
    double prev = oracle::sq_norm(w);
    for (int k = 1; k <= 4; ++k) {
      const double r = squared_residual(w, greedy_quantize(w, k).reconstruct());
      EXPECT_LE(r, prev + 1e-12);
      prev = r;
    }
  }
}

TEST(Greedy, AllZeroInput) {
  const std::vector<double> w(5, 0.0);
  const auto code = greedy_quantize(w, 3);
  for (double a : code.alphas) EXPECT_EQ(a, 0.0);
  for (const auto& p : code.planes)
    for (int s : signs_of(p)) EXPECT_EQ(s, 1);
}

TEST(Greedy, ScaleEquivariance) {
  const auto w = gaussian(64, 5);
  std::vector<double> w4(w);
  for (auto& v : w4) v *= 4.0;  // power of two keeps the arithmetic exact
  for (int k = 1; k <= 4; ++k) {
    const auto a = greedy_quantize(w, k);
    const auto b = greedy_quantize(w4, k);
    const auto c = alternating_quantize(w, k);
    const auto d = alternating_quantize(w4, k);
    for (int i = 0; i < k; ++i) {
      EXPECT_NEAR(b.alphas[i], 4.0 * a.alphas[i], 1e-12);
      EXPECT_EQ(b.planes[i], a.planes[i]);
      EXPECT_NEAR(d.alphas[i], 4.0 * c.alphas[i], 1e-12);
      EXPECT_EQ(d.planes[i], c.planes[i]);
    }
  }
}

// ----- refit ---------------------------------------------------------------

TEST(Refit, HandSolved) {
  const std::vector<double> w{1, 2, 4};
  std::vector<double> x;
  ASSERT_TRUE(oracle::least_squares({{1, 1, 1}, {-1, -1, 1}}, w, x));
  ASSERT_NEAR(x[0], 2.75, 1e-12);
  ASSERT_NEAR(x[1], 1.25, 1e-12);

  const std::vector<PackedBitPlane> planes{pack_signs(std::vector<std::int8_t>{1, 1, 1}),
                                           pack_signs(std::vector<std::int8_t>{-1, -1, 1})};
  const auto r = refit_coefficients(planes, w);
  EXPECT_FALSE(r.regularized);
  EXPECT_NEAR(r.alphas[0], 2.75, 1e-12);
  EXPECT_NEAR(r.alphas[1], 1.25, 1e-12);
}

TEST(Refit, SinglePlaneIsMean) {
  const auto w = gaussian(33, 2);
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  const std::vector<PackedBitPlane> planes{PackedBitPlane(w.size(), true)};
  EXPECT_NEAR(refit_coefficients(planes, w).alphas[0], mean, 1e-12);
}

TEST(Refit, DuplicatePlanesUseRidge) {
  const auto w = gaussian(40, 9);
  const auto p = greedy_quantize(w, 1).planes[0];
  const std::vector<PackedBitPlane> dup{p, p};
  const auto r = refit_coefficients(dup, w);
  EXPECT_TRUE(r.regularized);
  MultiBitCode two{r.alphas, dup};
  const std::vector<PackedBitPlane> one{p};
  MultiBitCode single{refit_coefficients(one, w).alphas, one};
  EXPECT_NEAR(squared_residual(w, two.reconstruct()), squared_residual(w, single.reconstruct()), 1e-6);
}

TEST(Refit, RefinedGreedyNeverWorseThanGreedy) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto w = gaussian(128, 100 + seed);
    for (int k = 1; k <= 4; ++k) {
      const double g = squared_residual(w, greedy_quantize(w, k).reconstruct());
      const double r = squared_residual(w, refined_greedy_quantize(w, k).reconstruct());
      EXPECT_LE(r, g + 1e-10);
      EXPECT_TRUE(refined_greedy_quantize(w, k).is_canonical());
    }
  }
}

// ----- codebook and BST -----------------------------------------------------

TEST(Codebook, TwoBit) {
  const auto cb = build_codebook(std::vector<double>{2, 1});
  EXPECT_EQ(cb.values, (std::vector<double>{-3, -1, 1, 3}));
  // (-,-), (-,+), (+,-), (+,+) with bit i set for a positive plane i.
  EXPECT_EQ(cb.patterns, (std::vector<std::uint32_t>{0b00, 0b10, 0b01, 0b11}));
  EXPECT_EQ(cb.sign(1, 0), -1);
  EXPECT_EQ(cb.sign(1, 1), 1);
}

TEST(Codebook, OneBitAndTies) {
  EXPECT_EQ(build_codebook(std::vector<double>{1}).values, (std::vector<double>{-1, 1}));
  const auto cb = build_codebook(std::vector<double>{1, 1});
  EXPECT_EQ(cb.values, (std::vector<double>{-2, 0, 0, 2}));
  EXPECT_EQ(cb.patterns, (std::vector<std::uint32_t>{0b00, 0b10, 0b01, 0b11}));
}

TEST(Codebook, TooLarge) {
  try {
    build_codebook(std::vector<double>(17, 1.0));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "codebook too large");
  }
}

TEST(Bst, Examples) {
  const auto cb = build_codebook(std::vector<double>{2, 1});
  EXPECT_EQ(bst_assign(0.4, cb), 2u);
  EXPECT_EQ(bst_assign(-2.0, cb), 1u);
  EXPECT_EQ(bst_assign(1e6, cb), 3u);
  EXPECT_EQ(bst_assign(-1e6, cb), 0u);
}

TEST(Bst, ExhaustiveNearest) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = 1 + trial % 5;
    std::vector<double> a(k);
    for (auto& v : a) v = u(rng);
    std::sort(a.begin(), a.end(), std::greater<>());
    const auto cb = build_codebook(a);
    const double w = (u(rng) * 2.0 - 1.0) * 3.0;
    double best = INFINITY;
    for (double v : cb.values) best = std::min(best, std::abs(w - v));
    EXPECT_EQ(std::abs(w - cb.values[bst_assign(w, cb)]), best);
  }
}

TEST(Assign, HandCase) {
  const std::vector<double> w{1, 2, 4};
  const auto planes = assign_codes(w, build_codebook(std::vector<double>{2.75, 1.25}));
  EXPECT_EQ(signs_of(planes[0]), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(signs_of(planes[1]), (std::vector<int>{-1, -1, 1}));
}

TEST(Assign, ZerosTakeUpperMiddle) {
  const std::vector<double> w(4, 0.0);
  const auto planes = assign_codes(w, build_codebook(std::vector<double>{0.8, 0.3}));
  for (int s : signs_of(planes[0])) EXPECT_EQ(s, 1);
  for (int s : signs_of(planes[1])) EXPECT_EQ(s, -1);
}

TEST(Assign, CodebookMemberIsExact) {
  const auto cb = build_codebook(std::vector<double>{1.5, 0.5, 0.25});
  for (double v : cb.values) {
    const std::vector<double> w{v};
    MultiBitCode c{{1.5, 0.5, 0.25}, assign_codes(w, cb)};
    EXPECT_EQ(c.reconstruct()[0], v);
  }
}

TEST(Assign, TwoBitClosedForm) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = gaussian(200, 40 + seed);
    const auto code = alternating_quantize(w, 2, 1);
    const double a1 = code.alphas[0];
    const auto planes = assign_codes(w, build_codebook(code.alphas));
    const auto b1 = signs_of(planes[0]);
    const auto b2 = signs_of(planes[1]);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const int s1 = oracle::sgn(w[j]);
      EXPECT_EQ(b1[j], s1);
      EXPECT_EQ(b2[j], oracle::sgn(w[j] - a1 * s1));
    }
  }
}

// ----- alternating ----------------------------------------------------------

TEST(Alternating, HandTrace124) {
  const std::vector<double> w{1, 2, 4};
  const auto trace = alternating_quantize_traced(w, 2, 2);
  EXPECT_NEAR(trace.code.alphas[0], 2.75, 1e-12);
  EXPECT_NEAR(trace.code.alphas[1], 1.25, 1e-12);
  EXPECT_EQ(signs_of(trace.code.planes[0]), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(signs_of(trace.code.planes[1]), (std::vector<int>{-1, -1, 1}));
  EXPECT_NEAR(trace.residuals.back(), 0.5, 1e-12);
  EXPECT_NEAR(relative_mse(w, trace.code.reconstruct()), 0.5 / 21.0, 1e-12);
  ASSERT_EQ(trace.residuals.size(), 5u);
}

TEST(Alternating, ExactCase) {
  const std::vector<double> w{0.5, -1.5};
  EXPECT_NEAR(squared_residual(w, alternating_quantize(w, 2, 2).reconstruct()), 0.0, 1e-24);
}

TEST(Alternating, ZeroCyclesIsGreedy) {
  const auto w = gaussian(77, 8);
  EXPECT_EQ(alternating_quantize(w, 3, 0), greedy_quantize(w, 3));
}

TEST(Alternating, DescentAndCanonical) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto w = gaussian(150, 500 + seed);
    const int k = 1 + static_cast<int>(seed % 4);
    const auto t = alternating_quantize_traced(w, k, 4);
    EXPECT_TRUE(t.code.is_canonical());
    for (std::size_t i = 1; i < t.residuals.size(); ++i) EXPECT_LE(t.residuals[i], t.residuals[i - 1] * (1 + 1e-12));
  }
}

TEST(Alternating, NeverBeatsBruteForce) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + trial % 4;
    const auto w = gaussian(n, rng());
    const double opt = oracle::brute_force_optimum(w, 2);
    EXPECT_GE(squared_residual(w, alternating_quantize(w, 2).reconstruct()), opt - 1e-12);
  }
}

// ----- ternary --------------------------------------------------------------

TEST(Ternary, HandCases) {
  {
    const std::vector<double> w{1.0, 0.2, -0.1, -1.0, 0.3};
    const auto t = ternary_quantize(w);
    EXPECT_EQ(t.trits, (std::vector<std::int8_t>{1, 0, 0, -1, 0}));
    EXPECT_DOUBLE_EQ(t.alpha, 1.0);
  }
  {
    const std::vector<double> w{0.75, -0.75};
    const auto t = ternary_quantize(w);
    EXPECT_EQ(t.trits, (std::vector<std::int8_t>{1, -1}));
    EXPECT_DOUBLE_EQ(t.alpha, 0.75);
    EXPECT_EQ(t.reconstruct(), w);
  }
  {
    const std::vector<double> w{0.1, 0.1, 10};
    const auto t = ternary_quantize(w);
    EXPECT_EQ(t.trits, (std::vector<std::int8_t>{0, 0, 1}));
    EXPECT_DOUBLE_EQ(t.alpha, 10.0);
  }
  {
    const auto t = ternary_quantize(std::vector<double>{0, 0});
    EXPECT_EQ(t.alpha, 0.0);
    EXPECT_EQ(t.trits, (std::vector<std::int8_t>{0, 0}));
  }
}

TEST(Ternary, CodeFormMatches) {
  const auto w = gaussian(90, 4);
  const auto t = ternary_quantize(w);
  const auto code = ternary_as_code(t);
  EXPECT_TRUE(code.is_canonical());
  const auto a = t.reconstruct();
  const auto b = code.reconstruct();
  for (std::size_t j = 0; j < w.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
}

// ----- metrics --------------------------------------------------------------

TEST(RelativeMse, Cases) {
  const std::vector<double> w{1, 2, 4};
  EXPECT_EQ(relative_mse(w, w), 0.0);
  EXPECT_EQ(relative_mse(w, std::vector<double>(3, 0.0)), 1.0);
  EXPECT_NEAR(relative_mse(w, std::vector<double>{1.5, 1.5, 4}), 0.5 / 21.0, 1e-15);
  try {
    relative_mse(std::vector<double>{0, 0}, std::vector<double>{0, 0});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "zero-norm reference vector");
  }
}

// ----- canonical form -------------------------------------------------------

TEST(Canonical, FlipAndSortKeepsReconstruction) {
  const auto w = gaussian(70, 12);
  MultiBitCode c = greedy_quantize(w, 3);
  const auto before = c.reconstruct();
  c.alphas = {-c.alphas[2], c.alphas[0], -c.alphas[1]};
  std::swap(c.planes[0], c.planes[2]);
  std::swap(c.planes[1], c.planes[2]);
  c.planes[0].flip();
  c.planes[2].flip();
  EXPECT_FALSE(c.is_canonical());
  const auto mid = c.reconstruct();
  c.canonicalize();
  EXPECT_TRUE(c.is_canonical());
  const auto after = c.reconstruct();
  for (std::size_t j = 0; j < w.size(); ++j) {
    EXPECT_NEAR(mid[j], before[j], 1e-12);
    EXPECT_NEAR(after[j], before[j], 1e-12);
  }
}

// ----- row-wise -------------------------------------------------------------

TEST(Rowwise, SingleRowMatchesVector) {
  const auto w = gaussian(100, 21);
  const MatrixD m(1, w.size(), w);
  const auto q = quantize_matrix_rowwise(m, 3);
  const auto code = alternating_quantize(w, 3);
  const auto row = q.row_code(0);
  EXPECT_EQ(row.planes, code.planes);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(row.alphas[i], static_cast<double>(static_cast<float>(code.alphas[i])));
}

TEST(Rowwise, IdenticalRowsAndThreadIndependence) {
  auto w = gaussian(8 * 16, 22);
  std::copy_n(w.begin(), 16, w.begin() + 16);
  const MatrixD m(8, 16, w);
  const auto q1 = quantize_matrix_rowwise(m, 2, 2, 1);
  const auto q4 = quantize_matrix_rowwise(m, 2, 2, 4);
  EXPECT_EQ(q1, q4);
  EXPECT_EQ(q1.row_code(0), q1.row_code(1));
  for (std::size_t r = 0; r < 8; ++r) {
    const auto row = std::span<const double>(w).subspan(r * 16, 16);
    const double g = relative_mse(row, greedy_quantize(row, 2).reconstruct());
    EXPECT_LE(relative_mse(row, q1.reconstruct_row(r)), g + 1e-6);
  }
}

TEST(Rowwise, MethodsAndErrors) {
  const MatrixD m(3, 40, gaussian(120, 23));
  for (Method method : {Method::kUniform, Method::kGreedy, Method::kRefined, Method::kAlternating}) {
    const auto q = quantize_matrix_rowwise(m, 2, method, 2);
    EXPECT_EQ(q.bits(), 2);
  }
  EXPECT_EQ(quantize_matrix_rowwise(m, 2, Method::kTernary, 2).bits(), 2);
  EXPECT_THROW(quantize_matrix_rowwise(m, 2, Method::kBalanced, 2), std::invalid_argument);
  EXPECT_THROW(quantize_matrix_rowwise(m, 3, Method::kTernary, 2), std::invalid_argument);

  MatrixD bad(3, 4, 1.0);
  bad(2, 1) = NAN;
  try {
    quantize_matrix_rowwise(bad, 2);
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(Rowwise, MethodNames) {
  for (Method m : {Method::kUniform, Method::kBalanced, Method::kGreedy, Method::kRefined, Method::kAlternating,
                   Method::kTernary}) {
    EXPECT_EQ(parse_method(method_name(m)), m);
  }
  EXPECT_THROW(parse_method("lloyd"), std::invalid_argument);
}

TEST(QuantizedMatrixCtor, RejectsBadInput) {
  EXPECT_THROW(QuantizedMatrix(1, 2, 1, {-1.0f}, {1}), std::invalid_argument);
  EXPECT_THROW(QuantizedMatrix(1, 2, 2, {1.0f, 2.0f}, {1, 1}), std::invalid_argument);
  EXPECT_THROW(QuantizedMatrix(1, 2, 1, {1.0f}, {0b101}), std::invalid_argument);
  EXPECT_NO_THROW(QuantizedMatrix(1, 2, 1, {2.0f}, {0b01}));
}
