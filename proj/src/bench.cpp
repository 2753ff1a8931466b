#include "mbq/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mbq/linalg.hpp"
#include "mbq/model_io.hpp"

namespace mbq {

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

struct Accum {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  double stddev() const {
    if (count < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, (sum_sq - static_cast<double>(count) * m * m) / static_cast<double>(count - 1)));
  }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double ms_since(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

double method_relative_mse(std::span<const double> w, Method method, int k, int cycles) {
  switch (method) {
    case Method::kUniform: return relative_mse(w, uniform_quantize(w, k).values);
    case Method::kBalanced: return relative_mse(w, balanced_quantize(w, k));
    case Method::kGreedy: return relative_mse(w, greedy_quantize(w, k).reconstruct());
    case Method::kRefined: return relative_mse(w, refined_greedy_quantize(w, k).reconstruct());
    case Method::kAlternating: return relative_mse(w, alternating_quantize(w, k, cycles).reconstruct());
    case Method::kTernary:
      if (k != 2) throw std::invalid_argument("ternary quantization is a 2-bit method");
      return relative_mse(w, ternary_quantize(w).reconstruct());
  }
  throw std::invalid_argument("unknown method");
}

CompareReport compare_methods(const CompareConfig& config) {
  if (config.bits.empty()) throw std::invalid_argument("no bit widths given");
  CompareReport report;
  report.seed = config.seed;

  auto cell = [&](const std::string& source, Method method, int k, auto&& vectors) {
    Accum acc;
    try {
      vectors([&](std::span<const double> v) { acc.add(method_relative_mse(v, method, k, config.cycles)); });
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(method_name(method)) + " k=" + std::to_string(k) + " on " + source +
                               ": " + e.what());
    }
    report.rows.push_back({source, method, k, acc.mean(), acc.stddev(), acc.count});
  };

  if (!config.weights) {
    if (config.trials == 0 || config.n == 0) throw std::invalid_argument("trials and n must be positive");
    std::vector<std::vector<double>> samples;
    for (std::size_t t = 0; t < config.trials; ++t) samples.push_back(gaussian(config.n, config.seed + t));
    for (int k : config.bits) {
      for (Method method : kCompareMethods) {
        cell("gaussian", method, k, [&](auto&& sink) {
          for (const auto& v : samples) sink(v);
        });
      }
    }
    return report;
  }

  const WeightContainer weights = load_weights(*config.weights);
  for (const Tensor& t : weights.tensors) {
    if (t.data.empty()) continue;
    const std::size_t cols = t.shape.size() >= 2 ? t.shape.back() : t.data.size();
    const std::size_t rows = t.data.size() / cols;
    for (int k : config.bits) {
      for (Method method : kCompareMethods) {
        cell(t.name, method, k, [&](auto&& sink) {
          std::vector<double> row(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, row.begin());
            if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) continue;
            sink(row);
          }
        });
      }
    }
  }
  return report;
}

std::string to_tsv(const CompareReport& report) {
  std::ostringstream out;
  out << "# seed=" << report.seed << " version=" << kReportVersion << "\n";
  out << "source\tbits\tmethod\tmean_rel_mse\tstd_rel_mse\ttrials\n";
  for (const auto& r : report.rows) {
    out << r.source << '\t' << r.bits << '\t' << method_name(r.method) << '\t' << num(r.mean) << '\t'
        << num(r.stddev) << '\t' << r.trials << '\n';
  }
  return out.str();
}

std::string to_json(const CompareReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"source", r.source},
                    {"bits", r.bits},
                    {"method", method_name(r.method)},
                    {"mean_rel_mse", r.mean},
                    {"std_rel_mse", r.stddev},
                    {"trials", r.trials}});
  }
  json j = {{"version", kReportVersion}, {"command", "compare"}, {"seed", report.seed}, {"rows", rows}};
  return j.dump(2) + "\n";
}

std::string machine_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
#if defined(__clang__)
  const std::string compiler = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  const std::string compiler = std::string("gcc ") + __VERSION__;
#else
  const std::string compiler = "unknown compiler";
#endif
  return cpu + "; " + compiler + "; 1 thread";
}

GemvBenchReport bench_gemv(const GemvBenchConfig& config) {
  if (config.m == 0 || config.n == 0) throw std::invalid_argument("matrix sizes must be positive");
  if (config.repeats < 30) throw std::invalid_argument("at least 30 timed repeats are required");
  GemvBenchReport report;
  report.config = config;
  report.machine = machine_descriptor();
  report.theoretical = theoretical_speedup(config.m, config.n, static_cast<std::uint64_t>(config.weight_bits),
                                           static_cast<std::uint64_t>(config.activation_bits));

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  MatrixF w(config.m, config.n);
  for (auto& v : w.data()) v = dist(rng);
  std::vector<double> x(config.n);
  for (auto& v : x) v = dist(rng);
  std::vector<float> xf(x.begin(), x.end());

  const QuantizedMatrix wq = quantize_matrix_rowwise(w, config.weight_bits, config.cycles, 1);

  std::vector<float> y_dense(config.m);
  std::vector<double> dense_t, quant_t, total_t;
  double sink = 0.0;
  for (std::size_t rep = 0; rep < config.warmup + config.repeats; ++rep) {
    const auto d0 = Clock::now();
    dense_gemv_f32(w, xf, y_dense);
    const auto d1 = Clock::now();
    sink += y_dense[rep % config.m];

    const auto q0 = Clock::now();
    const MultiBitCode code = alternating_quantize(x, config.activation_bits, config.cycles);
    const auto q1 = Clock::now();
    const std::vector<double> y = quantized_gemv_concat(wq, code, 1);
    const auto q2 = Clock::now();
    sink += y[rep % config.m];

    if (rep >= config.warmup) {
      dense_t.push_back(ms_since(d0, d1));
      quant_t.push_back(ms_since(q0, q1));
      total_t.push_back(ms_since(q0, q2));
    }
  }
  if (!std::isfinite(sink)) throw std::runtime_error("benchmark produced non-finite output");

  report.dense_ms = median(dense_t);
  report.quant_ms = median(quant_t);
  report.total_ms = median(total_t);
  report.quant_share = report.total_ms > 0.0 ? std::clamp(report.quant_ms / report.total_ms, 0.0, 1.0) : 0.0;
  report.speedup = report.total_ms > 0.0 ? report.dense_ms / report.total_ms : 0.0;

  // Accuracy of the packed product against the dense product of the
  // reconstructed operands.
  const MultiBitCode code = alternating_quantize(x, config.activation_bits, config.cycles);
  const std::vector<double> y = quantized_gemv_concat(wq, code, 1);
  const std::vector<double> x_hat = code.reconstruct();
  for (std::size_t r = 0; r < config.m; ++r) {
    const std::vector<double> row = wq.reconstruct_row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < config.n; ++c) s += row[c] * x_hat[c];
    report.max_abs_error = std::max(report.max_abs_error, std::abs(s - y[r]));
  }
  return report;
}

std::string to_tsv(const GemvBenchReport& r) {
  std::ostringstream out;
  out << "# seed=" << r.config.seed << " version=" << kReportVersion << " machine=" << r.machine << "\n";
  out << "m\tn\twbits\tabits\trepeats\tdense_ms\tquant_ms\ttotal_ms\tquant_share\tspeedup\ttheoretical\n";
  out << r.config.m << '\t' << r.config.n << '\t' << r.config.weight_bits << '\t' << r.config.activation_bits << '\t'
      << r.config.repeats << '\t' << num(r.dense_ms) << '\t' << num(r.quant_ms) << '\t' << num(r.total_ms) << '\t'
      << num(r.quant_share) << '\t' << num(r.speedup) << '\t' << num(r.theoretical) << '\n';
  return out.str();
}

std::string to_json(const GemvBenchReport& r) {
  json j = {{"version", kReportVersion},
            {"command", "bench-gemv"},
            {"seed", r.config.seed},
            {"machine", r.machine},
            {"threads", 1},
            {"m", r.config.m},
            {"n", r.config.n},
            {"wbits", r.config.weight_bits},
            {"abits", r.config.activation_bits},
            {"cycles", r.config.cycles},
            {"repeats", r.config.repeats},
            {"warmup", r.config.warmup},
            {"dense_ms", r.dense_ms},
            {"quant_ms", r.quant_ms},
            {"total_ms", r.total_ms},
            {"quant_share", r.quant_share},
            {"speedup", r.speedup},
            {"theoretical", r.theoretical},
            {"max_abs_error", r.max_abs_error}};
  return j.dump(2) + "\n";
}

std::vector<QuantizeSummary> quantize_file(const std::filesystem::path& in, const std::filesystem::path& out,
                                           int k, int cycles, Method method, unsigned threads) {
  const WeightContainer weights = load_weights(in);
  QuantizedContainer result;
  std::vector<QuantizeSummary> summary;
  for (const Tensor& t : weights.tensors) {
    if (t.shape.size() != 2) {
      result.dense.push_back(t);
      continue;
    }
    try {
      const MatrixF m = tensor_matrix(t);
      QuantizedMatrix q = quantize_matrix_rowwise(m, k, method, cycles, threads);
      const MatrixD rec = q.reconstruct();
      double err = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        const double d = static_cast<double>(t.data[i]) - rec.data()[i];
        err += d * d;
        norm += static_cast<double>(t.data[i]) * t.data[i];
      }
      summary.push_back({t.name, m.rows(), m.cols(), norm > 0.0 ? err / norm : 0.0});
      result.quantized.push_back({t.name, std::move(q)});
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(in.string() + ": tensor '" + t.name + "': " + e.what());
    }
  }
  save_quantized(out, result);
  return summary;
}

LmEvalReport eval_ppw_file(const std::filesystem::path& model, const std::filesystem::path& tokens,
                           int activation_bits, int cycles) {
  const Bytes bytes = read_file(model);
  const std::vector<std::uint32_t> ids = load_tokens(tokens);
  switch (detect_file_kind(bytes)) {
    case FileKind::kWeights: return eval_ppw(rnn_from_container(decode_weights(bytes)), ids);
    case FileKind::kQuantized:
      return eval_ppw(quantized_rnn_from_container(decode_quantized(bytes), activation_bits, cycles), ids);
    default:
      throw FormatError(IoErrc::kBadMagic, model.string() + ": format mismatch: not an MBQW or MBQQ model");
  }
}

std::string to_json(const LmEvalReport& report, std::uint64_t seed) {
  json j = {{"version", kReportVersion},
            {"command", "eval-ppw"},
            {"seed", seed},
            {"token_count", report.token_count},
            {"mean_nll", report.mean_nll},
            {"ppw", report.ppw}};
  return j.dump(2) + "\n";
}

std::string to_json(const TrainReport& report, const TrainConfig& config, const TaskSpec& task) {
  json j = {{"version", kReportVersion},
            {"command", "train-toy"},
            {"seed", config.seed},
            {"task", task.describe()},
            {"wbits", config.weight_bits},
            {"abits", config.activation_bits},
            {"initial_train_loss", report.initial_train_loss},
            {"train_loss", report.train_loss},
            {"val_loss", report.val_loss},
            {"learning_rate", report.learning_rate},
            {"best_val_loss", report.best_val_loss},
            {"epochs_run", report.epochs_run},
            {"diverged", report.diverged}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Self-check suites
// ---------------------------------------------------------------------------

namespace {

std::vector<double> random_alphas(int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(k));
  for (auto& v : a) v = u(rng);
  std::sort(a.begin(), a.end(), std::greater<>());
  return a;
}

SelfCheckResult check_bst(std::size_t trials, std::mt19937_64& rng) {
  SelfCheckResult res{"bst_exhaustive", true, trials, ""};
  std::uniform_int_distribution<int> pick_k(1, 4);
  for (std::size_t t = 0; t < trials; ++t) {
    const int k = pick_k(rng);
    const auto alphas = random_alphas(k, rng);
    const Codebook cb = build_codebook(alphas);
    const double span = std::accumulate(alphas.begin(), alphas.end(), 0.0) * 1.25;
    const double w = std::uniform_real_distribution<double>(-span, span)(rng);
    const std::size_t got = bst_assign(w, cb);
    double best = std::abs(w - cb.values[0]);
    for (double v : cb.values) best = std::min(best, std::abs(w - v));
    if (std::abs(w - cb.values[got]) > best) {
      res.passed = false;
      res.detail = "trial " + std::to_string(t) + ": w=" + num(w) + " not assigned to a nearest value";
      return res;
    }
  }
  return res;
}

SelfCheckResult check_descent(std::size_t trials, std::mt19937_64& rng) {
  SelfCheckResult res{"alternating_descent", true, trials, ""};
  for (std::size_t t = 0; t < trials; ++t) {
    const int k = 2 + static_cast<int>(t % 3);
    const auto w = gaussian(256, rng());
    const auto trace = alternating_quantize_traced(w, k, 4);
    double norm = 0.0;
    for (double v : w) norm += v * v;
    const double tol = 1e-12 * norm;
    for (std::size_t i = 1; i < trace.residuals.size(); ++i) {
      if (trace.residuals[i] > trace.residuals[i - 1] + tol) {
        res.passed = false;
        res.detail = "trial " + std::to_string(t) + ": residual rose at half-step " + std::to_string(i);
        return res;
      }
    }
    if (trace.residuals.back() > squared_residual(w, greedy_quantize(w, k).reconstruct()) + tol) {
      res.passed = false;
      res.detail = "trial " + std::to_string(t) + ": final residual above greedy";
      return res;
    }
  }
  return res;
}

SelfCheckResult check_kernels(std::size_t trials, std::mt19937_64& rng) {
  SelfCheckResult res{"kernel_equivalence", true, trials, ""};
  std::bernoulli_distribution coin(0.5);
  for (std::size_t n = 1; n <= 200; ++n) {
    std::vector<std::int8_t> a(n), b(n);
    std::int64_t naive = 0;
    for (std::size_t j = 0; j < n; ++j) {
      a[j] = coin(rng) ? 1 : -1;
      b[j] = coin(rng) ? 1 : -1;
      naive += a[j] * b[j];
    }
    if (xnor_popcount_dot(pack_signs(a), pack_signs(b)) != naive) {
      res.passed = false;
      res.detail = "xnor-popcount dot differs from the naive dot at length " + std::to_string(n);
      return res;
    }
  }
  std::uniform_int_distribution<std::size_t> dim(1, 300);
  std::uniform_int_distribution<int> bits(1, 4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t m = dim(rng), n = dim(rng);
    MatrixD w(m, n);
    for (auto& v : w.data()) v = g(rng);
    std::vector<double> x(n);
    for (auto& v : x) v = g(rng);
    const QuantizedMatrix q = quantize_matrix_rowwise(w, bits(rng));
    const MultiBitCode code = alternating_quantize(x, bits(rng));
    const auto y1 = quantized_gemv(q, code);
    const auto y2 = quantized_gemv_concat(q, code);
    const auto y3 = dense_gemv(q.reconstruct(), code.reconstruct());
    for (std::size_t r = 0; r < m; ++r) {
      const double scale = std::max(1.0, std::abs(y3[r]));
      if (std::abs(y1[r] - y3[r]) > 1e-9 * scale || std::abs(y2[r] - y3[r]) > 1e-9 * scale) {
        res.passed = false;
        res.detail = "trial " + std::to_string(t) + ": packed product differs from the dense reference";
        return res;
      }
    }
  }
  return res;
}

template <typename Encode, typename Decode, typename Value>
bool roundtrips(const Value& v, Encode enc, Decode dec) {
  const Bytes a = enc(v);
  const auto back = dec(a);
  return back == v && enc(back) == a;
}

SelfCheckResult check_formats(std::size_t trials, std::mt19937_64& rng) {
  SelfCheckResult res{"format_roundtrip", true, trials, ""};
  std::uniform_int_distribution<std::uint32_t> dim(0, 20);
  std::uniform_int_distribution<std::uint32_t> id;
  std::normal_distribution<float> g(0.0f, 1.0f);
  auto fail = [&](const std::string& what) {
    res.passed = false;
    res.detail = what;
    return res;
  };
  for (std::size_t t = 0; t < trials; ++t) {
    WeightContainer wc;
    const std::uint32_t count = dim(rng) % 4;
    for (std::uint32_t i = 0; i < count; ++i) {
      Tensor tensor{"t" + std::to_string(i), {dim(rng), dim(rng)}, {}};
      tensor.data.resize(static_cast<std::size_t>(tensor.shape[0]) * tensor.shape[1]);
      for (auto& v : tensor.data) v = g(rng);
      wc.add(std::move(tensor));
    }
    if (!roundtrips(wc, encode_weights, decode_weights)) return fail("weights round-trip differs");

    const std::size_t m = 1 + dim(rng), n = 1 + dim(rng) * 7;
    MatrixD w(m, n);
    for (auto& v : w.data()) v = g(rng);
    QuantizedContainer qc;
    qc.quantized.push_back({"w", quantize_matrix_rowwise(w, 1 + static_cast<int>(t % 4))});
    qc.dense.push_back({"b", {2}, {g(rng), g(rng)}});
    if (!roundtrips(qc, encode_quantized, decode_quantized)) return fail("quantized round-trip differs");
    if (n % 64 != 0) {
      Bytes bytes = encode_quantized(qc);
      // Last byte of the final plane word, before the dense section.
      const std::size_t dense_bytes = 4 + (4 + 1) + 4 + 4 + 8;
      bytes[bytes.size() - dense_bytes - 1] |= 0x80;
      try {
        (void)decode_quantized(bytes);
        return fail("nonzero padding bit was accepted");
      } catch (const FormatError& e) {
        if (e.code() != IoErrc::kCorruptBitplane) return fail(std::string("padding corruption misreported: ") + e.what());
      }
    }

    std::vector<std::uint32_t> ids(dim(rng) * 3);
    for (auto& v : ids) v = id(rng);
    const Bytes tb = encode_tokens(ids);
    if (decode_tokens(tb) != ids || encode_tokens(decode_tokens(tb)) != tb) return fail("token round-trip differs");
  }
  return res;
}

}  // namespace

std::vector<SelfCheckResult> selfcheck(int level, std::uint64_t seed, std::ostream* log) {
  if (level < 1) throw std::invalid_argument("level must be at least 1");
  const auto scale = static_cast<std::size_t>(level);
  std::mt19937_64 rng(seed);
  std::vector<SelfCheckResult> results;
  auto run = [&](SelfCheckResult r) {
    if (log) *log << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.trials << " trials)"
                  << (r.detail.empty() ? "" : ": " + r.detail) << "\n";
    results.push_back(std::move(r));
  };
  run(check_bst(10000 * scale, rng));
  run(check_descent(200 * scale, rng));
  run(check_kernels(50 * scale, rng));
  run(check_formats(100 * scale, rng));
  return results;
}

}  // namespace mbq
