#include "mbq/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mbq/linalg.hpp"

namespace mbq {

namespace {

double sigmoid(double v) noexcept { return 1.0 / (1.0 + std::exp(-v)); }

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_finite(std::span<const float> v, const char* name) {
  for (float x : v) require(std::isfinite(x), std::string("non-finite entry in ") + name);
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

void add_bias(std::vector<double>& y, std::span<const float> b) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += static_cast<double>(b[i]);
}

MatrixF random_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = static_cast<float>(dist(rng));
  return MatrixF(rows, cols, std::move(data));
}

void check_tokens(std::span<const std::uint32_t> tokens, std::size_t vocab) {
  if (tokens.size() < 2) throw std::invalid_argument("need at least 2 tokens to evaluate");
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= vocab) {
      throw std::out_of_range("token id " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                              " exceeds vocabulary size " + std::to_string(vocab));
    }
  }
}

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

LmEvalReport finish_report(double total_nll, std::size_t count) {
  LmEvalReport report;
  report.token_count = count;
  report.mean_nll = total_nll / static_cast<double>(count);
  report.ppw = std::exp(report.mean_nll);
  return report;
}

}  // namespace

void RnnWeights::validate() const {
  const std::size_t v = vocab();
  const std::size_t d = input_dim();
  const std::size_t h = hidden_dim();
  const std::size_t g = gate_count(cell) * h;
  require(v >= 1 && d >= 1 && h >= 1, "vocabulary, input and hidden sizes must be >= 1");
  require(w_input.rows() == g && w_input.cols() == d, "input weights must be G*h x d");
  require(w_hidden.rows() == g, "recurrent weights must be G*h x h");
  require(b_input.size() == g && b_hidden.size() == g, "gate biases must have G*h entries");
  require(w_softmax.rows() == v && w_softmax.cols() == h, "softmax weights must be V x h");
  require(b_softmax.size() == v, "softmax bias must have V entries");
  require_finite(embedding.data(), "embedding");
  require_finite(w_input.data(), "input weights");
  require_finite(w_hidden.data(), "recurrent weights");
  require_finite(w_softmax.data(), "softmax weights");
  require_finite(b_input, "input bias");
  require_finite(b_hidden, "recurrent bias");
  require_finite(b_softmax, "softmax bias");
}

RnnWeights RnnWeights::random(CellType cell, std::size_t vocab, std::size_t input_dim, std::size_t hidden_dim,
                              double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t g = gate_count(cell) * hidden_dim;
  RnnWeights w;
  w.cell = cell;
  w.embedding = random_matrix(vocab, input_dim, stddev, rng);
  w.w_input = random_matrix(g, input_dim, stddev, rng);
  w.w_hidden = random_matrix(g, hidden_dim, stddev, rng);
  w.w_softmax = random_matrix(vocab, hidden_dim, stddev, rng);
  w.b_input.assign(g, 0.0f);
  w.b_hidden.assign(g, 0.0f);
  w.b_softmax.assign(vocab, 0.0f);
  return w;
}

RnnWeights RnnWeights::zeros(CellType cell, std::size_t vocab, std::size_t input_dim, std::size_t hidden_dim) {
  const std::size_t g = gate_count(cell) * hidden_dim;
  RnnWeights w;
  w.cell = cell;
  w.embedding = MatrixF(vocab, input_dim);
  w.w_input = MatrixF(g, input_dim);
  w.w_hidden = MatrixF(g, hidden_dim);
  w.w_softmax = MatrixF(vocab, hidden_dim);
  w.b_input.assign(g, 0.0f);
  w.b_hidden.assign(g, 0.0f);
  w.b_softmax.assign(vocab, 0.0f);
  return w;
}

void QuantizedRnn::validate() const {
  const std::size_t v = vocab();
  const std::size_t d = input_dim();
  const std::size_t h = hidden_dim();
  const std::size_t g = gate_count(cell) * h;
  require(v >= 1 && d >= 1 && h >= 1, "vocabulary, input and hidden sizes must be >= 1");
  require(weight_bits >= 1 && weight_bits <= 8, "weight bits must be in [1, 8]");
  require(activation_bits >= 1 && activation_bits <= 8, "activation bits must be in [1, 8]");
  require(cycles >= 0, "cycle count must be >= 0");
  for (const auto* m : {&embedding, &w_input, &w_hidden, &w_softmax}) {
    require(m->bits() == weight_bits, "all quantized tensors must share the weight bit count");
  }
  require(w_input.rows() == g && w_input.cols() == d, "input weights must be G*h x d");
  require(w_hidden.rows() == g, "recurrent weights must be G*h x h");
  require(b_input.size() == g && b_hidden.size() == g, "gate biases must have G*h entries");
  require(w_softmax.rows() == v && w_softmax.cols() == h, "softmax weights must be V x h");
  require(b_softmax.size() == v, "softmax bias must have V entries");
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

LstmState lstm_update(std::span<const double> pre, std::span<const double> c_prev, LstmGates* gates) {
  const std::size_t h = c_prev.size();
  require(pre.size() == 4 * h, "LSTM pre-activations must have 4h entries");
  LstmState s{std::vector<double>(h), std::vector<double>(h)};
  if (gates) {
    gates->input.resize(h);
    gates->forget.resize(h);
    gates->output.resize(h);
    gates->candidate.resize(h);
  }
  for (std::size_t j = 0; j < h; ++j) {
    const double i = sigmoid(pre[j]);
    const double f = sigmoid(pre[h + j]);
    const double o = sigmoid(pre[2 * h + j]);
    const double g = std::tanh(pre[3 * h + j]);
    s.c[j] = f * c_prev[j] + i * g;
    s.h[j] = o * std::tanh(s.c[j]);
    if (gates) {
      gates->input[j] = i;
      gates->forget[j] = f;
      gates->output[j] = o;
      gates->candidate[j] = g;
    }
  }
  return s;
}

LstmState lstm_step(const RnnWeights& w, std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, LstmGates* gates) {
  require(w.cell == CellType::kLstm, "lstm_step needs LSTM weights");
  require(h_prev.size() == w.hidden_dim() && c_prev.size() == w.hidden_dim(), "state size mismatch");
  auto pre = dense_gemv(w.w_input, x);
  add_bias(pre, w.b_input);
  auto rec = dense_gemv(w.w_hidden, h_prev);
  add_bias(rec, w.b_hidden);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += rec[i];
  return lstm_update(pre, c_prev, gates);
}

std::vector<double> gru_update(std::span<const double> input_pre, std::span<const double> hidden_pre,
                               std::span<const double> h_prev) {
  const std::size_t h = h_prev.size();
  require(input_pre.size() == 3 * h && hidden_pre.size() == 3 * h, "GRU pre-activations must have 3h entries");
  std::vector<double> out(h);
  for (std::size_t j = 0; j < h; ++j) {
    const double r = sigmoid(input_pre[j] + hidden_pre[j]);
    const double z = sigmoid(input_pre[h + j] + hidden_pre[h + j]);
    const double n = std::tanh(input_pre[2 * h + j] + r * hidden_pre[2 * h + j]);
    out[j] = z * h_prev[j] + (1.0 - z) * n;
  }
  return out;
}

std::vector<double> gru_step(const RnnWeights& w, std::span<const double> x, std::span<const double> h_prev) {
  require(w.cell == CellType::kGru, "gru_step needs GRU weights");
  require(h_prev.size() == w.hidden_dim(), "state size mismatch");
  auto in = dense_gemv(w.w_input, x);
  add_bias(in, w.b_input);
  auto rec = dense_gemv(w.w_hidden, h_prev);
  add_bias(rec, w.b_hidden);
  return gru_update(in, rec, h_prev);
}

// ---------------------------------------------------------------------------
// Quantized model
// ---------------------------------------------------------------------------

QuantizedRnn quantize_rnn(const RnnWeights& w, int weight_bits, int activation_bits, int cycles, unsigned threads) {
  w.validate();
  require(weight_bits >= 1 && weight_bits <= 8, "weight bits must be in [1, 8]");
  require(activation_bits >= 1 && activation_bits <= 8, "activation bits must be in [1, 8]");
  QuantizedRnn q;
  q.cell = w.cell;
  q.embedding = quantize_matrix_rowwise(w.embedding, weight_bits, cycles, threads);
  q.w_input = quantize_matrix_rowwise(w.w_input, weight_bits, cycles, threads);
  q.w_hidden = quantize_matrix_rowwise(w.w_hidden, weight_bits, cycles, threads);
  q.w_softmax = quantize_matrix_rowwise(w.w_softmax, weight_bits, cycles, threads);
  q.b_input = w.b_input;
  q.b_hidden = w.b_hidden;
  q.b_softmax = w.b_softmax;
  q.weight_bits = weight_bits;
  q.activation_bits = activation_bits;
  q.cycles = cycles;
  return q;
}

namespace {

std::vector<double> quantized_affine(const QuantizedMatrix& w, const MultiBitCode& code, std::span<const float> bias) {
  auto y = quantized_gemv_concat(w, code);
  add_bias(y, bias);
  return y;
}

}  // namespace

LstmState quantized_lstm_step_coded(const QuantizedRnn& q, const MultiBitCode& x_code, const MultiBitCode& h_code,
                                    std::span<const double> c_prev) {
  require(q.cell == CellType::kLstm, "quantized_lstm_step needs an LSTM model");
  require(c_prev.size() == q.hidden_dim(), "state size mismatch");
  auto pre = quantized_affine(q.w_input, x_code, q.b_input);
  const auto rec = quantized_affine(q.w_hidden, h_code, q.b_hidden);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += rec[i];
  return lstm_update(pre, c_prev);
}

LstmState quantized_lstm_step(const QuantizedRnn& q, const MultiBitCode& x_code, std::span<const double> h_prev,
                              std::span<const double> c_prev) {
  require(h_prev.size() == q.hidden_dim(), "state size mismatch");
  return quantized_lstm_step_coded(q, x_code, alternating_quantize(h_prev, q.activation_bits, q.cycles), c_prev);
}

std::vector<double> quantized_gru_step_coded(const QuantizedRnn& q, const MultiBitCode& x_code,
                                             const MultiBitCode& h_code, std::span<const double> h_prev) {
  require(q.cell == CellType::kGru, "quantized_gru_step needs a GRU model");
  require(h_prev.size() == q.hidden_dim(), "state size mismatch");
  const auto in = quantized_affine(q.w_input, x_code, q.b_input);
  const auto rec = quantized_affine(q.w_hidden, h_code, q.b_hidden);
  return gru_update(in, rec, h_prev);
}

std::vector<double> quantized_gru_step(const QuantizedRnn& q, const MultiBitCode& x_code,
                                       std::span<const double> h_prev) {
  require(h_prev.size() == q.hidden_dim(), "state size mismatch");
  return quantized_gru_step_coded(q, x_code, alternating_quantize(h_prev, q.activation_bits, q.cycles), h_prev);
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

double softmax_nll(std::span<const double> logits, std::size_t target) {
  require(target < logits.size(), "target outside the logit vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - peak);
  return std::log(z) - (logits[target] - peak);
}

LmEvalReport eval_ppw(const RnnWeights& model, std::span<const std::uint32_t> tokens) {
  model.validate();
  check_tokens(tokens, model.vocab());
  const std::size_t h = model.hidden_dim();
  std::vector<double> state_h(h, 0.0);
  std::vector<double> state_c(h, 0.0);
  CompensatedSum total;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const auto x = to_double(model.embedding.row(tokens[t - 1]));
    if (model.cell == CellType::kLstm) {
      auto s = lstm_step(model, x, state_h, state_c);
      state_h = std::move(s.h);
      state_c = std::move(s.c);
    } else {
      state_h = gru_step(model, x, state_h);
    }
    auto logits = dense_gemv(model.w_softmax, state_h);
    add_bias(logits, model.b_softmax);
    total.add(softmax_nll(logits, tokens[t]));
  }
  return finish_report(total.value(), tokens.size() - 1);
}

LmEvalReport eval_ppw(const QuantizedRnn& model, std::span<const std::uint32_t> tokens) {
  model.validate();
  check_tokens(tokens, model.vocab());
  const std::size_t h = model.hidden_dim();
  std::vector<double> state_h(h, 0.0);
  std::vector<double> state_c(h, 0.0);
  MultiBitCode h_code = alternating_quantize(state_h, model.activation_bits, model.cycles);
  CompensatedSum total;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const MultiBitCode x_code = model.embedding.row_code(tokens[t - 1]);
    if (model.cell == CellType::kLstm) {
      auto s = quantized_lstm_step_coded(model, x_code, h_code, state_c);
      state_h = std::move(s.h);
      state_c = std::move(s.c);
    } else {
      state_h = quantized_gru_step_coded(model, x_code, h_code, state_h);
    }
    h_code = alternating_quantize(state_h, model.activation_bits, model.cycles);
    const auto logits = quantized_affine(model.w_softmax, h_code, model.b_softmax);
    total.add(softmax_nll(logits, tokens[t]));
  }
  return finish_report(total.value(), tokens.size() - 1);
}

}  // namespace mbq
