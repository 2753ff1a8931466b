#pragma once

// Single-layer LSTM/GRU language models in full precision and with row-wise
// quantized weights plus on-line quantized hidden states.
//
// LSTM gates are stacked (i, f, o, g); GRU gates are stacked (r, z, n) where n
// is the candidate state:
//   r = sigmoid(Wr x + br + Ur h + cr),  z = sigmoid(Wz x + bz + Uz h + cz)
//   n = tanh(Wn x + bn + r * (Un h + cn)),  h' = z * h + (1 - z) * n

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mbq/matrix.hpp"
#include "mbq/quantizer.hpp"

namespace mbq {

enum class CellType { kLstm, kGru };

constexpr std::size_t gate_count(CellType cell) noexcept { return cell == CellType::kLstm ? 4 : 3; }

struct RnnWeights {
  CellType cell = CellType::kLstm;
  MatrixF embedding;  // V x d
  MatrixF w_input;    // G*h x d
  MatrixF w_hidden;   // G*h x h
  std::vector<float> b_input;
  std::vector<float> b_hidden;
  MatrixF w_softmax;  // V x h
  std::vector<float> b_softmax;

  std::size_t vocab() const noexcept { return embedding.rows(); }
  std::size_t input_dim() const noexcept { return embedding.cols(); }
  std::size_t hidden_dim() const noexcept { return w_hidden.cols(); }

  /// Throws std::invalid_argument when shapes disagree or an entry is not finite.
  void validate() const;

  /// Entries drawn from N(0, stddev^2); biases zero.
  static RnnWeights random(CellType cell, std::size_t vocab, std::size_t input_dim, std::size_t hidden_dim,
                           double stddev, std::uint64_t seed);
  /// All-zero model; its softmax is uniform over the vocabulary.
  static RnnWeights zeros(CellType cell, std::size_t vocab, std::size_t input_dim, std::size_t hidden_dim);
};

struct QuantizedRnn {
  CellType cell = CellType::kLstm;
  QuantizedMatrix embedding;
  QuantizedMatrix w_input;
  QuantizedMatrix w_hidden;
  QuantizedMatrix w_softmax;
  std::vector<float> b_input;
  std::vector<float> b_hidden;
  std::vector<float> b_softmax;
  int weight_bits = 2;
  int activation_bits = 2;
  int cycles = kDefaultCycles;

  std::size_t vocab() const noexcept { return embedding.rows(); }
  std::size_t input_dim() const noexcept { return embedding.cols(); }
  std::size_t hidden_dim() const noexcept { return w_hidden.cols(); }

  void validate() const;
};

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

/// Gate activations of one LSTM step, kept for inspection.
struct LstmGates {
  std::vector<double> input;
  std::vector<double> forget;
  std::vector<double> output;
  std::vector<double> candidate;
};

struct LmEvalReport {
  std::size_t token_count = 0;  // predicted positions
  double mean_nll = 0.0;        // nats per token
  double ppw = 0.0;
};

/// Applies the LSTM cell update to stacked gate pre-activations.
LstmState lstm_update(std::span<const double> preactivations, std::span<const double> c_prev,
                      LstmGates* gates = nullptr);

LstmState lstm_step(const RnnWeights& w, std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, LstmGates* gates = nullptr);

/// `input_pre` = W x + b, `hidden_pre` = U h + c, both 3h long.
std::vector<double> gru_update(std::span<const double> input_pre, std::span<const double> hidden_pre,
                               std::span<const double> h_prev);

std::vector<double> gru_step(const RnnWeights& w, std::span<const double> x, std::span<const double> h_prev);

/// Row-wise alternating quantization of the four weight matrices.
QuantizedRnn quantize_rnn(const RnnWeights& w, int weight_bits, int activation_bits, int cycles = kDefaultCycles,
                          unsigned threads = 1);

/// LSTM step with h_prev quantized on-line to `q.activation_bits` bits.
LstmState quantized_lstm_step(const QuantizedRnn& q, const MultiBitCode& x_code, std::span<const double> h_prev,
                              std::span<const double> c_prev);
/// Same step with an already-quantized hidden state.
LstmState quantized_lstm_step_coded(const QuantizedRnn& q, const MultiBitCode& x_code, const MultiBitCode& h_code,
                                    std::span<const double> c_prev);

std::vector<double> quantized_gru_step(const QuantizedRnn& q, const MultiBitCode& x_code,
                                       std::span<const double> h_prev);
std::vector<double> quantized_gru_step_coded(const QuantizedRnn& q, const MultiBitCode& x_code,
                                             const MultiBitCode& h_code, std::span<const double> h_prev);

/// Teacher-forced perplexity: token t is predicted from tokens before t,
/// starting from zero state. Throws for ids >= vocab or fewer than 2 tokens.
LmEvalReport eval_ppw(const RnnWeights& model, std::span<const std::uint32_t> tokens);
/// Quantized evaluation. Each h_t is quantized once and that code feeds both
/// the softmax product and the next recurrent step.
LmEvalReport eval_ppw(const QuantizedRnn& model, std::span<const std::uint32_t> tokens);

/// -log softmax(logits)[target], computed with max subtraction.
double softmax_nll(std::span<const double> logits, std::size_t target);

}  // namespace mbq
