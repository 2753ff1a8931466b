#pragma once

// Toy quantization-aware training. The forward pass uses quantized weights
// (and optionally quantized hidden activations) derived from full-precision
// master weights; gradients with respect to the quantized values are applied
// unchanged to the masters (straight-through estimator).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbq/matrix.hpp"
#include "mbq/quantizer.hpp"

namespace mbq {

struct Dataset {
  MatrixD inputs;                     // samples x features
  std::vector<std::uint32_t> labels;  // classification targets
  MatrixD targets;                    // regression targets (samples x outputs), may be empty
  std::size_t classes = 0;

  std::size_t size() const noexcept { return inputs.rows(); }
};

/// n_bits inputs in {-1,+1}; label is the parity of the +1 count.
Dataset make_parity_task(std::size_t n_bits, std::size_t samples, std::uint64_t seed);
/// One-hot sequence of seq_len tokens over `vocab`; label is the first token.
Dataset make_copy_task(std::size_t seq_len, std::size_t vocab, std::size_t samples, std::uint64_t seed);

/// A model whose parameters live in one flat vector.
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual std::span<double> params() noexcept = 0;
  virtual std::span<const double> params() const noexcept = 0;
  /// Mean loss over `batch`; fills `grad` (same size as params) when non-empty.
  virtual double loss_and_grad(const Dataset& data, std::span<const std::size_t> batch,
                               std::span<double> grad) const = 0;
};

/// y = W x + b with loss 0.5 * mean ||y - t||^2.
class LinearRegression final : public Differentiable {
 public:
  LinearRegression(std::size_t inputs, std::size_t outputs, bool bias, std::uint64_t seed);

  std::span<double> params() noexcept override { return params_; }
  std::span<const double> params() const noexcept override { return params_; }
  double loss_and_grad(const Dataset& data, std::span<const std::size_t> batch,
                       std::span<double> grad) const override;

 private:
  std::size_t inputs_;
  std::size_t outputs_;
  bool bias_;
  std::vector<double> params_;
};

/// logits = W2 q(tanh(W1 x + b1)) + b2 with softmax cross-entropy, where q is
/// on-line activation quantization (identity when activation_bits == 0).
class TanhMlp final : public Differentiable {
 public:
  TanhMlp(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed);

  std::span<double> params() noexcept override { return params_; }
  std::span<const double> params() const noexcept override { return params_; }
  double loss_and_grad(const Dataset& data, std::span<const std::size_t> batch,
                       std::span<double> grad) const override;

  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t classes() const noexcept { return classes_; }

  MatrixD w1() const;
  MatrixD w2() const;
  void set_w1(const MatrixD& w);
  void set_w2(const MatrixD& w);
  /// Offsets of the two weight matrices inside params(); biases are excluded.
  std::span<double> w1_params() noexcept;
  std::span<double> w2_params() noexcept;

  void set_activation_quantization(int bits, int cycles) noexcept {
    activation_bits_ = bits;
    activation_cycles_ = cycles;
  }

 private:
  std::size_t inputs_;
  std::size_t hidden_;
  std::size_t classes_;
  int activation_bits_ = 0;
  int activation_cycles_ = kDefaultCycles;
  std::vector<double> params_;  // W1 | b1 | W2 | b2
};

struct SteForward {
  MatrixD w_hat;
  std::vector<MultiBitCode> codes;  // one per row
};

/// Row-wise alternating quantization of the master weights.
SteForward ste_forward(const MatrixD& w_full, int k, int cycles = kDefaultCycles);

/// Straight-through estimator: the gradient with respect to the quantized
/// weights is returned unchanged.
std::vector<double> ste_backward(std::span<const double> grad_w_hat);

/// Entrywise clamp to [-limit, limit].
void clip_weights(std::span<double> w, double limit = 1.0) noexcept;

/// Entrywise clamp to [-limit, limit], or rescale to global L2 norm <= limit.
void clip_gradients(std::span<double> grad, double limit, bool global_norm) noexcept;

struct TrainConfig {
  int weight_bits = 0;      // 0 trains in full precision
  int activation_bits = 0;  // 0 leaves hidden activations unquantized
  int cycles = kDefaultCycles;
  double learning_rate = 1.0;
  double lr_decay = 1.2;
  double min_lr_fraction = 1e-3;
  double grad_clip = 0.25;
  bool global_norm_clip = false;
  double weight_clip = 1.0;
  int max_epochs = 50;
  std::size_t hidden = 64;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class TaskKind { kParity, kCopy };

struct TaskSpec {
  TaskKind kind = TaskKind::kParity;
  std::size_t n_bits = 8;   // parity
  std::size_t seq_len = 4;  // copy
  std::size_t vocab = 4;    // copy
  std::size_t samples = 512;

  std::string describe() const;
};

struct TrainReport {
  double initial_train_loss = 0.0;
  std::vector<double> train_loss;  // after each epoch
  std::vector<double> val_loss;
  std::vector<double> learning_rate;  // used during each epoch
  double best_val_loss = 0.0;
  int epochs_run = 0;
  bool diverged = false;
};

TrainReport train_toy(const TrainConfig& config, const TaskSpec& task);

/// Largest relative deviation between analytic and central-difference
/// gradients over up to `coordinates` randomly chosen parameters.
/// Deviation is |a - d| / max(|a|, |d|, 1e-8).
double finite_diff_check(Differentiable& model, const Dataset& data, std::span<const std::size_t> batch,
                         double step = 1e-4, std::size_t coordinates = 200, std::uint64_t seed = 7);

}  // namespace mbq
