#include "mbq/ste.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mbq {

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

Dataset make_parity_task(std::size_t n_bits, std::size_t samples, std::uint64_t seed) {
  if (n_bits == 0 || samples == 0) throw std::invalid_argument("parity task needs bits and samples");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  Dataset d;
  d.inputs = MatrixD(samples, n_bits);
  d.labels.resize(samples);
  d.classes = 2;
  for (std::size_t s = 0; s < samples; ++s) {
    std::uint32_t ones = 0;
    for (std::size_t b = 0; b < n_bits; ++b) {
      const bool bit = coin(rng);
      d.inputs(s, b) = bit ? 1.0 : -1.0;
      ones += bit ? 1u : 0u;
    }
    d.labels[s] = ones % 2;
  }
  return d;
}

Dataset make_copy_task(std::size_t seq_len, std::size_t vocab, std::size_t samples, std::uint64_t seed) {
  if (seq_len == 0 || vocab < 2 || samples == 0) throw std::invalid_argument("copy task needs seq_len, vocab >= 2, samples");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(vocab - 1));
  Dataset d;
  d.inputs = MatrixD(samples, seq_len * vocab);
  d.labels.resize(samples);
  d.classes = vocab;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const std::uint32_t tok = pick(rng);
      d.inputs(s, t * vocab + tok) = 1.0;
      if (t == 0) d.labels[s] = tok;
    }
  }
  return d;
}

std::string TaskSpec::describe() const {
  if (kind == TaskKind::kParity) {
    return "parity(" + std::to_string(n_bits) + ", " + std::to_string(samples) + ")";
  }
  return "copy(" + std::to_string(seq_len) + ", " + std::to_string(vocab) + ", " + std::to_string(samples) + ")";
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

LinearRegression::LinearRegression(std::size_t inputs, std::size_t outputs, bool bias, std::uint64_t seed)
    : inputs_(inputs), outputs_(outputs), bias_(bias), params_(outputs * inputs + (bias ? outputs : 0)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.5);
  for (auto& p : params_) p = dist(rng);
}

double LinearRegression::loss_and_grad(const Dataset& data, std::span<const std::size_t> batch,
                                       std::span<double> grad) const {
  if (data.inputs.cols() != inputs_ || data.targets.cols() != outputs_) {
    throw std::invalid_argument("dataset shape does not match the linear model");
  }
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> residual(outputs_);
  for (auto s : batch) {
    const auto x = data.inputs.row(s);
    for (std::size_t o = 0; o < outputs_; ++o) {
      double y = bias_ ? params_[outputs_ * inputs_ + o] : 0.0;
      for (std::size_t i = 0; i < inputs_; ++i) y += params_[o * inputs_ + i] * x[i];
      residual[o] = y - data.targets(s, o);
      loss += 0.5 * residual[o] * residual[o] * scale;
    }
    if (grad.empty()) continue;
    for (std::size_t o = 0; o < outputs_; ++o) {
      for (std::size_t i = 0; i < inputs_; ++i) grad[o * inputs_ + i] += residual[o] * x[i] * scale;
      if (bias_) grad[outputs_ * inputs_ + o] += residual[o] * scale;
    }
  }
  return loss;
}

TanhMlp::TanhMlp(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed)
    : inputs_(inputs), hidden_(hidden), classes_(classes),
      params_(hidden * inputs + hidden + classes * hidden + classes, 0.0) {
  if (inputs == 0 || hidden == 0 || classes < 2) throw std::invalid_argument("invalid network shape");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(static_cast<double>(inputs)),
                                            1.0 / std::sqrt(static_cast<double>(inputs)));
  std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(static_cast<double>(hidden)),
                                            1.0 / std::sqrt(static_cast<double>(hidden)));
  for (auto& p : w1_params()) p = u1(rng);
  for (auto& p : w2_params()) p = u2(rng);
}

std::span<double> TanhMlp::w1_params() noexcept { return {params_.data(), hidden_ * inputs_}; }
std::span<double> TanhMlp::w2_params() noexcept {
  return {params_.data() + hidden_ * inputs_ + hidden_, classes_ * hidden_};
}

MatrixD TanhMlp::w1() const {
  const auto* p = params_.data();
  return MatrixD(hidden_, inputs_, std::vector<double>(p, p + hidden_ * inputs_));
}

MatrixD TanhMlp::w2() const {
  const auto* p = params_.data() + hidden_ * inputs_ + hidden_;
  return MatrixD(classes_, hidden_, std::vector<double>(p, p + classes_ * hidden_));
}

void TanhMlp::set_w1(const MatrixD& w) {
  if (w.rows() != hidden_ || w.cols() != inputs_) throw std::invalid_argument("W1 shape mismatch");
  std::copy(w.data().begin(), w.data().end(), w1_params().begin());
}

void TanhMlp::set_w2(const MatrixD& w) {
  if (w.rows() != classes_ || w.cols() != hidden_) throw std::invalid_argument("W2 shape mismatch");
  std::copy(w.data().begin(), w.data().end(), w2_params().begin());
}

double TanhMlp::loss_and_grad(const Dataset& data, std::span<const std::size_t> batch,
                              std::span<double> grad) const {
  if (data.inputs.cols() != inputs_ || data.classes != classes_) {
    throw std::invalid_argument("dataset shape does not match the network");
  }
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  const double* w1 = params_.data();
  const double* b1 = w1 + hidden_ * inputs_;
  const double* w2 = b1 + hidden_;
  const double* b2 = w2 + classes_ * hidden_;
  double* g_w1 = grad.empty() ? nullptr : grad.data();
  double* g_b1 = g_w1 ? g_w1 + hidden_ * inputs_ : nullptr;
  double* g_w2 = g_w1 ? g_b1 + hidden_ : nullptr;
  double* g_b2 = g_w1 ? g_w2 + classes_ * hidden_ : nullptr;

  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> act(hidden_);
  std::vector<double> act_q(hidden_);
  std::vector<double> logits(classes_);
  std::vector<double> d_act(hidden_);
  double loss = 0.0;
  for (auto s : batch) {
    const auto x = data.inputs.row(s);
    for (std::size_t h = 0; h < hidden_; ++h) {
      double z = b1[h];
      for (std::size_t i = 0; i < inputs_; ++i) z += w1[h * inputs_ + i] * x[i];
      act[h] = std::tanh(z);
    }
    if (activation_bits_ > 0) {
      act_q = alternating_quantize(act, activation_bits_, activation_cycles_).reconstruct();
    } else {
      act_q = act;
    }
    for (std::size_t c = 0; c < classes_; ++c) {
      double z = b2[c];
      for (std::size_t h = 0; h < hidden_; ++h) z += w2[c * hidden_ + h] * act_q[h];
      logits[c] = z;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double norm = 0.0;
    for (double v : logits) norm += std::exp(v - peak);
    const std::uint32_t target = data.labels[s];
    loss += (std::log(norm) - (logits[target] - peak)) * scale;
    if (!g_w1) continue;

    std::fill(d_act.begin(), d_act.end(), 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      const double p = std::exp(logits[c] - peak) / norm;
      const double d = (p - (c == target ? 1.0 : 0.0)) * scale;
      g_b2[c] += d;
      for (std::size_t h = 0; h < hidden_; ++h) {
        g_w2[c * hidden_ + h] += d * act_q[h];
        d_act[h] += d * w2[c * hidden_ + h];
      }
    }
    // Straight-through on the activation quantizer: d act_q / d act = I.
    for (std::size_t h = 0; h < hidden_; ++h) {
      const double dz = d_act[h] * (1.0 - act[h] * act[h]);
      g_b1[h] += dz;
      for (std::size_t i = 0; i < inputs_; ++i) g_w1[h * inputs_ + i] += dz * x[i];
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Straight-through estimator pieces
// ---------------------------------------------------------------------------

SteForward ste_forward(const MatrixD& w_full, int k, int cycles) {
  SteForward out;
  out.w_hat = MatrixD(w_full.rows(), w_full.cols());
  out.codes.reserve(w_full.rows());
  for (std::size_t r = 0; r < w_full.rows(); ++r) {
    auto code = alternating_quantize(w_full.row(r), k, cycles);
    const auto approx = code.reconstruct();
    std::copy(approx.begin(), approx.end(), out.w_hat.row(r).begin());
    out.codes.push_back(std::move(code));
  }
  return out;
}

std::vector<double> ste_backward(std::span<const double> grad_w_hat) { return {grad_w_hat.begin(), grad_w_hat.end()}; }

void clip_weights(std::span<double> w, double limit) noexcept {
  for (auto& v : w) v = std::clamp(v, -limit, limit);
}

void clip_gradients(std::span<double> grad, double limit, bool global_norm) noexcept {
  if (!global_norm) {
    for (auto& g : grad) g = std::clamp(g, -limit, limit);
    return;
  }
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > limit) {
    const double s = limit / norm;
    for (auto& g : grad) g *= s;
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (weight_bits < 0 || weight_bits > kMaxCodebookBits) throw std::invalid_argument("weight bits outside [0, 16]");
  if (activation_bits < 0 || activation_bits > kMaxCodebookBits) {
    throw std::invalid_argument("activation bits outside [0, 16]");
  }
  if (cycles < 0) throw std::invalid_argument("cycle count must be >= 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(lr_decay > 1.0)) throw std::invalid_argument("learning-rate decay factor must be > 1");
  if (!(grad_clip > 0.0) || !(weight_clip > 0.0)) throw std::invalid_argument("clip ranges must be positive");
  if (max_epochs < 0 || hidden == 0 || batch_size == 0) throw std::invalid_argument("invalid epoch/hidden/batch sizes");
}

namespace {

Dataset make_task(const TaskSpec& task, std::uint64_t seed) {
  if (task.kind == TaskKind::kParity) return make_parity_task(task.n_bits, task.samples, seed);
  return make_copy_task(task.seq_len, task.vocab, task.samples, seed);
}

}  // namespace

TrainReport train_toy(const TrainConfig& config, const TaskSpec& task) {
  config.validate();
  const Dataset train = make_task(task, config.seed);
  const Dataset val = make_task(task, config.seed + 0x9e3779b97f4a7c15ULL);

  TanhMlp master(train.inputs.cols(), config.hidden, train.classes, config.seed);
  master.set_activation_quantization(config.activation_bits, config.cycles);

  // The network evaluated in the forward pass: masters replaced by their
  // quantized reconstruction.
  auto forward_net = [&]() {
    TanhMlp net = master;
    if (config.weight_bits > 0) {
      net.set_w1(ste_forward(master.w1(), config.weight_bits, config.cycles).w_hat);
      net.set_w2(ste_forward(master.w2(), config.weight_bits, config.cycles).w_hat);
    }
    return net;
  };

  std::vector<std::size_t> all_train(train.size());
  std::iota(all_train.begin(), all_train.end(), std::size_t{0});
  std::vector<std::size_t> all_val(val.size());
  std::iota(all_val.begin(), all_val.end(), std::size_t{0});

  TrainReport report;
  report.initial_train_loss = forward_net().loss_and_grad(train, all_train, {});
  report.best_val_loss = std::numeric_limits<double>::infinity();

  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order = all_train;
  std::vector<double> grad(master.params().size());
  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const TanhMlp net = forward_net();
      net.loss_and_grad(train, batch, grad);
      auto update = ste_backward(grad);
      clip_gradients(update, config.grad_clip, config.global_norm_clip);
      auto params = master.params();
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * update[i];
      clip_weights(master.w1_params(), config.weight_clip);
      clip_weights(master.w2_params(), config.weight_clip);
    }
    const TanhMlp net = forward_net();
    const double train_loss = net.loss_and_grad(train, all_train, {});
    const double val_loss = net.loss_and_grad(val, all_val, {});
    report.train_loss.push_back(train_loss);
    report.val_loss.push_back(val_loss);
    report.learning_rate.push_back(lr);
    report.epochs_run = epoch + 1;
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      report.diverged = true;
      break;
    }
    if (val_loss > report.best_val_loss) {
      lr /= config.lr_decay;
    } else {
      report.best_val_loss = val_loss;
    }
    if (lr < config.min_lr_fraction * config.learning_rate) break;
  }
  return report;
}

double finite_diff_check(Differentiable& model, const Dataset& data, std::span<const std::size_t> batch, double step,
                         std::size_t coordinates, std::uint64_t seed) {
  auto params = model.params();
  std::vector<double> analytic(params.size());
  model.loss_and_grad(data, batch, analytic);

  std::vector<std::size_t> picks(params.size());
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  if (picks.size() > coordinates) {
    std::mt19937_64 rng(seed);
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(coordinates);
  }

  double worst = 0.0;
  for (auto i : picks) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = model.loss_and_grad(data, batch, {});
    params[i] = saved - step;
    const double down = model.loss_and_grad(data, batch, {});
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace mbq
