// mbq: multi-bit quantization toolkit command line.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbq/bench.hpp"
#include "mbq/bitplane.hpp"
#include "mbq/model_io.hpp"
#include "mbq/rnn.hpp"
#include "mbq/ste.hpp"

namespace {

enum class Format { kTsv, kJson };

Format parse_format(const std::string& s) { return s == "json" ? Format::kJson : Format::kTsv; }

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-bit quantization toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string format = "tsv";
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
    cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"tsv", "json"}))->capture_default_str();
  };

  // compare
  auto* compare = app.add_subcommand("compare", "Relative MSE of the quantization methods");
  std::vector<int> cmp_bits{2, 3, 4};
  std::size_t cmp_trials = 1, cmp_n = 100000;
  int cycles = mbq::kDefaultCycles;
  std::string cmp_weights;
  compare->add_option("--bits", cmp_bits, "Bit widths")->capture_default_str();
  compare->add_option("--trials", cmp_trials, "Gaussian vectors per cell")->capture_default_str();
  compare->add_option("--n", cmp_n, "Gaussian vector length")->capture_default_str();
  compare->add_option("--cycles", cycles, "Alternating cycles T")->capture_default_str();
  compare->add_option("--weights", cmp_weights, "MBQW file; each tensor is quantized row by row");
  add_common(compare);

  // bench-gemv
  auto* bench = app.add_subcommand("bench-gemv", "Time dense vs packed matrix-vector products");
  mbq::GemvBenchConfig bcfg;
  unsigned threads = 1;
  bench->add_option("--m", bcfg.m, "Rows")->capture_default_str();
  bench->add_option("--n", bcfg.n, "Columns")->capture_default_str();
  bench->add_option("--bits", bcfg.weight_bits, "Weight bits")->check(CLI::Range(1, 8))->capture_default_str();
  bench->add_option("--abits", bcfg.activation_bits, "Activation bits")->check(CLI::Range(1, 8))->capture_default_str();
  bench->add_option("--cycles", bcfg.cycles, "Alternating cycles T")->capture_default_str();
  bench->add_option("--repeats", bcfg.repeats, "Timed repeats")->check(CLI::Range(30, 1000000))->capture_default_str();
  bench->add_option("--warmup", bcfg.warmup, "Untimed warm-up runs")->capture_default_str();
  bench->add_option("--threads", threads, "Must be 1")->check(CLI::Range(1, 1))->capture_default_str();
  add_common(bench);

  // quantize
  auto* quant = app.add_subcommand("quantize", "Quantize an MBQW file row-wise into MBQQ");
  std::string in_path, out_path, method = "alternating";
  int bits = 2;
  quant->add_option("input", in_path, "Input MBQW file")->required();
  quant->add_option("output", out_path, "Output MBQQ file")->required();
  quant->add_option("--bits", bits, "Weight bits")->check(CLI::Range(1, 16))->capture_default_str();
  quant->add_option("--cycles", cycles, "Alternating cycles T")->capture_default_str();
  quant->add_option("--method", method, "Quantizer")
      ->check(CLI::IsMember({"uniform", "balanced", "greedy", "refined", "alternating", "ternary"}))
      ->capture_default_str();
  quant->add_option("--threads", threads, "Worker threads")->capture_default_str();
  add_common(quant);

  // eval-ppw
  auto* eval = app.add_subcommand("eval-ppw", "Perplexity of an MBQW or MBQQ language model");
  std::string model_path, tokens_path;
  int abits = 2;
  eval->add_option("model", model_path, "Model file")->required();
  eval->add_option("tokens", tokens_path, "MBQT or whitespace-separated id file")->required();
  eval->add_option("--abits", abits, "Activation bits for quantized models")->check(CLI::Range(1, 8))->capture_default_str();
  eval->add_option("--cycles", cycles, "Alternating cycles T")->capture_default_str();
  add_common(eval);

  // selfcheck
  auto* check = app.add_subcommand("selfcheck", "Run the oracle suites");
  std::string level = "quick";
  bool inject = false;
  check->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}))->capture_default_str();
  check->add_flag("--inject-popcount-fault", inject, "Corrupt every popcount dot (fault-injection test)");
  add_common(check);

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Quantization-aware training on a synthetic task");
  mbq::TrainConfig tcfg;
  mbq::TaskSpec task;
  std::string task_name = "parity";
  train->add_option("--task", task_name, "parity or copy")->check(CLI::IsMember({"parity", "copy"}))->capture_default_str();
  train->add_option("--bits", tcfg.weight_bits, "Weight bits (0 = full precision)")->capture_default_str();
  train->add_option("--abits", tcfg.activation_bits, "Activation bits (0 = full precision)")->capture_default_str();
  train->add_option("--cycles", tcfg.cycles, "Alternating cycles T")->capture_default_str();
  train->add_option("--lr", tcfg.learning_rate, "Initial learning rate")->capture_default_str();
  train->add_option("--epochs", tcfg.max_epochs, "Maximum epochs")->capture_default_str();
  train->add_option("--hidden", tcfg.hidden, "Hidden units")->capture_default_str();
  train->add_option("--batch", tcfg.batch_size, "Minibatch size")->capture_default_str();
  train->add_flag("--global-norm", tcfg.global_norm_clip, "Clip the gradient's global norm instead of entries");
  train->add_option("--n-bits", task.n_bits, "Parity input bits")->capture_default_str();
  train->add_option("--seq-len", task.seq_len, "Copy sequence length")->capture_default_str();
  train->add_option("--vocab", task.vocab, "Copy vocabulary")->capture_default_str();
  train->add_option("--samples", task.samples, "Training samples")->capture_default_str();
  add_common(train);

  // gen-model
  auto* gen_model = app.add_subcommand("gen-model", "Write a random or uniform LSTM/GRU model (MBQW)");
  std::string cell = "lstm";
  std::size_t vocab = 64, dim = 32, hidden = 32;
  double stddev = 0.3;
  bool uniform = false;
  gen_model->add_option("output", out_path, "Output MBQW file")->required();
  gen_model->add_option("--cell", cell, "lstm or gru")->check(CLI::IsMember({"lstm", "gru"}))->capture_default_str();
  gen_model->add_option("--vocab", vocab, "Vocabulary size")->capture_default_str();
  gen_model->add_option("--dim", dim, "Embedding size")->capture_default_str();
  gen_model->add_option("--hidden", hidden, "Hidden size")->capture_default_str();
  gen_model->add_option("--stddev", stddev, "Weight standard deviation")->capture_default_str();
  gen_model->add_flag("--uniform", uniform, "Zero softmax layer so every prediction is uniform");
  add_common(gen_model);

  // gen-tokens
  auto* gen_tokens = app.add_subcommand("gen-tokens", "Write a random token stream (MBQT)");
  std::size_t count = 1000;
  gen_tokens->add_option("output", out_path, "Output MBQT file")->required();
  gen_tokens->add_option("--vocab", vocab, "Vocabulary size")->capture_default_str();
  gen_tokens->add_option("--count", count, "Number of tokens")->capture_default_str();
  add_common(gen_tokens);

  CLI11_PARSE(app, argc, argv);
  const Format fmt = parse_format(format);

  try {
    if (compare->parsed()) {
      mbq::CompareConfig cfg;
      cfg.bits = cmp_bits;
      cfg.trials = cmp_trials;
      cfg.n = cmp_n;
      cfg.seed = seed;
      cfg.cycles = cycles;
      if (!cmp_weights.empty()) cfg.weights = cmp_weights;
      const auto report = mbq::compare_methods(cfg);
      std::cout << (fmt == Format::kJson ? mbq::to_json(report) : mbq::to_tsv(report));
    } else if (bench->parsed()) {
      bcfg.seed = seed;
      const auto report = mbq::bench_gemv(bcfg);
      std::cout << (fmt == Format::kJson ? mbq::to_json(report) : mbq::to_tsv(report));
    } else if (quant->parsed()) {
      const auto summary = mbq::quantize_file(in_path, out_path, bits, cycles, mbq::parse_method(method), threads);
      if (fmt == Format::kJson) {
        nlohmann::ordered_json j{{"version", mbq::kReportVersion}, {"command", "quantize"}, {"seed", seed},
                                 {"bits", bits}, {"method", method}, {"tensors", nlohmann::ordered_json::array()}};
        for (const auto& s : summary)
          j["tensors"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"rel_mse", s.relative_mse}});
        std::cout << j.dump(2) << '\n';
      } else {
        std::cout << "tensor\trows\tcols\trel_mse\n";
        for (const auto& s : summary)
          std::cout << s.name << '\t' << s.rows << '\t' << s.cols << '\t' << shortest(s.relative_mse) << '\n';
      }
    } else if (eval->parsed()) {
      const auto report = mbq::eval_ppw_file(model_path, tokens_path, abits, cycles);
      if (fmt == Format::kJson) {
        std::cout << mbq::to_json(report, seed);
      } else {
        std::cout << "# seed=" << seed << " version=" << mbq::kReportVersion << "\n"
                  << "token_count\tmean_nll\tppw\n"
                  << report.token_count << '\t' << shortest(report.mean_nll) << '\t' << shortest(report.ppw) << '\n';
      }
    } else if (check->parsed()) {
      if (inject) mbq::testing::set_popcount_fault(true);
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = mbq::selfcheck(level == "full" ? 10 : 1, seed, &std::cout);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      bool ok = true;
      for (const auto& r : results) ok = ok && r.passed;
      std::cout << (ok ? "selfcheck passed" : "selfcheck FAILED") << " in " << secs << " s\n";
      return ok ? 0 : 1;
    } else if (train->parsed()) {
      tcfg.seed = seed;
      task.kind = task_name == "copy" ? mbq::TaskKind::kCopy : mbq::TaskKind::kParity;
      const auto report = mbq::train_toy(tcfg, task);
      if (fmt == Format::kJson) {
        std::cout << mbq::to_json(report, tcfg, task);
      } else {
        std::cout << "# " << task.describe() << " seed=" << seed << " initial_loss=" << shortest(report.initial_train_loss)
                  << "\nepoch\tlr\ttrain_loss\tval_loss\n";
        for (std::size_t e = 0; e < report.train_loss.size(); ++e)
          std::cout << e + 1 << '\t' << shortest(report.learning_rate[e]) << '\t' << shortest(report.train_loss[e])
                    << '\t' << shortest(report.val_loss[e]) << '\n';
      }
      return report.diverged ? 1 : 0;
    } else if (gen_model->parsed()) {
      const auto kind = cell == "gru" ? mbq::CellType::kGru : mbq::CellType::kLstm;
      const auto w = uniform ? mbq::RnnWeights::zeros(kind, vocab, dim, hidden)
                             : mbq::RnnWeights::random(kind, vocab, dim, hidden, stddev, seed);
      mbq::save_weights(out_path, mbq::rnn_to_container(w));
    } else if (gen_tokens->parsed()) {
      if (vocab == 0) throw std::invalid_argument("vocabulary must be nonempty");
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(vocab - 1));
      std::vector<std::uint32_t> ids(count);
      for (auto& id : ids) id = pick(rng);
      mbq::save_tokens(out_path, ids);
    }
  } catch (const mbq::FormatError& e) {
    std::cerr << "mbq: " << e.what() << " [" << mbq::errc_name(e.code()) << "]\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mbq: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
