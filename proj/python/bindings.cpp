#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mbq/bench.hpp"
#include "mbq/bitplane.hpp"
#include "mbq/linalg.hpp"
#include "mbq/model_io.hpp"
#include "mbq/quantizer.hpp"
#include "mbq/rnn.hpp"
#include "mbq/ste.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

mbq::MatrixD to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return mbq::MatrixD(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> matrix_array(const mbq::MatrixD& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

// k x n array of +-1.
py::array_t<std::int8_t> sign_planes(const mbq::MultiBitCode& c) {
  py::array_t<std::int8_t> out({static_cast<py::ssize_t>(c.bits()), static_cast<py::ssize_t>(c.size())});
  auto view = out.mutable_unchecked<2>();
  for (int i = 0; i < c.bits(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) view(i, static_cast<py::ssize_t>(j)) = static_cast<std::int8_t>(c.planes[i].get(j));
  return out;
}

mbq::MultiBitCode code_from(const std::vector<double>& alphas, const py::array_t<std::int8_t>& planes) {
  if (planes.ndim() != 2 || static_cast<std::size_t>(planes.shape(0)) != alphas.size())
    throw std::invalid_argument("planes must be a k x n array matching the coefficients");
  mbq::MultiBitCode c;
  c.alphas = alphas;
  auto view = planes.unchecked<2>();
  for (py::ssize_t i = 0; i < planes.shape(0); ++i) {
    std::vector<std::int8_t> s(static_cast<std::size_t>(planes.shape(1)));
    for (py::ssize_t j = 0; j < planes.shape(1); ++j) s[static_cast<std::size_t>(j)] = view(i, j);
    c.planes.push_back(mbq::pack_signs(s));
  }
  return c;
}

py::dict compare_row(const mbq::CompareRow& r) {
  py::dict d;
  d["source"] = r.source;
  d["method"] = mbq::method_name(r.method);
  d["bits"] = r.bits;
  d["mean_rel_mse"] = r.mean;
  d["std_rel_mse"] = r.stddev;
  d["trials"] = r.trials;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mbq, m) {
  m.doc() = "Multi-bit quantization kernels";

  py::class_<mbq::MultiBitCode>(m, "MultiBitCode")
      .def(py::init(&code_from), py::arg("alphas"), py::arg("planes"))
      .def_readonly("alphas", &mbq::MultiBitCode::alphas)
      .def_property_readonly("planes", &sign_planes)
      .def_property_readonly("bits", &mbq::MultiBitCode::bits)
      .def("__len__", &mbq::MultiBitCode::size)
      .def("reconstruct", [](const mbq::MultiBitCode& c) { return to_array(c.reconstruct()); })
      .def("is_canonical", &mbq::MultiBitCode::is_canonical);

  py::class_<mbq::QuantizedMatrix>(m, "QuantizedMatrix")
      .def_property_readonly("rows", &mbq::QuantizedMatrix::rows)
      .def_property_readonly("cols", &mbq::QuantizedMatrix::cols)
      .def_property_readonly("bits", &mbq::QuantizedMatrix::bits)
      .def_property_readonly("alphas",
                             [](const mbq::QuantizedMatrix& q) {
                               py::array_t<float> out({static_cast<py::ssize_t>(q.rows()),
                                                       static_cast<py::ssize_t>(q.bits())});
                               std::copy(q.alphas().begin(), q.alphas().end(), out.mutable_data());
                               return out;
                             })
      .def("row_code", &mbq::QuantizedMatrix::row_code, py::arg("row"))
      .def("reconstruct", [](const mbq::QuantizedMatrix& q) { return matrix_array(q.reconstruct()); });

  m.def("uniform_quantize",
        [](const Array& x, int k, bool unit_scale) {
          const auto r = mbq::uniform_quantize(to_vector(x), k, unit_scale);
          return py::make_tuple(to_array(r.values), r.scale);
        },
        py::arg("x"), py::arg("k"), py::arg("unit_scale") = false);
  m.def("balanced_quantize", [](const Array& x, int k) { return to_array(mbq::balanced_quantize(to_vector(x), k)); },
        py::arg("x"), py::arg("k"));
  m.def("greedy_quantize", [](const Array& w, int k) { return mbq::greedy_quantize(to_vector(w), k); }, py::arg("w"),
        py::arg("k"));
  m.def("refined_greedy_quantize", [](const Array& w, int k) { return mbq::refined_greedy_quantize(to_vector(w), k); },
        py::arg("w"), py::arg("k"));
  m.def("alternating_quantize",
        [](const Array& w, int k, int cycles) { return mbq::alternating_quantize(to_vector(w), k, cycles); },
        py::arg("w"), py::arg("k"), py::arg("cycles") = mbq::kDefaultCycles);
  m.def("alternating_residuals",
        [](const Array& w, int k, int cycles) {
          return mbq::alternating_quantize_traced(to_vector(w), k, cycles).residuals;
        },
        py::arg("w"), py::arg("k"), py::arg("cycles") = mbq::kDefaultCycles);
  m.def("ternary_quantize",
        [](const Array& w) {
          const auto t = mbq::ternary_quantize(to_vector(w));
          return py::make_tuple(t.alpha, std::vector<int>(t.trits.begin(), t.trits.end()));
        },
        py::arg("w"));
  m.def("refit_coefficients",
        [](const py::array_t<std::int8_t>& planes, const Array& w) {
          const auto c = code_from(std::vector<double>(static_cast<std::size_t>(planes.shape(0)), 0.0), planes);
          return mbq::refit_coefficients(c.planes, to_vector(w)).alphas;
        },
        py::arg("planes"), py::arg("w"));
  m.def("build_codebook",
        [](const std::vector<double>& alphas) {
          const auto b = mbq::build_codebook(alphas);
          return py::make_tuple(b.values, b.patterns);
        },
        py::arg("alphas"));
  m.def("bst_assign",
        [](double w, const std::vector<double>& alphas) { return mbq::bst_assign(w, mbq::build_codebook(alphas)); },
        py::arg("w"), py::arg("alphas"));
  m.def("relative_mse", [](const Array& w, const Array& w_hat) { return mbq::relative_mse(to_vector(w), to_vector(w_hat)); },
        py::arg("w"), py::arg("w_hat"));

  m.def("quantize_matrix",
        [](const Array& w, int k, const std::string& method, int cycles, unsigned threads) {
          return mbq::quantize_matrix_rowwise(to_matrix(w), k, mbq::parse_method(method), cycles, threads);
        },
        py::arg("w"), py::arg("k"), py::arg("method") = "alternating", py::arg("cycles") = mbq::kDefaultCycles,
        py::arg("threads") = 1);
  m.def("quantized_gemv",
        [](const mbq::QuantizedMatrix& w, const mbq::MultiBitCode& a) { return to_array(mbq::quantized_gemv(w, a)); },
        py::arg("w"), py::arg("a"));
  m.def("quantized_gemv_concat",
        [](const mbq::QuantizedMatrix& w, const mbq::MultiBitCode& a, unsigned threads) {
          return to_array(mbq::quantized_gemv_concat(w, a, threads));
        },
        py::arg("w"), py::arg("a"), py::arg("threads") = 1);
  m.def("xnor_popcount_dot",
        [](const std::vector<std::int8_t>& a, const std::vector<std::int8_t>& b) {
          return mbq::xnor_popcount_dot(mbq::pack_signs(a), mbq::pack_signs(b));
        },
        py::arg("a"), py::arg("b"));
  m.def("theoretical_speedup", &mbq::theoretical_speedup, py::arg("m"), py::arg("n"), py::arg("k_w"), py::arg("k_h"));
  m.def("quantization_cost",
        [](std::uint64_t n, std::uint64_t k, std::uint64_t cycles) {
          const auto c = mbq::quantization_cost(n, k, cycles);
          return py::make_tuple(c.binary_ops, c.nonbinary_ops);
        },
        py::arg("n"), py::arg("k"), py::arg("cycles"));

  m.def("compare",
        [](std::vector<int> bits, std::size_t n, std::size_t trials, std::uint64_t seed, int cycles) {
          mbq::CompareConfig cfg;
          cfg.bits = std::move(bits);
          cfg.n = n;
          cfg.trials = trials;
          cfg.seed = seed;
          cfg.cycles = cycles;
          py::list rows;
          for (const auto& r : mbq::compare_methods(cfg).rows) rows.append(compare_row(r));
          return rows;
        },
        py::arg("bits") = std::vector<int>{2, 3, 4}, py::arg("n") = 100000, py::arg("trials") = 1, py::arg("seed") = 1,
        py::arg("cycles") = mbq::kDefaultCycles);
  m.def("quantize_file",
        [](const std::filesystem::path& in, const std::filesystem::path& out, int k, int cycles, const std::string& method) {
          py::list rows;
          for (const auto& s : mbq::quantize_file(in, out, k, cycles, mbq::parse_method(method))) {
            py::dict d;
            d["name"] = s.name;
            d["rows"] = s.rows;
            d["cols"] = s.cols;
            d["rel_mse"] = s.relative_mse;
            rows.append(d);
          }
          return rows;
        },
        py::arg("input"), py::arg("output"), py::arg("k"), py::arg("cycles") = mbq::kDefaultCycles,
        py::arg("method") = "alternating");
  m.def("eval_ppw_file",
        [](const std::filesystem::path& model, const std::filesystem::path& tokens, int abits, int cycles) {
          const auto r = mbq::eval_ppw_file(model, tokens, abits, cycles);
          py::dict d;
          d["token_count"] = r.token_count;
          d["mean_nll"] = r.mean_nll;
          d["ppw"] = r.ppw;
          return d;
        },
        py::arg("model"), py::arg("tokens"), py::arg("abits") = 2, py::arg("cycles") = mbq::kDefaultCycles);
  m.def("write_random_model",
        [](const std::filesystem::path& out, const std::string& cell, std::size_t vocab, std::size_t dim,
           std::size_t hidden, double stddev, std::uint64_t seed, bool uniform) {
          const auto kind = cell == "gru" ? mbq::CellType::kGru : mbq::CellType::kLstm;
          const auto w = uniform ? mbq::RnnWeights::zeros(kind, vocab, dim, hidden)
                                 : mbq::RnnWeights::random(kind, vocab, dim, hidden, stddev, seed);
          mbq::save_weights(out, mbq::rnn_to_container(w));
        },
        py::arg("output"), py::arg("cell") = "lstm", py::arg("vocab") = 64, py::arg("dim") = 32, py::arg("hidden") = 32,
        py::arg("stddev") = 0.3, py::arg("seed") = 1, py::arg("uniform") = false);
  m.def("write_tokens", [](const std::filesystem::path& out, const std::vector<std::uint32_t>& ids) { mbq::save_tokens(out, ids); },
        py::arg("output"), py::arg("ids"));
  m.def("read_tokens", [](const std::filesystem::path& path) { return mbq::load_tokens(path); }, py::arg("path"));
  m.def("selfcheck",
        [](const std::string& level, std::uint64_t seed) {
          py::list out;
          for (const auto& r : mbq::selfcheck(level == "full" ? 10 : 1, seed)) {
            py::dict d;
            d["name"] = r.name;
            d["passed"] = r.passed;
            d["trials"] = r.trials;
            d["detail"] = r.detail;
            out.append(d);
          }
          return out;
        },
        py::arg("level") = "quick", py::arg("seed") = 1);
  m.def("train_toy",
        [](const std::string& task, int bits, int abits, double lr, int epochs, std::uint64_t seed) {
          mbq::TrainConfig cfg;
          cfg.weight_bits = bits;
          cfg.activation_bits = abits;
          cfg.learning_rate = lr;
          cfg.max_epochs = epochs;
          cfg.seed = seed;
          mbq::TaskSpec spec;
          spec.kind = task == "copy" ? mbq::TaskKind::kCopy : mbq::TaskKind::kParity;
          const auto r = mbq::train_toy(cfg, spec);
          py::dict d;
          d["initial_train_loss"] = r.initial_train_loss;
          d["train_loss"] = r.train_loss;
          d["val_loss"] = r.val_loss;
          d["learning_rate"] = r.learning_rate;
          d["epochs_run"] = r.epochs_run;
          d["diverged"] = r.diverged;
          return d;
        },
        py::arg("task") = "parity", py::arg("bits") = 0, py::arg("abits") = 0, py::arg("lr") = 1.0,
        py::arg("epochs") = 50, py::arg("seed") = 1);

  py::register_exception<mbq::FormatError>(m, "FormatError", PyExc_ValueError);
}
