#include "mbq/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

namespace mbq {

namespace {

constexpr std::size_t kMaxRank = 8;
constexpr std::uint32_t kMaxNameLength = 4096;

class Writer {
 public:
  void magic(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_header(const char (&tag)[5]) {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), tag, 4) != 0) {
      throw FormatError(IoErrc::kBadMagic, std::string("bad magic: expected ") + tag);
    }
    pos_ = 4;
    const std::uint32_t version = u32();
    if (version != kFormatVersion) {
      throw FormatError(IoErrc::kVersionMismatch,
                        "unsupported format version " + std::to_string(version));
    }
  }
  std::uint8_t u8() {
    need(1, "u8");
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t len = u32();
    if (len > kMaxNameLength) throw FormatError(IoErrc::kSizeMismatch, "tensor name too long");
    need(len, "name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  /// Throws before any read that would pass the end of the buffer.
  void need(std::uint64_t count, const char* what) const {
    if (count > bytes_.size() - pos_) {
      throw FormatError(IoErrc::kTruncated, std::string("truncated payload while reading ") + what);
    }
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw FormatError(IoErrc::kSizeMismatch, "declared size overflows");
  }
  return a * b;
}

void write_tensor(Writer& w, const Tensor& t) {
  std::uint64_t count = 1;
  for (auto d : t.shape) count *= d;
  if (count != t.data.size()) {
    throw FormatError(IoErrc::kSizeMismatch, "tensor '" + t.name + "' shape does not match its data");
  }
  w.str(t.name);
  w.u32(static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) w.u32(d);
  for (float v : t.data) w.f32(v);
}

Tensor read_tensor(Reader& r) {
  Tensor t;
  t.name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank > kMaxRank) throw FormatError(IoErrc::kSizeMismatch, "tensor '" + t.name + "' rank too large");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.shape.push_back(r.u32());
    count = checked_mul(count, t.shape.back());
  }
  r.need(checked_mul(count, 4), "tensor payload");
  t.data.resize(count);
  for (auto& v : t.data) v = r.f32();
  return t;
}

void write_dense_section(Writer& w, const std::vector<Tensor>& tensors) {
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_tensor(w, t);
}

std::vector<Tensor> read_dense_section(Reader& r, std::set<std::string>& names) {
  const std::uint32_t count = r.u32();
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t = read_tensor(r);
    if (!names.insert(t.name).second) throw FormatError(IoErrc::kDuplicateName, "duplicate tensor name '" + t.name + "'");
    out.push_back(std::move(t));
  }
  return out;
}

void expect_end(const Reader& r) {
  if (!r.done()) throw FormatError(IoErrc::kSizeMismatch, "trailing bytes after declared payload");
}

}  // namespace

const char* errc_name(IoErrc code) noexcept {
  switch (code) {
    case IoErrc::kFileNotFound: return "file not found";
    case IoErrc::kIo: return "i/o error";
    case IoErrc::kBadMagic: return "bad magic";
    case IoErrc::kVersionMismatch: return "version mismatch";
    case IoErrc::kTruncated: return "truncated payload";
    case IoErrc::kDuplicateName: return "duplicate tensor name";
    case IoErrc::kSizeMismatch: return "size mismatch";
    case IoErrc::kNonCanonical: return "non-canonical model";
    case IoErrc::kCorruptBitplane: return "corrupt bitplane";
    case IoErrc::kIdOverflow: return "id overflow";
    case IoErrc::kParse: return "parse error";
  }
  return "unknown";
}

void WeightContainer::add(Tensor tensor) {
  if (find(tensor.name)) throw FormatError(IoErrc::kDuplicateName, "duplicate tensor name '" + tensor.name + "'");
  tensors.push_back(std::move(tensor));
}

const Tensor* WeightContainer::find(const std::string& name) const noexcept {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const QuantizedMatrix* QuantizedContainer::find_quantized(const std::string& name) const noexcept {
  for (const auto& q : quantized) {
    if (q.name == name) return &q.matrix;
  }
  return nullptr;
}

const Tensor* QuantizedContainer::find_dense(const std::string& name) const noexcept {
  for (const auto& t : dense) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Encoders / decoders
// ---------------------------------------------------------------------------

Bytes encode_weights(const WeightContainer& container) {
  Writer w;
  w.magic("MBQW");
  w.u32(kFormatVersion);
  write_dense_section(w, container.tensors);
  return w.take();
}

WeightContainer decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_header("MBQW");
  std::set<std::string> names;
  WeightContainer c;
  c.tensors = read_dense_section(r, names);
  expect_end(r);
  return c;
}

Bytes encode_quantized(const QuantizedContainer& container) {
  Writer w;
  w.magic("MBQQ");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(container.quantized.size()));
  for (const auto& [name, m] : container.quantized) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(m.bits()));
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (float a : m.alphas()) w.f32(a);
    for (std::uint64_t word : m.plane_words()) w.u64(word);
  }
  write_dense_section(w, container.dense);
  return w.take();
}

QuantizedContainer decode_quantized(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_header("MBQQ");
  std::set<std::string> names;
  QuantizedContainer c;
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = r.str();
    if (!names.insert(name).second) throw FormatError(IoErrc::kDuplicateName, "duplicate tensor name '" + name + "'");
    const std::uint8_t k = r.u8();
    const std::uint32_t m = r.u32();
    const std::uint32_t n = r.u32();
    if (k == 0) throw FormatError(IoErrc::kSizeMismatch, "tensor '" + name + "' has zero bits");
    const std::uint64_t coefs = checked_mul(m, k);
    const std::uint64_t words = checked_mul(checked_mul(k, m), words_for(n));
    r.need(checked_mul(coefs, 4), "row coefficients");
    std::vector<float> alphas(coefs);
    for (auto& a : alphas) a = r.f32();
    r.need(checked_mul(words, 8), "bitplanes");
    std::vector<std::uint64_t> planes(words);
    for (auto& word : planes) word = r.u64();

    for (std::uint32_t row = 0; row < m; ++row) {
      for (std::uint32_t i = 0; i < k; ++i) {
        const float a = alphas[static_cast<std::size_t>(row) * k + i];
        if (!(a >= 0.0f) || !std::isfinite(a) || (i > 0 && a > alphas[static_cast<std::size_t>(row) * k + i - 1])) {
          throw FormatError(IoErrc::kNonCanonical, "non-canonical model: tensor '" + name + "' row " + std::to_string(row));
        }
      }
    }
    const std::uint64_t pad = ~tail_mask(n);
    const std::size_t wpr = words_for(n);
    if (pad != 0 && wpr > 0) {
      for (std::size_t row = 0; row < static_cast<std::size_t>(k) * m; ++row) {
        if (planes[(row + 1) * wpr - 1] & pad) {
          throw FormatError(IoErrc::kCorruptBitplane, "corrupt bitplane: nonzero padding in tensor '" + name + "'");
        }
      }
    }
    c.quantized.push_back({std::move(name), QuantizedMatrix(m, n, k, std::move(alphas), std::move(planes))});
  }
  c.dense = read_dense_section(r, names);
  expect_end(r);
  return c;
}

Bytes encode_tokens(std::span<const std::uint32_t> ids) {
  Writer w;
  w.magic("MBQT");
  w.u32(kFormatVersion);
  w.u64(ids.size());
  for (auto id : ids) w.u32(id);
  return w.take();
}

std::vector<std::uint32_t> decode_tokens(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_header("MBQT");
  const std::uint64_t count = r.u64();
  r.need(checked_mul(count, 4), "token ids");
  std::vector<std::uint32_t> ids(count);
  for (auto& id : ids) id = r.u32();
  expect_end(r);
  return ids;
}

std::vector<std::uint32_t> parse_tokens_text(const std::string& text) {
  std::vector<std::uint32_t> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view token(text.data() + i, j - i);
    std::uint64_t value = 0;
    const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec == std::errc::result_out_of_range ||
        (ec == std::errc{} && value > std::numeric_limits<std::uint32_t>::max())) {
      throw FormatError(IoErrc::kIdOverflow, "token id '" + std::string(token) + "' exceeds 32 bits");
    }
    if (ec != std::errc{} || end != token.data() + token.size()) {
      throw FormatError(IoErrc::kParse, "invalid token id '" + std::string(token) + "'");
    }
    ids.push_back(static_cast<std::uint32_t>(value));
    i = j;
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

Bytes read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw FormatError(IoErrc::kFileNotFound, "file not found: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(IoErrc::kIo, "cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(IoErrc::kIo, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(IoErrc::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(IoErrc::kIo, "write failed: " + path.string());
}

void save_weights(const std::filesystem::path& path, const WeightContainer& c) { write_file(path, encode_weights(c)); }
WeightContainer load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }
void save_quantized(const std::filesystem::path& path, const QuantizedContainer& c) {
  write_file(path, encode_quantized(c));
}
QuantizedContainer load_quantized(const std::filesystem::path& path) { return decode_quantized(read_file(path)); }
void save_tokens(const std::filesystem::path& path, std::span<const std::uint32_t> ids) {
  write_file(path, encode_tokens(ids));
}

std::vector<std::uint32_t> load_tokens(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  if (detect_file_kind(bytes) == FileKind::kTokens) return decode_tokens(bytes);
  return parse_tokens_text(std::string(bytes.begin(), bytes.end()));
}

FileKind detect_file_kind(std::span<const std::uint8_t> bytes) noexcept {
  if (bytes.size() < 4) return FileKind::kUnknown;
  const std::string_view tag(reinterpret_cast<const char*>(bytes.data()), 4);
  if (tag == "MBQW") return FileKind::kWeights;
  if (tag == "MBQQ") return FileKind::kQuantized;
  if (tag == "MBQT") return FileKind::kTokens;
  return FileKind::kUnknown;
}

// ---------------------------------------------------------------------------
// Model bundles
// ---------------------------------------------------------------------------

Tensor matrix_tensor(const std::string& name, const MatrixF& m) {
  return {name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, m.storage()};
}

MatrixF tensor_matrix(const Tensor& t) {
  if (t.shape.size() != 2) throw FormatError(IoErrc::kSizeMismatch, "tensor '" + t.name + "' is not a matrix");
  return MatrixF(t.shape[0], t.shape[1], t.data);
}

namespace {

const Tensor& require_tensor(const Tensor* t, const std::string& name) {
  if (!t) throw FormatError(IoErrc::kSizeMismatch, "model is missing tensor '" + name + "'");
  return *t;
}

Tensor vector_tensor(const std::string& name, const std::vector<float>& v) {
  return {name, {static_cast<std::uint32_t>(v.size())}, v};
}

CellType infer_cell(std::size_t gate_rows, std::size_t hidden) {
  if (hidden > 0 && gate_rows == 4 * hidden) return CellType::kLstm;
  if (hidden > 0 && gate_rows == 3 * hidden) return CellType::kGru;
  throw FormatError(IoErrc::kSizeMismatch, "input weight rows are neither 4h (LSTM) nor 3h (GRU)");
}

}  // namespace

WeightContainer rnn_to_container(const RnnWeights& w) {
  WeightContainer c;
  c.add(matrix_tensor("embedding", w.embedding));
  c.add(matrix_tensor("w_input", w.w_input));
  c.add(matrix_tensor("w_hidden", w.w_hidden));
  c.add(matrix_tensor("w_softmax", w.w_softmax));
  c.add(vector_tensor("b_input", w.b_input));
  c.add(vector_tensor("b_hidden", w.b_hidden));
  c.add(vector_tensor("b_softmax", w.b_softmax));
  return c;
}

RnnWeights rnn_from_container(const WeightContainer& c) {
  RnnWeights w;
  w.embedding = tensor_matrix(require_tensor(c.find("embedding"), "embedding"));
  w.w_input = tensor_matrix(require_tensor(c.find("w_input"), "w_input"));
  w.w_hidden = tensor_matrix(require_tensor(c.find("w_hidden"), "w_hidden"));
  w.w_softmax = tensor_matrix(require_tensor(c.find("w_softmax"), "w_softmax"));
  w.b_input = require_tensor(c.find("b_input"), "b_input").data;
  w.b_hidden = require_tensor(c.find("b_hidden"), "b_hidden").data;
  w.b_softmax = require_tensor(c.find("b_softmax"), "b_softmax").data;
  w.cell = infer_cell(w.w_input.rows(), w.w_hidden.cols());
  w.validate();
  return w;
}

QuantizedContainer quantized_rnn_to_container(const QuantizedRnn& q) {
  QuantizedContainer c;
  c.quantized = {{"embedding", q.embedding}, {"w_input", q.w_input}, {"w_hidden", q.w_hidden}, {"w_softmax", q.w_softmax}};
  c.dense = {vector_tensor("b_input", q.b_input), vector_tensor("b_hidden", q.b_hidden),
             vector_tensor("b_softmax", q.b_softmax)};
  return c;
}

QuantizedRnn quantized_rnn_from_container(const QuantizedContainer& c, int activation_bits, int cycles) {
  auto need = [&](const char* name) -> const QuantizedMatrix& {
    const auto* m = c.find_quantized(name);
    if (!m) throw FormatError(IoErrc::kSizeMismatch, std::string("model is missing tensor '") + name + "'");
    return *m;
  };
  QuantizedRnn q;
  q.embedding = need("embedding");
  q.w_input = need("w_input");
  q.w_hidden = need("w_hidden");
  q.w_softmax = need("w_softmax");
  q.b_input = require_tensor(c.find_dense("b_input"), "b_input").data;
  q.b_hidden = require_tensor(c.find_dense("b_hidden"), "b_hidden").data;
  q.b_softmax = require_tensor(c.find_dense("b_softmax"), "b_softmax").data;
  q.cell = infer_cell(q.w_input.rows(), q.w_hidden.cols());
  q.weight_bits = q.w_input.bits();
  q.activation_bits = activation_bits;
  q.cycles = cycles;
  q.validate();
  return q;
}

}  // namespace mbq
