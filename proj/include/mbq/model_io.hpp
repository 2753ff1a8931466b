#pragma once

// Binary containers. All integers and floats are little-endian.
//
//   MBQW (full-precision weights)
//     "MBQW" u32 version=1 u32 tensor_count
//     per tensor: u32 name_len, name bytes, u32 rank, rank x u32 dims,
//                 prod(dims) x f32 (row-major)
//
//   MBQQ (quantized model)
//     "MBQQ" u32 version=1 u32 quantized_count
//     per quantized tensor: u32 name_len, name bytes, u8 k, u32 m, u32 n,
//                 m*k x f32 row coefficients (descending, nonnegative),
//                 k bitplanes of m rows x ceil(n/64) u64 words
//                 (LSB first, 1 = +1, padding bits zero)
//     u32 dense_count, dense tensors encoded as in MBQW
//
//   MBQT (token stream)
//     "MBQT" u32 version=1 u64 count, count x u32 ids

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbq/quantizer.hpp"
#include "mbq/rnn.hpp"

namespace mbq {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class IoErrc {
  kFileNotFound,
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kDuplicateName,
  kSizeMismatch,
  kNonCanonical,
  kCorruptBitplane,
  kIdOverflow,
  kParse,
};

const char* errc_name(IoErrc code) noexcept;

class FormatError : public std::runtime_error {
 public:
  FormatError(IoErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  IoErrc code() const noexcept { return code_; }

 private:
  IoErrc code_;
};

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct WeightContainer {
  std::vector<Tensor> tensors;

  /// Throws FormatError(kDuplicateName) if the name is taken.
  void add(Tensor tensor);
  const Tensor* find(const std::string& name) const noexcept;

  friend bool operator==(const WeightContainer&, const WeightContainer&) = default;
};

struct NamedQuantized {
  std::string name;
  QuantizedMatrix matrix;

  friend bool operator==(const NamedQuantized&, const NamedQuantized&) = default;
};

struct QuantizedContainer {
  std::vector<NamedQuantized> quantized;
  std::vector<Tensor> dense;

  const QuantizedMatrix* find_quantized(const std::string& name) const noexcept;
  const Tensor* find_dense(const std::string& name) const noexcept;

  friend bool operator==(const QuantizedContainer&, const QuantizedContainer&) = default;
};

using Bytes = std::vector<std::uint8_t>;

Bytes encode_weights(const WeightContainer& container);
WeightContainer decode_weights(std::span<const std::uint8_t> bytes);
Bytes encode_quantized(const QuantizedContainer& container);
QuantizedContainer decode_quantized(std::span<const std::uint8_t> bytes);
Bytes encode_tokens(std::span<const std::uint32_t> ids);
std::vector<std::uint32_t> decode_tokens(std::span<const std::uint8_t> bytes);
/// Whitespace-separated decimal ids.
std::vector<std::uint32_t> parse_tokens_text(const std::string& text);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_weights(const std::filesystem::path& path, const WeightContainer& container);
WeightContainer load_weights(const std::filesystem::path& path);
void save_quantized(const std::filesystem::path& path, const QuantizedContainer& container);
QuantizedContainer load_quantized(const std::filesystem::path& path);
void save_tokens(const std::filesystem::path& path, std::span<const std::uint32_t> ids);
/// Binary MBQT files and plain-text id lists are both accepted.
std::vector<std::uint32_t> load_tokens(const std::filesystem::path& path);

enum class FileKind { kWeights, kQuantized, kTokens, kUnknown };
FileKind detect_file_kind(std::span<const std::uint8_t> bytes) noexcept;

// Model bundles use the tensor names embedding, w_input, w_hidden, w_softmax,
// b_input, b_hidden, b_softmax. The cell type follows from w_input rows / h.
Tensor matrix_tensor(const std::string& name, const MatrixF& m);
MatrixF tensor_matrix(const Tensor& t);

WeightContainer rnn_to_container(const RnnWeights& w);
RnnWeights rnn_from_container(const WeightContainer& c);
QuantizedContainer quantized_rnn_to_container(const QuantizedRnn& q);
QuantizedRnn quantized_rnn_from_container(const QuantizedContainer& c, int activation_bits, int cycles);

}  // namespace mbq
