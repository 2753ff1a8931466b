#pragma once

// Packed {-1,+1} vectors and the XNOR-popcount dot product.
//
// Layout: bit j of the stream lives in word j / 64 at bit position j % 64
// (LSB first). A set bit encodes +1, a clear bit encodes -1. Bits past the
// logical length are always zero.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mbq {

inline constexpr std::size_t kWordBits = 64;

constexpr std::size_t words_for(std::size_t n) noexcept { return (n + kWordBits - 1) / kWordBits; }

class PackedBitPlane {
 public:
  PackedBitPlane() = default;
  /// All entries +1 unless `fill_positive` is false.
  explicit PackedBitPlane(std::size_t n, bool fill_positive = true);
  /// Adopts raw words; throws if the word count is wrong or padding bits are set.
  PackedBitPlane(std::size_t n, std::vector<std::uint64_t> words);

  std::size_t size() const noexcept { return n_; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  int get(std::size_t j) const noexcept { return (words_[j / kWordBits] >> (j % kWordBits)) & 1u ? 1 : -1; }
  void set(std::size_t j, bool positive) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (j % kWordBits);
    if (positive) {
      words_[j / kWordBits] |= bit;
    } else {
      words_[j / kWordBits] &= ~bit;
    }
  }
  /// Negates every entry; padding stays zero.
  void flip() noexcept;

  std::vector<std::int8_t> unpack() const;

  friend bool operator==(const PackedBitPlane&, const PackedBitPlane&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Throws std::invalid_argument when an entry is not -1 or +1.
PackedBitPlane pack_signs(std::span<const std::int8_t> signs);

/// Mask with the valid (non-padding) bits of the last word set.
constexpr std::uint64_t tail_mask(std::size_t n) noexcept {
  const std::size_t r = n % kWordBits;
  return r == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << r) - 1;
}

/// Word-level core: sum_j x_j * y_j over +-1 semantics for `n` logical bits.
/// Both operands must have zero padding.
std::int64_t xnor_popcount_dot(std::span<const std::uint64_t> x, std::span<const std::uint64_t> y,
                               std::size_t n) noexcept;

/// Throws std::invalid_argument on a length mismatch.
std::int64_t xnor_popcount_dot(const PackedBitPlane& x, const PackedBitPlane& y);

namespace testing {
/// Fault-injection hook for self-check runs: when enabled, every XNOR-popcount
/// dot is off by two. Never enable outside of fault-injection tests.
void set_popcount_fault(bool enabled) noexcept;
bool popcount_fault_enabled() noexcept;
}  // namespace testing

}  // namespace mbq
