#include "mbq/bitplane.hpp"

#include <atomic>
#include <bit>
#include <stdexcept>
#include <string>

namespace mbq {

namespace {
std::atomic<bool> g_popcount_fault{false};
}  // namespace

PackedBitPlane::PackedBitPlane(std::size_t n, bool fill_positive)
    : n_(n), words_(words_for(n), fill_positive ? ~std::uint64_t{0} : 0) {
  if (fill_positive && !words_.empty()) words_.back() &= tail_mask(n_);
}

PackedBitPlane::PackedBitPlane(std::size_t n, std::vector<std::uint64_t> words)
    : n_(n), words_(std::move(words)) {
  if (words_.size() != words_for(n_)) {
    throw std::invalid_argument("bitplane of length " + std::to_string(n_) + " needs " +
                                std::to_string(words_for(n_)) + " words, got " +
                                std::to_string(words_.size()));
  }
  if (!words_.empty() && (words_.back() & ~tail_mask(n_)) != 0) {
    throw std::invalid_argument("bitplane padding bits must be zero");
  }
}

void PackedBitPlane::flip() noexcept {
  for (auto& w : words_) w = ~w;
  if (!words_.empty()) words_.back() &= tail_mask(n_);
}

std::vector<std::int8_t> PackedBitPlane::unpack() const {
  std::vector<std::int8_t> out(n_);
  for (std::size_t j = 0; j < n_; ++j) out[j] = static_cast<std::int8_t>(get(j));
  return out;
}

PackedBitPlane pack_signs(std::span<const std::int8_t> signs) {
  PackedBitPlane plane(signs.size(), false);
  for (std::size_t j = 0; j < signs.size(); ++j) {
    if (signs[j] == 1) {
      plane.set(j, true);
    } else if (signs[j] != -1) {
      throw std::invalid_argument("entry " + std::to_string(j) + " is not -1 or +1");
    }
  }
  return plane;
}

std::int64_t xnor_popcount_dot(std::span<const std::uint64_t> x, std::span<const std::uint64_t> y,
                               std::size_t n) noexcept {
  const std::size_t words = words_for(n);
  std::int64_t matches = 0;
  for (std::size_t i = 0; i < words; ++i) matches += std::popcount(~(x[i] ^ y[i]));
  // Zero padding agrees in both operands, so every pad bit counts as a match.
  const auto pad = static_cast<std::int64_t>(words * kWordBits - n);
  std::int64_t dot = 2 * (matches - pad) - static_cast<std::int64_t>(n);
  if (g_popcount_fault.load(std::memory_order_relaxed)) dot += 2;
  return dot;
}

std::int64_t xnor_popcount_dot(const PackedBitPlane& x, const PackedBitPlane& y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("bitplane length mismatch: " + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()));
  }
  return xnor_popcount_dot(x.words(), y.words(), x.size());
}

namespace testing {
void set_popcount_fault(bool enabled) noexcept { g_popcount_fault.store(enabled); }
bool popcount_fault_enabled() noexcept { return g_popcount_fault.load(); }
}  // namespace testing

}  // namespace mbq
