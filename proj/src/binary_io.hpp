#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "capgen/error.hpp"

namespace capgen::io {

/// Little-endian cursor over a byte buffer; throws TruncatedPayload on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) throw Error(ErrorCode::kTruncatedPayload, "unexpected end of data");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename U>
  U read() {
    auto b = take(sizeof(U));
    U v{};
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }

  float read_f32() { return std::bit_cast<float>(read<std::uint32_t>()); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v)); }

}  // namespace capgen::io
