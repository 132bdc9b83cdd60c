#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wallet/error.hpp"

namespace wallet {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::size_t kDigestSize = 64;
using Digest = std::array<std::uint8_t, kDigestSize>;

inline constexpr std::size_t kNonceSize = 16;
using Nonce = std::array<std::uint8_t, kNonceSize>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

template <std::size_t N>
ByteView view(const std::array<std::uint8_t, N>& a) {
  return ByteView(a.data(), a.size());
}

std::string to_hex(ByteView bytes);
Bytes from_hex(std::string_view hex);

template <std::size_t N>
std::array<std::uint8_t, N> array_from_hex(std::string_view hex);

std::string to_base64(ByteView bytes);
Bytes from_base64(std::string_view text);

// Returns true when needle occurs as a contiguous run inside haystack.
bool contains(ByteView haystack, ByteView needle);

// Big-endian length-prefixed encoder used by every canonical format in the project.
class ByteWriter {
 public:
  ByteWriter& u8(std::uint8_t v);
  ByteWriter& u32(std::uint32_t v);
  ByteWriter& u64(std::uint64_t v);
  ByteWriter& raw(ByteView b);
  ByteWriter& raw(std::string_view s);
  // u32 big-endian length followed by the bytes.
  ByteWriter& prefixed(ByteView b);
  ByteWriter& prefixed(std::string_view s);

  template <std::size_t N>
  ByteWriter& raw(const std::array<std::uint8_t, N>& a) {
    return raw(view(a));
  }

  void reserve(std::size_t n) { out_.reserve(n); }
  std::size_t size() const { return out_.size(); }
  const Bytes& bytes() const { return out_; }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(ByteView in) : in_(in) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  ByteView raw(std::size_t n);
  ByteView prefixed();
  std::string prefixed_string();

  template <std::size_t N>
  std::array<std::uint8_t, N> fixed() {
    std::array<std::uint8_t, N> out{};
    auto b = raw(N);
    std::copy(b.begin(), b.end(), out.begin());
    return out;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }
  // Throws parse_error unless every byte was consumed.
  void expect_done() const;

 private:
  ByteView in_;
  std::size_t pos_ = 0;
};

template <std::size_t N>
std::array<std::uint8_t, N> array_from_hex(std::string_view hex) {
  Bytes b = from_hex(hex);
  if (b.size() != N) fail(ErrorCode::parse_error, "expected " + std::to_string(N) + " hex-encoded bytes");
  std::array<std::uint8_t, N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

}  // namespace wallet
