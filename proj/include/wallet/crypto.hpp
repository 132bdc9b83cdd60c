#pragma once

// Thin wrappers over libsodium. Every randomized primitive draws from an explicit
// Rng so that seeded runs are bit-reproducible.

#include <array>
#include <cstdint>
#include <optional>

#include "wallet/bytes.hpp"

namespace wallet::crypto {

inline constexpr std::size_t kKeySize = 32;
using PublicKey = std::array<std::uint8_t, 32>;
using SecretKey = std::array<std::uint8_t, 64>;
using Signature = std::array<std::uint8_t, 64>;
using SymmetricKey = std::array<std::uint8_t, 32>;

void ensure_initialized();

Digest sha512(ByteView data);
inline Digest sha512(std::string_view s) {
  return sha512(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// Deterministic byte stream (ChaCha20 keyed by seed and a block counter).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  void fill(std::span<std::uint8_t> out);

  template <std::size_t N>
  std::array<std::uint8_t, N> bytes() {
    std::array<std::uint8_t, N> out{};
    fill(out);
    return out;
  }

  std::uint64_t next_u64();

 private:
  std::array<std::uint8_t, 32> seed_{};
  std::uint64_t counter_ = 0;
};

// Ed25519 signing key. The same key also decrypts sealed boxes addressed to its
// public half (through the birational map to X25519).
class SigningKey {
 public:
  static SigningKey generate(Rng& rng);
  static SigningKey from_seed(const std::array<std::uint8_t, 32>& seed);

  const PublicKey& public_key() const { return public_; }
  const std::array<std::uint8_t, 32>& seed() const { return seed_; }

  Signature sign(ByteView message) const;

 private:
  std::array<std::uint8_t, 32> seed_{};
  SecretKey secret_{};
  PublicKey public_{};

  friend std::optional<Bytes> unseal(const SigningKey& recipient, ByteView sealed);
};

bool verify(const PublicKey& key, ByteView message, const Signature& sig);

// Anonymous authenticated public-key encryption, wire-compatible with
// crypto_box_seal but with the ephemeral key drawn from rng.
Bytes seal(const PublicKey& recipient, ByteView plaintext, Rng& rng);
std::optional<Bytes> unseal(const SigningKey& recipient, ByteView sealed);

// XSalsa20-Poly1305; output is nonce || ciphertext.
Bytes aead_encrypt(const SymmetricKey& key, ByteView plaintext, Rng& rng);
std::optional<Bytes> aead_decrypt(const SymmetricKey& key, ByteView ciphertext);

struct DhKeyPair {
  std::array<std::uint8_t, 32> secret{};
  PublicKey public_key{};

  static DhKeyPair generate(Rng& rng);
};

// BLAKE2b(shared || monitor_public || provider_public). Role order is fixed so both
// sides derive the same key.
SymmetricKey derive_session_key(const DhKeyPair& own, const PublicKey& peer, const PublicKey& monitor_public,
                                const PublicKey& provider_public);

// Short identity of a symmetric key, used as a user fingerprint.
Digest fingerprint(ByteView key_material);

}  // namespace wallet::crypto
