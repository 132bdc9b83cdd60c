#include "wallet/crypto.hpp"

#include <sodium.h>

#include <mutex>

namespace wallet::crypto {

void ensure_initialized() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) fail(ErrorCode::config_invalid, "libsodium failed to initialize");
  });
}

Digest sha512(ByteView data) {
  ensure_initialized();
  Digest out{};
  crypto_hash_sha512(out.data(), data.data(), data.size());
  return out;
}

Rng::Rng(std::uint64_t seed) {
  ensure_initialized();
  ByteWriter w;
  w.raw(std::string_view("wallet-rng")).u64(seed);
  std::array<std::uint8_t, 32> key{};
  crypto_generichash(key.data(), key.size(), w.bytes().data(), w.size(), nullptr, 0);
  seed_ = key;
}

void Rng::fill(std::span<std::uint8_t> out) {
  // Each call consumes one fresh ChaCha20 stream keyed by (seed, counter).
  ByteWriter w;
  w.raw(seed_).u64(counter_++);
  std::array<std::uint8_t, randombytes_SEEDBYTES> block_seed{};
  crypto_generichash(block_seed.data(), block_seed.size(), w.bytes().data(), w.size(), nullptr, 0);
  randombytes_buf_deterministic(out.data(), out.size(), block_seed.data());
}

std::uint64_t Rng::next_u64() {
  auto b = bytes<8>();
  std::uint64_t v = 0;
  for (auto x : b) v = v << 8 | x;
  return v;
}

SigningKey SigningKey::generate(Rng& rng) { return from_seed(rng.bytes<32>()); }

SigningKey SigningKey::from_seed(const std::array<std::uint8_t, 32>& seed) {
  ensure_initialized();
  SigningKey k;
  k.seed_ = seed;
  crypto_sign_seed_keypair(k.public_.data(), k.secret_.data(), seed.data());
  return k;
}

Signature SigningKey::sign(ByteView message) const {
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), secret_.data());
  return sig;
}

bool verify(const PublicKey& key, ByteView message, const Signature& sig) {
  ensure_initialized();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(), key.data()) == 0;
}

Bytes seal(const PublicKey& recipient, ByteView plaintext, Rng& rng) {
  ensure_initialized();
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> recipient_x{};
  if (crypto_sign_ed25519_pk_to_curve25519(recipient_x.data(), recipient.data()) != 0) {
    fail(ErrorCode::invalid_argument, "recipient key is not a valid Ed25519 point");
  }
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> eph_pk{};
  std::array<std::uint8_t, crypto_box_SECRETKEYBYTES> eph_sk{};
  auto seed = rng.bytes<crypto_box_SEEDBYTES>();
  crypto_box_seed_keypair(eph_pk.data(), eph_sk.data(), seed.data());

  // Same nonce derivation as crypto_box_seal.
  std::array<std::uint8_t, crypto_box_NONCEBYTES> nonce{};
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, nonce.size());
  crypto_generichash_update(&st, eph_pk.data(), eph_pk.size());
  crypto_generichash_update(&st, recipient_x.data(), recipient_x.size());
  crypto_generichash_final(&st, nonce.data(), nonce.size());

  Bytes out(eph_pk.size() + plaintext.size() + crypto_box_MACBYTES);
  std::copy(eph_pk.begin(), eph_pk.end(), out.begin());
  int rc = crypto_box_easy(out.data() + eph_pk.size(), plaintext.data(), plaintext.size(), nonce.data(),
                           recipient_x.data(), eph_sk.data());
  sodium_memzero(eph_sk.data(), eph_sk.size());
  if (rc != 0) fail(ErrorCode::invalid_argument, "sealed-box encryption failed");
  return out;
}

std::optional<Bytes> unseal(const SigningKey& recipient, ByteView sealed) {
  ensure_initialized();
  if (sealed.size() < crypto_box_SEALBYTES) return std::nullopt;
  std::array<std::uint8_t, crypto_box_PUBLICKEYBYTES> pk{};
  std::array<std::uint8_t, crypto_box_SECRETKEYBYTES> sk{};
  if (crypto_sign_ed25519_pk_to_curve25519(pk.data(), recipient.public_.data()) != 0) return std::nullopt;
  crypto_sign_ed25519_sk_to_curve25519(sk.data(), recipient.secret_.data());
  Bytes out(sealed.size() - crypto_box_SEALBYTES);
  int rc = crypto_box_seal_open(out.data(), sealed.data(), sealed.size(), pk.data(), sk.data());
  sodium_memzero(sk.data(), sk.size());
  if (rc != 0) return std::nullopt;
  return out;
}

Bytes aead_encrypt(const SymmetricKey& key, ByteView plaintext, Rng& rng) {
  ensure_initialized();
  auto nonce = rng.bytes<crypto_secretbox_NONCEBYTES>();
  Bytes out(nonce.size() + crypto_secretbox_MACBYTES + plaintext.size());
  std::copy(nonce.begin(), nonce.end(), out.begin());
  crypto_secretbox_easy(out.data() + nonce.size(), plaintext.data(), plaintext.size(), nonce.data(), key.data());
  return out;
}

std::optional<Bytes> aead_decrypt(const SymmetricKey& key, ByteView ciphertext) {
  ensure_initialized();
  constexpr std::size_t overhead = crypto_secretbox_NONCEBYTES + crypto_secretbox_MACBYTES;
  if (ciphertext.size() < overhead) return std::nullopt;
  Bytes out(ciphertext.size() - overhead);
  if (crypto_secretbox_open_easy(out.data(), ciphertext.data() + crypto_secretbox_NONCEBYTES,
                                 ciphertext.size() - crypto_secretbox_NONCEBYTES, ciphertext.data(),
                                 key.data()) != 0) {
    return std::nullopt;
  }
  return out;
}

DhKeyPair DhKeyPair::generate(Rng& rng) {
  ensure_initialized();
  DhKeyPair kp;
  kp.secret = rng.bytes<32>();
  crypto_scalarmult_base(kp.public_key.data(), kp.secret.data());
  return kp;
}

SymmetricKey derive_session_key(const DhKeyPair& own, const PublicKey& peer, const PublicKey& monitor_public,
                                const PublicKey& provider_public) {
  ensure_initialized();
  std::array<std::uint8_t, crypto_scalarmult_BYTES> shared{};
  if (crypto_scalarmult(shared.data(), own.secret.data(), peer.data()) != 0) {
    fail(ErrorCode::auth_failed, "degenerate DH public key");
  }
  SymmetricKey key{};
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, key.size());
  crypto_generichash_update(&st, shared.data(), shared.size());
  crypto_generichash_update(&st, monitor_public.data(), monitor_public.size());
  crypto_generichash_update(&st, provider_public.data(), provider_public.size());
  crypto_generichash_final(&st, key.data(), key.size());
  sodium_memzero(shared.data(), shared.size());
  return key;
}

Digest fingerprint(ByteView key_material) {
  ByteWriter w;
  w.raw(std::string_view("wallet-user-id")).raw(key_material);
  return sha512(w.bytes());
}

}  // namespace wallet::crypto
