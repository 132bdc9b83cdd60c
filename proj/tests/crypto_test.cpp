#include "wallet/crypto.hpp"

#include <gtest/gtest.h>

#include "support/openssl_oracle.hpp"

using namespace wallet;

TEST(Sha512, EmptyStringVector) {
  auto d = crypto::sha512(std::string_view(""));
  EXPECT_EQ(to_hex(d).substr(0, 8), "cf83e135");
  EXPECT_EQ(to_hex(d),
            "cf83e1357eefb8bdf1542850d66d8007d620e4050b5715dc83f4a921d36ce9ce"
            "47d0d13c5d85f2b0ff8318d2877eec2f63b931bd47417a81a538327af927da3e");
}

TEST(Sha512, AbcVector) {
  EXPECT_EQ(to_hex(crypto::sha512(std::string_view("abc"))),
            "ddaf35a193617abacc417349ae20413112e6fa4e89a97ea20a9eeee64b55d39a"
            "2192992a274fc1a836ba3c23a3feebbd454d4423643ce80e2a9ac94fa54ca49f");
}

TEST(Sha512, AgreesWithIndependentHasher) {
  crypto::Rng rng(5);
  for (std::size_t len : {0u, 1u, 63u, 64u, 65u, 4096u, 100000u}) {
    Bytes b(len);
    rng.fill(b);
    EXPECT_EQ(crypto::sha512(b), oracle::sha512(b)) << len;
  }
}

TEST(Rng, SeededStreamsReproduce) {
  crypto::Rng a(42), b(42), c(43);
  auto x = a.bytes<32>();
  EXPECT_EQ(x, b.bytes<32>());
  EXPECT_NE(x, c.bytes<32>());
  EXPECT_NE(x, a.bytes<32>());
}

TEST(Signatures, SignVerifyAndTamper) {
  crypto::Rng rng(1);
  auto key = crypto::SigningKey::generate(rng);
  auto msg = to_bytes("report body");
  auto sig = key.sign(msg);
  EXPECT_TRUE(crypto::verify(key.public_key(), msg, sig));
  sig[3] ^= 1;
  EXPECT_FALSE(crypto::verify(key.public_key(), msg, sig));
  auto other = crypto::SigningKey::generate(rng);
  EXPECT_FALSE(crypto::verify(other.public_key(), msg, key.sign(msg)));
}

TEST(SealedBox, RoundTripAndWrongKey) {
  crypto::Rng rng(2);
  auto key = crypto::SigningKey::generate(rng);
  auto wrong = crypto::SigningKey::generate(rng);
  auto ct = crypto::seal(key.public_key(), to_bytes("secret"), rng);
  auto pt = crypto::unseal(key, ct);
  ASSERT_TRUE(pt);
  EXPECT_EQ(to_string(*pt), "secret");
  EXPECT_FALSE(crypto::unseal(wrong, ct));
  ct.back() ^= 0x80;
  EXPECT_FALSE(crypto::unseal(key, ct));
}

TEST(Aead, RoundTripAndTamper) {
  crypto::Rng rng(3);
  auto k = rng.bytes<32>();
  auto ct = crypto::aead_encrypt(k, to_bytes("payload"), rng);
  EXPECT_EQ(to_string(*crypto::aead_decrypt(k, ct)), "payload");
  auto k2 = rng.bytes<32>();
  EXPECT_FALSE(crypto::aead_decrypt(k2, ct));
  ct[30] ^= 1;
  EXPECT_FALSE(crypto::aead_decrypt(k, ct));
  EXPECT_FALSE(crypto::aead_decrypt(k, Bytes(5)));
}

TEST(Dh, BothSidesDeriveSameKey) {
  crypto::Rng rng(4);
  auto m = crypto::DhKeyPair::generate(rng);
  auto p = crypto::DhKeyPair::generate(rng);
  auto km = crypto::derive_session_key(m, p.public_key, m.public_key, p.public_key);
  auto kp = crypto::derive_session_key(p, m.public_key, m.public_key, p.public_key);
  EXPECT_EQ(km, kp);
  auto mitm = crypto::DhKeyPair::generate(rng);
  EXPECT_NE(km, crypto::derive_session_key(p, mitm.public_key, mitm.public_key, p.public_key));
}
