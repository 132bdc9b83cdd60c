#pragma once

// Measurements, the simulated platform root of trust (gen / verif / getD),
// the provider handshake, and differential attestation reports.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "json.hpp"

#include "wallet/bytes.hpp"
#include "wallet/crypto.hpp"
#include "wallet/memory_model.hpp"
#include "wallet/types.hpp"

namespace wallet::attest {

enum class Subject : std::uint8_t { monitor, zygote, function, input, output };
std::string_view subject_name(Subject s);

struct Measurement {
  Digest digest{};
  Subject subject = Subject::input;
  Micros cached_at{0};
};

// Monitor, zygote and function measurements are cached by content; input and
// output are hashed on every call.
class MeasurementCache {
 public:
  explicit MeasurementCache(mm::CostModel model = {}) : model_(model) {}

  Charged<Measurement> measure(Subject subject, ByteView bytes, Micros now);
  // Same, but retains the caller's buffer instead of copying it for the hit check.
  Charged<Measurement> measure(Subject subject, std::shared_ptr<const Bytes> bytes, Micros now);

  // Always hashes, whatever the subject; the cache is neither read nor filled.
  Charged<Measurement> measure_fresh(Subject subject, ByteView bytes, Micros now);

  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t bytes_hashed() const { return bytes_hashed_; }
  std::size_t size() const;
  // Drops a cached subject; used when the owning zygote goes away.
  void forget(Subject subject, const Digest& digest);

 private:
  struct Key {
    Subject subject;
    std::size_t size;
    std::size_t content_hash;
    auto operator<=>(const Key&) const = default;
  };
  struct Entry {
    std::shared_ptr<const Bytes> content;
    Measurement m;
  };

  Charged<Measurement> lookup_or_hash(Subject subject, ByteView bytes, const std::shared_ptr<const Bytes>& keep,
                                      Micros now);

  mm::CostModel model_;
  std::map<Key, std::vector<Entry>> entries_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::uint64_t bytes_hashed_ = 0;
};

bool is_cached_subject(Subject s);

// ---- platform root of trust ----

struct PlatformReport {
  crypto::PublicKey machine_id{};
  Digest monitor_measurement{};
  Digest user_data{};
  crypto::Signature signature{};

  Bytes signed_bytes() const;
  bool operator==(const PlatformReport&) const = default;
};

class Asp {
 public:
  // Vendor-rooted platform: its public key is what verifiers hold as the certificate.
  static Asp vendor(crypto::Rng& rng);
  // An ordinary VM without vendor hardware; it can only self-sign.
  static Asp plain_vm(crypto::Rng& rng);

  const crypto::PublicKey& machine_id() const { return key_.public_key(); }
  bool genuine() const { return genuine_; }
  PlatformReport gen(const Digest& measurement, const Digest& user_data) const;

  // Single line: the 32-byte public key in hex.
  std::string certificate() const;

 private:
  Asp(crypto::SigningKey key, bool genuine) : key_(std::move(key)), genuine_(genuine) {}
  crypto::SigningKey key_;
  bool genuine_;
};

PlatformReport asp_gen(const crypto::SigningKey& machine_key, const Digest& measurement, const Digest& user_data);
bool asp_verif(const PlatformReport& report, const crypto::PublicKey& machine_id, const Digest& expected_measurement);
Digest asp_get_d(const PlatformReport& report);

crypto::PublicKey parse_certificate(std::string_view text);

// ---- differential reports ----

struct ChainEntry {
  Digest zygote{};
  Digest function{};
  Digest input{};
  Digest output{};
  bool operator==(const ChainEntry&) const = default;
};

struct AttestationReport {
  PlatformReport platform;
  Nonce nonce{};
  std::vector<ChainEntry> chain;
  crypto::Signature signature{};

  Bytes signed_bytes() const;
  Bytes serialize() const;
  static AttestationReport parse(ByteView bytes);
  nlohmann::json to_json() const;
  bool operator==(const AttestationReport&) const = default;
};

// NoPolicyKey when key is absent; otherwise signs platform, nonce and entries.
AttestationReport build_report(const PlatformReport& platform, const Nonce& nonce, std::vector<ChainEntry> chain,
                               const crypto::SigningKey* function_key);

// Platform user data of invocation reports: binds the function key to this monitor.
Digest function_key_binding(const crypto::PublicKey& function_public);

struct Expectations {
  crypto::PublicKey machine_id{};
  Digest monitor_digest{};
  std::set<Digest> zygotes;
  std::set<Digest> functions;
  Nonce nonce{};
  Digest input_digest{};
  crypto::PublicKey function_public{};
};

bool verify_report(const AttestationReport& report, const Expectations& expect);

// Report on a single zygote or trustlet, bound through the platform user data.
struct ProcessReport {
  PlatformReport platform;
  Digest zygote{};
  std::optional<Digest> function;
  Nonce nonce{};
};

Digest process_binding(const Digest& zygote, const std::optional<Digest>& function, const Nonce& nonce);
bool verify_process_report(const ProcessReport& report, const crypto::PublicKey& machine_id,
                           const Digest& monitor_digest);

// ---- provider policy and handshake ----

struct ProviderPolicy {
  std::set<Digest> allowed_zygotes;
  std::set<Digest> allowed_functions;
  std::array<std::uint8_t, 32> function_key_seed{};
  std::vector<std::vector<Digest>> chains;

  // ConfigInvalid unless zygotes are non-empty and every chain member is allowed.
  void validate() const;
  bool chain_adjacent(const Digest& producer, const Digest& consumer) const;
  Bytes serialize() const;
  static ProviderPolicy parse(ByteView bytes);
};

struct HandshakeResponse {
  PlatformReport report;
  crypto::PublicKey monitor_dh_public{};
};

struct PolicyBlob {
  crypto::PublicKey provider_dh_public{};
  Bytes ciphertext;
};

Digest handshake_binding(const crypto::PublicKey& dh_public, const Nonce& nonce);

// Monitor half of the handshake.
class SessionManager {
 public:
  // StaleNonce when the nonce was seen before in this process lifetime.
  HandshakeResponse begin(const Nonce& provider_nonce, const Asp& asp, const Digest& monitor_measurement,
                          crypto::Rng& rng);
  // NoSession without a prior handshake; AuthFailed when the blob does not open.
  ProviderPolicy accept(const PolicyBlob& blob);
  bool has_session() const { return session_.has_value(); }

 private:
  struct Session {
    crypto::DhKeyPair dh;
    Nonce provider_nonce{};
  };
  std::optional<Session> session_;
  std::set<Nonce> seen_;
};

class FunctionProvider {
 public:
  FunctionProvider(std::uint64_t seed, crypto::PublicKey vendor_cert, Digest expected_monitor);

  const crypto::SigningKey& function_key() const { return function_key_; }
  const crypto::PublicKey& function_public() const { return function_key_.public_key(); }

  Nonce begin_handshake();
  // VerifFailed if the report is not genuine, names another monitor, or does not bind this nonce.
  PolicyBlob finish_handshake(const HandshakeResponse& response, ProviderPolicy policy);
  std::optional<crypto::SymmetricKey> session_key() const { return session_key_; }

 private:
  crypto::Rng rng_;
  crypto::SigningKey function_key_;
  crypto::PublicKey vendor_cert_;
  Digest expected_monitor_;
  std::optional<Nonce> nonce_;
  std::optional<crypto::SymmetricKey> session_key_;
};

// ---- invocation requests ----

struct InvocationPlain {
  Digest function_digest{};
  Bytes input;
  crypto::SymmetricKey response_key{};
  Nonce nonce{};

  Bytes serialize() const;
  static InvocationPlain parse(ByteView bytes);
};

Bytes seal_request(const crypto::PublicKey& function_public, const InvocationPlain& plain, crypto::Rng& rng);
std::optional<InvocationPlain> open_request(const crypto::SigningKey& function_key, ByteView ciphertext);

class UserClient {
 public:
  UserClient(std::uint64_t seed, crypto::PublicKey function_public);

  // Fresh response key and nonce per request unless the key is pinned.
  Bytes request(const Digest& function_digest, ByteView input);
  void pin_response_key(const crypto::SymmetricKey& key) { pinned_ = key; }
  const InvocationPlain& last() const { return last_; }
  std::optional<Bytes> open_response(ByteView ciphertext) const;

 private:
  crypto::Rng rng_;
  crypto::PublicKey function_public_;
  std::optional<crypto::SymmetricKey> pinned_;
  InvocationPlain last_;
};

}  // namespace wallet::attest
