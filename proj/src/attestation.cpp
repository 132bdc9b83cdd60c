#include "wallet/attestation.hpp"

#include <algorithm>

namespace wallet::attest {

namespace {

constexpr std::string_view kPlatformTag = "wallet-asp-report-v1";
constexpr std::string_view kReportTag = "wallet-attestation-v1";
constexpr std::array<std::uint8_t, 4> kReportMagic{'W', 'A', 'T', 'T'};
constexpr std::array<std::uint8_t, 4> kPolicyMagic{'W', 'P', 'O', 'L'};

std::size_t content_hash(ByteView b) {
  return std::hash<std::string_view>{}(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

template <std::size_t N>
std::array<std::uint8_t, N> read_prefixed_fixed(ByteReader& r) {
  auto b = r.prefixed();
  if (b.size() != N) fail(ErrorCode::parse_error, "field has wrong length");
  std::array<std::uint8_t, N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

}  // namespace

std::string_view subject_name(Subject s) {
  switch (s) {
    case Subject::monitor: return "monitor";
    case Subject::zygote: return "zygote";
    case Subject::function: return "function";
    case Subject::input: return "input";
    case Subject::output: return "output";
  }
  return "?";
}

bool is_cached_subject(Subject s) {
  return s == Subject::monitor || s == Subject::zygote || s == Subject::function;
}

// ---- MeasurementCache ----

Charged<Measurement> MeasurementCache::measure(Subject subject, ByteView bytes, Micros now) {
  return lookup_or_hash(subject, bytes, nullptr, now);
}

Charged<Measurement> MeasurementCache::measure(Subject subject, std::shared_ptr<const Bytes> bytes, Micros now) {
  return lookup_or_hash(subject, *bytes, bytes, now);
}

Charged<Measurement> MeasurementCache::measure_fresh(Subject subject, ByteView bytes, Micros now) {
  ++misses_;
  bytes_hashed_ += bytes.size();
  return {Measurement{crypto::sha512(bytes), subject, now}, model_.hash(bytes.size())};
}

Charged<Measurement> MeasurementCache::lookup_or_hash(Subject subject, ByteView bytes,
                                                      const std::shared_ptr<const Bytes>& keep, Micros now) {
  std::optional<Key> key;
  if (is_cached_subject(subject)) {
    key = Key{subject, bytes.size(), content_hash(bytes)};
    auto it = entries_.find(*key);
    if (it != entries_.end()) {
      for (const auto& e : it->second) {
        if (std::equal(bytes.begin(), bytes.end(), e.content->begin(), e.content->end())) {
          ++hits_;
          return {e.m, Micros(0)};
        }
      }
    }
  }
  ++misses_;
  bytes_hashed_ += bytes.size();
  Measurement m{crypto::sha512(bytes), subject, now};
  if (key) {
    auto content = keep ? keep : std::make_shared<const Bytes>(bytes.begin(), bytes.end());
    entries_[*key].push_back({content, m});
  }
  return {m, model_.hash(bytes.size())};
}

std::size_t MeasurementCache::size() const {
  std::size_t n = 0;
  for (const auto& [k, v] : entries_) n += v.size();
  return n;
}

void MeasurementCache::forget(Subject subject, const Digest& digest) {
  for (auto it = entries_.begin(); it != entries_.end();) {
    if (it->first.subject == subject) {
      auto& v = it->second;
      v.erase(std::remove_if(v.begin(), v.end(), [&](const Entry& e) { return e.m.digest == digest; }), v.end());
    }
    it = it->second.empty() ? entries_.erase(it) : std::next(it);
  }
}

// ---- platform ----

Bytes PlatformReport::signed_bytes() const {
  ByteWriter w;
  w.raw(kPlatformTag).raw(machine_id).raw(monitor_measurement).raw(user_data);
  return w.take();
}

PlatformReport asp_gen(const crypto::SigningKey& machine_key, const Digest& measurement, const Digest& user_data) {
  PlatformReport r;
  r.machine_id = machine_key.public_key();
  r.monitor_measurement = measurement;
  r.user_data = user_data;
  r.signature = machine_key.sign(r.signed_bytes());
  return r;
}

bool asp_verif(const PlatformReport& report, const crypto::PublicKey& machine_id, const Digest& expected_measurement) {
  if (report.machine_id != machine_id) return false;
  if (report.monitor_measurement != expected_measurement) return false;
  return crypto::verify(machine_id, report.signed_bytes(), report.signature);
}

Digest asp_get_d(const PlatformReport& report) { return report.user_data; }

Asp Asp::vendor(crypto::Rng& rng) { return Asp(crypto::SigningKey::generate(rng), true); }

Asp Asp::plain_vm(crypto::Rng& rng) { return Asp(crypto::SigningKey::generate(rng), false); }

PlatformReport Asp::gen(const Digest& measurement, const Digest& user_data) const {
  return asp_gen(key_, measurement, user_data);
}

std::string Asp::certificate() const { return to_hex(key_.public_key()) + "\n"; }

crypto::PublicKey parse_certificate(std::string_view text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
  return array_from_hex<32>(text);
}

// ---- reports ----

Bytes AttestationReport::signed_bytes() const {
  ByteWriter w;
  w.raw(kReportTag);
  w.prefixed(view(platform.machine_id))
      .prefixed(view(platform.monitor_measurement))
      .prefixed(view(platform.user_data))
      .prefixed(view(platform.signature));
  w.prefixed(view(nonce));
  w.u32(static_cast<std::uint32_t>(chain.size()));
  for (const auto& e : chain) {
    w.prefixed(view(e.zygote)).prefixed(view(e.function)).prefixed(view(e.input)).prefixed(view(e.output));
  }
  return w.take();
}

Bytes AttestationReport::serialize() const {
  ByteWriter w;
  w.raw(kReportMagic);
  w.prefixed(view(platform.machine_id))
      .prefixed(view(platform.monitor_measurement))
      .prefixed(view(platform.user_data))
      .prefixed(view(platform.signature));
  w.prefixed(view(nonce));
  w.u32(static_cast<std::uint32_t>(chain.size()));
  for (const auto& e : chain) {
    w.prefixed(view(e.zygote)).prefixed(view(e.function)).prefixed(view(e.input)).prefixed(view(e.output));
  }
  w.prefixed(view(signature));
  return w.take();
}

AttestationReport AttestationReport::parse(ByteView bytes) {
  ByteReader r(bytes);
  if (r.fixed<4>() != kReportMagic) fail(ErrorCode::parse_error, "not an attestation report");
  AttestationReport rep;
  rep.platform.machine_id = read_prefixed_fixed<32>(r);
  rep.platform.monitor_measurement = read_prefixed_fixed<kDigestSize>(r);
  rep.platform.user_data = read_prefixed_fixed<kDigestSize>(r);
  rep.platform.signature = read_prefixed_fixed<64>(r);
  rep.nonce = read_prefixed_fixed<kNonceSize>(r);
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    ChainEntry e;
    e.zygote = read_prefixed_fixed<kDigestSize>(r);
    e.function = read_prefixed_fixed<kDigestSize>(r);
    e.input = read_prefixed_fixed<kDigestSize>(r);
    e.output = read_prefixed_fixed<kDigestSize>(r);
    rep.chain.push_back(e);
  }
  rep.signature = read_prefixed_fixed<64>(r);
  r.expect_done();
  return rep;
}

nlohmann::json AttestationReport::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : chain) {
    entries.push_back({{"zygote_digest", to_hex(e.zygote)},
                       {"function_digest", to_hex(e.function)},
                       {"input_digest", to_hex(e.input)},
                       {"output_digest", to_hex(e.output)}});
  }
  return {{"platform",
           {{"machine_id", to_hex(platform.machine_id)},
            {"monitor_measurement", to_hex(platform.monitor_measurement)},
            {"user_data", to_hex(platform.user_data)},
            {"signature", to_hex(platform.signature)}}},
          {"nonce", to_hex(nonce)},
          {"chain_entries", entries},
          {"signature", to_hex(signature)}};
}

AttestationReport build_report(const PlatformReport& platform, const Nonce& nonce, std::vector<ChainEntry> chain,
                               const crypto::SigningKey* function_key) {
  if (!function_key) fail(ErrorCode::no_policy_key, "no function key has been loaded");
  if (chain.empty()) fail(ErrorCode::invalid_argument, "a report needs at least one chain entry");
  AttestationReport r;
  r.platform = platform;
  r.nonce = nonce;
  r.chain = std::move(chain);
  r.signature = function_key->sign(r.signed_bytes());
  return r;
}

Digest function_key_binding(const crypto::PublicKey& function_public) {
  ByteWriter w;
  w.raw(std::string_view("wallet-function-key")).raw(function_public);
  return crypto::sha512(w.bytes());
}

bool verify_report(const AttestationReport& report, const Expectations& expect) {
  if (!asp_verif(report.platform, expect.machine_id, expect.monitor_digest)) return false;
  if (asp_get_d(report.platform) != function_key_binding(expect.function_public)) return false;
  if (report.nonce != expect.nonce) return false;
  if (report.chain.empty()) return false;
  for (std::size_t i = 0; i < report.chain.size(); ++i) {
    const auto& e = report.chain[i];
    if (!expect.zygotes.count(e.zygote) || !expect.functions.count(e.function)) return false;
    if (i > 0 && e.input != report.chain[i - 1].output) return false;
  }
  if (report.chain.front().input != expect.input_digest) return false;
  return crypto::verify(expect.function_public, report.signed_bytes(), report.signature);
}

Digest process_binding(const Digest& zygote, const std::optional<Digest>& function, const Nonce& nonce) {
  ByteWriter w;
  w.raw(std::string_view("wallet-process")).raw(zygote).u8(function ? 1 : 0);
  if (function) w.raw(*function);
  w.raw(nonce);
  return crypto::sha512(w.bytes());
}

bool verify_process_report(const ProcessReport& report, const crypto::PublicKey& machine_id,
                           const Digest& monitor_digest) {
  return asp_verif(report.platform, machine_id, monitor_digest) &&
         asp_get_d(report.platform) == process_binding(report.zygote, report.function, report.nonce);
}

// ---- policy ----

void ProviderPolicy::validate() const {
  if (allowed_zygotes.empty()) fail(ErrorCode::config_invalid, "policy allows no zygote");
  for (const auto& chain : chains) {
    for (const auto& d : chain) {
      if (!allowed_functions.count(d)) fail(ErrorCode::config_invalid, "chain member is not an allowed function");
    }
  }
}

bool ProviderPolicy::chain_adjacent(const Digest& producer, const Digest& consumer) const {
  for (const auto& chain : chains) {
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      if (chain[i] == producer && chain[i + 1] == consumer) return true;
    }
  }
  return false;
}

Bytes ProviderPolicy::serialize() const {
  ByteWriter w;
  w.raw(kPolicyMagic).raw(function_key_seed);
  w.u32(static_cast<std::uint32_t>(allowed_zygotes.size()));
  for (const auto& d : allowed_zygotes) w.raw(d);
  w.u32(static_cast<std::uint32_t>(allowed_functions.size()));
  for (const auto& d : allowed_functions) w.raw(d);
  w.u32(static_cast<std::uint32_t>(chains.size()));
  for (const auto& c : chains) {
    w.u32(static_cast<std::uint32_t>(c.size()));
    for (const auto& d : c) w.raw(d);
  }
  return w.take();
}

ProviderPolicy ProviderPolicy::parse(ByteView bytes) {
  ByteReader r(bytes);
  if (r.fixed<4>() != kPolicyMagic) fail(ErrorCode::parse_error, "not a policy");
  ProviderPolicy p;
  p.function_key_seed = r.fixed<32>();
  for (std::uint32_t n = r.u32(); n > 0; --n) p.allowed_zygotes.insert(r.fixed<kDigestSize>());
  for (std::uint32_t n = r.u32(); n > 0; --n) p.allowed_functions.insert(r.fixed<kDigestSize>());
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    std::vector<Digest> c;
    for (std::uint32_t m = r.u32(); m > 0; --m) c.push_back(r.fixed<kDigestSize>());
    p.chains.push_back(std::move(c));
  }
  r.expect_done();
  return p;
}

// ---- handshake ----

Digest handshake_binding(const crypto::PublicKey& dh_public, const Nonce& nonce) {
  ByteWriter w;
  w.raw(dh_public).raw(nonce);
  return crypto::sha512(w.bytes());
}

HandshakeResponse SessionManager::begin(const Nonce& provider_nonce, const Asp& asp, const Digest& monitor_measurement,
                                        crypto::Rng& rng) {
  if (!seen_.insert(provider_nonce).second) fail(ErrorCode::stale_nonce, "provider nonce was already used");
  Session s{crypto::DhKeyPair::generate(rng), provider_nonce};
  HandshakeResponse resp{asp.gen(monitor_measurement, handshake_binding(s.dh.public_key, provider_nonce)),
                         s.dh.public_key};
  session_ = s;
  return resp;
}

ProviderPolicy SessionManager::accept(const PolicyBlob& blob) {
  if (!session_) fail(ErrorCode::no_session, "no handshake has been performed");
  auto key = crypto::derive_session_key(session_->dh, blob.provider_dh_public, session_->dh.public_key,
                                        blob.provider_dh_public);
  auto plain = crypto::aead_decrypt(key, blob.ciphertext);
  if (!plain) fail(ErrorCode::auth_failed, "policy blob failed authentication");
  ProviderPolicy p = ProviderPolicy::parse(*plain);
  session_.reset();
  return p;
}

FunctionProvider::FunctionProvider(std::uint64_t seed, crypto::PublicKey vendor_cert, Digest expected_monitor)
    : rng_(seed), function_key_(crypto::SigningKey::generate(rng_)), vendor_cert_(vendor_cert),
      expected_monitor_(expected_monitor) {}

Nonce FunctionProvider::begin_handshake() {
  nonce_ = rng_.bytes<kNonceSize>();
  session_key_.reset();
  return *nonce_;
}

PolicyBlob FunctionProvider::finish_handshake(const HandshakeResponse& response, ProviderPolicy policy) {
  if (!nonce_) fail(ErrorCode::invalid_state, "handshake not started");
  if (!asp_verif(response.report, vendor_cert_, expected_monitor_)) {
    fail(ErrorCode::verif_failed, "platform report does not verify against the vendor certificate");
  }
  if (asp_get_d(response.report) != handshake_binding(response.monitor_dh_public, *nonce_)) {
    fail(ErrorCode::verif_failed, "report does not bind this nonce and DH public key");
  }
  auto dh = crypto::DhKeyPair::generate(rng_);
  session_key_ = crypto::derive_session_key(dh, response.monitor_dh_public, response.monitor_dh_public, dh.public_key);
  policy.function_key_seed = function_key_.seed();
  nonce_.reset();
  return {dh.public_key, crypto::aead_encrypt(*session_key_, policy.serialize(), rng_)};
}

// ---- requests ----

Bytes InvocationPlain::serialize() const {
  ByteWriter w;
  w.raw(function_digest).prefixed(input).raw(response_key).raw(nonce);
  return w.take();
}

InvocationPlain InvocationPlain::parse(ByteView bytes) {
  ByteReader r(bytes);
  InvocationPlain p;
  p.function_digest = r.fixed<kDigestSize>();
  auto in = r.prefixed();
  p.input.assign(in.begin(), in.end());
  p.response_key = r.fixed<32>();
  p.nonce = r.fixed<kNonceSize>();
  r.expect_done();
  return p;
}

Bytes seal_request(const crypto::PublicKey& function_public, const InvocationPlain& plain, crypto::Rng& rng) {
  return crypto::seal(function_public, plain.serialize(), rng);
}

std::optional<InvocationPlain> open_request(const crypto::SigningKey& function_key, ByteView ciphertext) {
  auto plain = crypto::unseal(function_key, ciphertext);
  if (!plain) return std::nullopt;
  try {
    return InvocationPlain::parse(*plain);
  } catch (const Error&) {
    return std::nullopt;
  }
}

UserClient::UserClient(std::uint64_t seed, crypto::PublicKey function_public)
    : rng_(seed), function_public_(function_public) {}

Bytes UserClient::request(const Digest& function_digest, ByteView input) {
  last_.function_digest = function_digest;
  last_.input.assign(input.begin(), input.end());
  last_.response_key = pinned_ ? *pinned_ : rng_.bytes<32>();
  last_.nonce = rng_.bytes<kNonceSize>();
  return seal_request(function_public_, last_, rng_);
}

std::optional<Bytes> UserClient::open_response(ByteView ciphertext) const {
  return crypto::aead_decrypt(last_.response_key, ciphertext);
}

}  // namespace wallet::attest
