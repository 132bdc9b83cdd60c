#include "wallet/scenario.hpp"

namespace wallet {

libos::ZygoteImage sized_zygote(std::uint64_t bytes, std::string runtime_id, std::uint64_t init_cost_ms,
                                std::vector<libos::ZygoteImage::File> files,
                                std::vector<libos::ZygoteImage::ManifestEntry> manifest) {
  auto probe = libos::ZygoteImage(runtime_id, init_cost_ms, files, manifest);
  // A blob entry costs its path, two length prefixes and the entry itself.
  const std::string blob = "/runtime/blob";
  std::uint64_t overhead = probe.size() + 4 + blob.size() + 4;
  if (bytes > overhead) files.push_back({blob, Bytes(bytes - overhead, 0)});
  return libos::ZygoteImage(std::move(runtime_id), init_cost_ms, std::move(files), std::move(manifest));
}

libos::FunctionSpec padded_function(libos::FunctionSpec fn, std::size_t bytes) {
  std::size_t base = fn.canonical_bytes().size();
  if (bytes < base + 6) {
    fail(ErrorCode::invalid_argument,
         "function needs at least " + std::to_string(base + 6) + " bytes to pad, asked for " + std::to_string(bytes));
  }
  fn.steps.push_back({libos::OpKind::sleep, Bytes(bytes - base - 5, '0')});
  return fn;
}

Digest digest_of(const libos::ZygoteImage& z) { return crypto::sha512(z.canonical_bytes()); }
Digest digest_of(const libos::FunctionSpec& fn) { return crypto::sha512(fn.canonical_bytes()); }

Deployment::Deployment(MonitorConfig config, std::uint64_t provider_seed) : guest_(std::make_unique<GuestBroker>()) {
  Digest expected = Monitor::expected_measurement(config);
  monitor_ = std::make_unique<Monitor>(std::move(config), *guest_);
  // The verifier's copy of the vendor certificate travels as text.
  vendor_cert_ = attest::parse_certificate(monitor_->certificate());
  provider_ = std::make_unique<attest::FunctionProvider>(provider_seed, vendor_cert_, expected);
}

attest::PolicyBlob Deployment::install_policy(attest::ProviderPolicy policy) {
  allowed_zygotes = policy.allowed_zygotes;
  allowed_functions = policy.allowed_functions;
  Nonce n = provider_->begin_handshake();
  auto resp = monitor_->attest_monitor(n);
  auto blob = provider_->finish_handshake(resp, std::move(policy));
  monitor_->load_policy(blob);
  return blob;
}

attest::Expectations Deployment::expectations(const Nonce& nonce, ByteView input) const {
  attest::Expectations e;
  e.machine_id = vendor_cert_;
  e.monitor_digest = monitor_->measurement();
  e.zygotes = allowed_zygotes;
  e.functions = allowed_functions;
  e.nonce = nonce;
  e.input_digest = crypto::sha512(input);
  e.function_public = provider_->function_public();
  return e;
}

Deployment::Outcome Deployment::invoke(TrustletHandle t, const Digest& function_digest, ByteView input,
                                       attest::UserClient& user) {
  Outcome o;
  Bytes req = user.request(function_digest, input);
  o.nonce = user.last().nonce;
  o.input_digest = crypto::sha512(input);
  o.result = monitor_->invoke_trustlet(t, req);
  auto pt = user.open_response(o.result.ciphertext);
  if (pt) o.plaintext = *pt;
  o.verified = pt.has_value() && attest::verify_report(o.result.report, expectations(o.nonce, input));
  return o;
}

}  // namespace wallet
