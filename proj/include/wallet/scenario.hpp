#pragma once

// A booted monitor together with its guest, a function provider and a user,
// wired the way a deployment would be. Shared by the CLI and the test suites.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wallet/attestation.hpp"
#include "wallet/guest.hpp"
#include "wallet/libos.hpp"
#include "wallet/monitor.hpp"

namespace wallet {

// Zygote whose canonical image is `bytes` long, padded with a zero-filled blob.
libos::ZygoteImage sized_zygote(std::uint64_t bytes, std::string runtime_id = "py-3.11",
                                std::uint64_t init_cost_ms = 0,
                                std::vector<libos::ZygoteImage::File> files = {},
                                std::vector<libos::ZygoteImage::ManifestEntry> manifest = {});

// Pads with a trailing zero-millisecond sleep so the canonical form is `bytes` long.
libos::FunctionSpec padded_function(libos::FunctionSpec fn, std::size_t bytes);

Digest digest_of(const libos::ZygoteImage& z);
Digest digest_of(const libos::FunctionSpec& fn);

class Deployment {
 public:
  Deployment(MonitorConfig config, std::uint64_t provider_seed);

  GuestBroker& guest() { return *guest_; }
  Monitor& monitor() { return *monitor_; }
  attest::FunctionProvider& provider() { return *provider_; }
  const crypto::PublicKey& vendor_cert() const { return vendor_cert_; }

  // Handshake, then loadPolicy. Returns the blob the guest carried.
  attest::PolicyBlob install_policy(attest::ProviderPolicy policy);

  struct Outcome {
    InvokeResult result;
    Bytes plaintext;
    bool verified = false;
    Nonce nonce{};
    Digest input_digest{};
  };
  // Encrypts a request under the function key, invokes, opens and verifies the response.
  Outcome invoke(TrustletHandle t, const Digest& function_digest, ByteView input, attest::UserClient& user);

  attest::Expectations expectations(const Nonce& nonce, ByteView input) const;
  std::set<Digest> allowed_zygotes;
  std::set<Digest> allowed_functions;

 private:
  std::unique_ptr<GuestBroker> guest_;
  std::unique_ptr<Monitor> monitor_;
  std::unique_ptr<attest::FunctionProvider> provider_;
  crypto::PublicKey vendor_cert_{};
};

}  // namespace wallet
