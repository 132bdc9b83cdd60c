#pragma once

// The trusted monitor: process descriptors, the monitor system calls, the trap
// services offered to trustlets, run-to-completion scheduling and chaining.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "wallet/attestation.hpp"
#include "wallet/guest.hpp"
#include "wallet/libos.hpp"
#include "wallet/memory_model.hpp"
#include "wallet/objects.hpp"
#include "wallet/types.hpp"

namespace wallet {

// Address-space layout of a trusted process, in page numbers.
inline constexpr mm::Vpn kImageBase = 0x10;
inline constexpr mm::Vpn kFunctionBase = mm::Vpn{1} << 30;
inline constexpr mm::Vpn kHeapBase = mm::Vpn{1} << 31;

struct MonitorConfig {
  mm::CostModel cost;
  std::uint64_t pool_bytes = 2ull << 30;  // validated on first use
  std::uint64_t prealloc_bytes = 0;       // validated at boot
  bool cow = true;
  std::uint64_t descriptor_clone_us = 50;
  std::uint64_t trustlet_heap_pages = 14;
  objects::ObjectLimits limits;
  bool vendor_platform = true;
  std::uint64_t seed = 1;
  std::string monitor_id = "node-0";

  void validate() const;
  // What the monitor measures about itself. Seed and id are excluded.
  Bytes canonical_bytes() const;
  nlohmann::json to_json() const;
  static MonitorConfig from_json(const nlohmann::json& j);
};

enum class ProcKind : std::uint8_t { zygote, trustlet };

struct ProcessDescriptor {
  ProcessId pid;
  ProcKind kind = ProcKind::zygote;
  ProcState state = ProcState::created;
  std::optional<ProcessId> base_zygote;
  std::set<ObjectId> objects;
  std::optional<Digest> measurement;

  // zygote
  std::shared_ptr<const libos::ZygoteImage> image;
  bool preloaded = false;
  bool sealed = false;

  // trustlet
  std::shared_ptr<const libos::NestedFs> fs;
  std::shared_ptr<const libos::FunctionSpec> fn;
  std::uint64_t function_bytes = 0;
  std::optional<Digest> user;
  std::unique_ptr<libos::PipelineRunner> runner;  // register file while an invocation is live
  mm::Vpn heap_next = kHeapBase;
  std::vector<mm::Vpn> scratch;  // pages holding fetched files for the live invocation
  bool busy = false;
};

using InvocationId = std::uint64_t;

struct Envelope {
  std::string source;
  Bytes sealed;  // output, response key and nonce, sealed to the function key
  attest::AttestationReport prior;

  Bytes serialize() const;
  static Envelope parse(ByteView bytes);
};

struct InvokeMetrics {
  Micros total{0};
  Micros exec{0};
  Micros measure{0};
  Micros crypto{0};
  Micros io{0};
  Micros comm{0};
  Micros memory{0};
  std::uint64_t bytes_hashed = 0;
  std::uint64_t cow_faults = 0;
  std::uint32_t hops = 0;

  nlohmann::json to_json() const;
};

struct InvokeResult {
  TrustletHandle trustlet;  // the trustlet that ran the first hop
  bool recreated = false;
  Bytes ciphertext;
  attest::AttestationReport report;
  std::optional<Envelope> envelope;
  Bytes output;  // plaintext, as held by the monitor; never handed to the guest
  InvokeMetrics metrics;
};

struct ZygoteCreation {
  ZygoteHandle handle;
  Digest digest{};
  Micros charge{0};
  Micros measure{0};
  bool cache_hit = false;
  std::uint64_t pages = 0;
};

struct TrustletCreation {
  TrustletHandle handle;
  Digest digest{};
  Micros charge{0};  // clone + fork + function load
  Micros measure{0};
  bool cache_hit = false;
  std::uint64_t bytes_hashed = 0;
};

class Monitor;

// Routes fallback envelopes between monitors and knows which platforms are genuine.
class Network {
 public:
  void attach(Monitor& m);
  Monitor& route(std::string_view id) const;  // NoRoute
  bool has(std::string_view id) const { return monitors_.count(std::string(id)) != 0; }
  void trust(const crypto::PublicKey& machine) { trusted_.insert(machine); }
  bool trusts(const crypto::PublicKey& machine) const { return trusted_.count(machine) != 0; }

  struct Hop {
    std::string monitor;
    TrustletHandle trustlet;
  };
  // Runs a chain whose hops communicate through encrypted envelopes.
  InvokeResult run_fallback_chain(const std::vector<Hop>& hops, ByteView request);

 private:
  std::map<std::string, Monitor*, std::less<>> monitors_;
  std::set<crypto::PublicKey> trusted_;
};

class Monitor {
 public:
  Monitor(MonitorConfig config, GuestBroker& guest);
  ~Monitor();
  Monitor(const Monitor&) = delete;
  Monitor& operator=(const Monitor&) = delete;

  static Digest expected_measurement(const MonitorConfig& config);

  const MonitorConfig& config() const { return config_; }
  const std::string& id() const { return config_.monitor_id; }
  Micros boot_charge() const { return boot_charge_; }
  Micros now() const { return clock_.now(); }
  const Digest& measurement() const { return measurement_; }
  const attest::Asp& platform() const { return *asp_; }
  std::string certificate() const { return asp_->certificate(); }

  // ---- monitor system calls ----
  attest::HandshakeResponse attest_monitor(const Nonce& provider_nonce);
  void load_policy(const attest::PolicyBlob& blob);
  ZygoteCreation create_zygote(std::shared_ptr<const libos::ZygoteImage> image);
  ZygoteCreation create_zygote(const libos::ZygoteImage& image);
  // Returns the number of descriptors terminated.
  std::size_t delete_zygote(ZygoteHandle handle);
  TrustletCreation create_trustlet(ZygoteHandle zygote, const libos::FunctionSpec& fn);
  void delete_trustlet(TrustletHandle handle);
  InvokeResult invoke_trustlet(TrustletHandle handle, ByteView request);
  attest::ProcessReport attest(ProcessId handle, const Nonce& nonce);

  // ---- queue-level interface ----
  InvocationId submit(TrustletHandle handle, ByteView request);
  InvocationId submit_export(TrustletHandle handle, ByteView request, std::string_view destination);
  InvocationId submit_envelope(TrustletHandle handle, const Envelope& envelope,
                               std::optional<std::string> destination = std::nullopt);
  // Runs one trustlet until exit or suspension; nullopt when idle.
  std::optional<ProcessId> schedule();
  void run_until_idle();
  bool done(InvocationId id) const;
  // Throws the invocation's error if it failed.
  InvokeResult collect(InvocationId id);
  const std::vector<InvocationId>& completion_order() const { return completions_; }
  const std::vector<ProcessId>& dispatch_log() const { return dispatch_log_; }

  ObjectId link_chain(TrustletHandle producer, TrustletHandle consumer);

  // Trap entry for an arbitrary caller; PermissionDenied unless it is the running trustlet.
  libos::TrapResponse trap(TrustletHandle caller, const libos::TrapRequest& request);
  // Runs `body` as the trustlet's code for one invocation over `input`. No report is produced.
  void drive(TrustletHandle handle, ByteView input, const std::function<void(libos::TrustletContext&)>& body);

  // ---- introspection ----
  bool has_policy() const { return policy_.has_value(); }
  const attest::ProviderPolicy& policy() const;
  const ProcessDescriptor& descriptor(ProcessId pid) const;
  bool exists(ProcessId pid) const { return procs_.count(pid) != 0; }
  std::vector<ProcessId> processes() const;
  std::size_t running_count() const;
  const mm::MemoryModel& memory() const { return mem_; }
  mm::MemoryModel& memory_for_test() { return mem_; }
  const objects::ObjectStore& objects() const { return objects_; }
  const attest::MeasurementCache& cache() const { return cache_; }
  mm::Accounting accounting() const;
  void set_network(Network* net) { network_ = net; }

  // Adversarial hook: hands the function key to an attacker.
  std::optional<crypto::SigningKey> compromise_function_key() const;

 private:
  struct Invocation {
    InvocationId id = 0;
    InvocationId job = 0;
    ProcessId pid;
    Nonce nonce{};
    crypto::SymmetricKey response_key{};
    ObjectId input = objects::kNoObject;
    std::vector<attest::ChainEntry> entries;
    std::optional<std::string> export_to;
    std::optional<std::optional<Bytes>> fetched;  // outer: a fetch happened; inner: the guest had the file
    Micros submitted{0};
    Micros io_ready{0};
  };
  struct Job {
    InvocationId id = 0;
    TrustletHandle first;
    bool recreated = false;
    bool finished = false;
    bool aborted = false;
    std::optional<Error> error;
    InvokeResult result;
    Micros submitted{0};
  };
  class Context;
  friend class Context;

  ProcessDescriptor& proc(ProcessId pid);
  ProcessDescriptor& trustlet(TrustletHandle h);
  void transition(ProcessDescriptor& d, ProcState next);
  void charge(Micros d) { clock_.advance(d); }
  Charged<attest::Measurement> measure(attest::Subject s, ByteView bytes, Job* job);
  void check_policy_digest(const std::set<Digest>& allowed, const Digest& d, std::string_view what) const;
  ProcessId next_pid() { return ProcessId{next_pid_++}; }
  void terminate(ProcessId pid);
  TrustletHandle prepare_user(TrustletHandle handle, const Digest& user, bool& recreated);
  InvocationId enqueue(TrustletHandle handle, const attest::InvocationPlain& plain, Bytes input,
                       std::optional<std::string> export_to, std::vector<attest::ChainEntry> entries);
  void run_invocation(Invocation& inv);
  void finish_invocation(Invocation& inv);
  void fail_invocation(Invocation& inv, Error err);
  void release_invocation(Invocation& inv);
  void drop_link(ProcessId producer);
  void wake_blocked();
  Micros place_in_heap(ProcessDescriptor& d, ByteView bytes);
  bool reaches(const Digest& from, const Digest& to) const;

  MonitorConfig config_;
  GuestBroker& guest_;
  SimClock clock_;
  mm::MemoryModel mem_;
  objects::ObjectStore objects_;
  attest::MeasurementCache cache_;
  crypto::Rng rng_;
  std::optional<attest::Asp> asp_;
  attest::SessionManager sessions_;
  Digest measurement_{};
  Micros boot_charge_{0};

  std::optional<attest::ProviderPolicy> policy_;
  std::optional<crypto::SigningKey> function_key_;
  std::optional<attest::PlatformReport> invocation_platform_;

  std::map<ProcessId, ProcessDescriptor> procs_;
  std::uint32_t next_pid_ = 2;
  std::optional<ProcessId> running_;

  std::map<InvocationId, Invocation> invocations_;
  std::map<InvocationId, Job> jobs_;
  std::map<ProcessId, InvocationId> active_;
  std::deque<InvocationId> ready_;
  std::vector<InvocationId> blocked_;
  std::vector<InvocationId> completions_;
  std::vector<ProcessId> dispatch_log_;
  InvocationId next_invocation_ = 1;

  struct PendingLink {
    ProcessId consumer;
    Digest from{};
    Digest to{};
    ObjectId object = objects::kNoObject;
  };
  std::map<ProcessId, PendingLink> links_;  // keyed by producer
  Network* network_ = nullptr;
};

}  // namespace wallet
