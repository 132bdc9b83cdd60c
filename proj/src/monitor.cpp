#include "wallet/monitor.hpp"

#include <algorithm>

namespace wallet {

using attest::Subject;
using mm::PrivilegeLevel;

namespace {

constexpr std::string_view kMonitorBuild = "wallet-monitor/1";
constexpr std::array<std::uint8_t, 4> kEnvelopeMagic{'W', 'E', 'N', 'V'};

struct HopPayload {
  Bytes output;
  crypto::SymmetricKey response_key{};
  Nonce nonce{};

  Bytes serialize() const {
    ByteWriter w;
    w.prefixed(output).raw(response_key).raw(nonce);
    return w.take();
  }
  static HopPayload parse(ByteView b) {
    ByteReader r(b);
    HopPayload p;
    auto out = r.prefixed();
    p.output.assign(out.begin(), out.end());
    p.response_key = r.fixed<32>();
    p.nonce = r.fixed<kNonceSize>();
    r.expect_done();
    return p;
  }
};

bool edge_allowed(ProcState from, ProcState to) {
  switch (from) {
    case ProcState::created: return to == ProcState::initialized;
    case ProcState::initialized: return to == ProcState::ready;
    case ProcState::ready: return to == ProcState::running;
    case ProcState::running: return to == ProcState::ready || to == ProcState::terminated;
    case ProcState::terminated: return false;
  }
  return false;
}

std::string pid_str(ProcessId pid) { return std::to_string(pid.value); }

}  // namespace

// ---- config ----

void MonitorConfig::validate() const {
  cost.validate();
  if (limits.max_objects == 0 || limits.max_bytes == 0) fail(ErrorCode::config_invalid, "object limits must be positive");
  if (monitor_id.empty()) fail(ErrorCode::config_invalid, "monitor_id must not be empty");
}

nlohmann::json MonitorConfig::to_json() const {
  return {{"cost", cost.to_json()},
          {"pool_bytes", pool_bytes},
          {"prealloc_bytes", prealloc_bytes},
          {"cow", cow},
          {"descriptor_clone_us", descriptor_clone_us},
          {"trustlet_heap_pages", trustlet_heap_pages},
          {"max_objects", limits.max_objects},
          {"max_object_bytes", limits.max_bytes},
          {"vendor_platform", vendor_platform},
          {"seed", seed},
          {"monitor_id", monitor_id}};
}

MonitorConfig MonitorConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::config_invalid, "monitor config must be a JSON object");
  static const std::set<std::string> known{"cost",        "pool_bytes",          "prealloc_bytes",   "cow",
                                           "descriptor_clone_us", "trustlet_heap_pages", "max_objects",
                                           "max_object_bytes",    "vendor_platform",     "seed", "monitor_id"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) fail(ErrorCode::config_invalid, "unknown monitor config key '" + k + "'");
  }
  MonitorConfig c;
  try {
    if (j.contains("cost")) c.cost = mm::CostModel::from_json(j.at("cost"));
    c.pool_bytes = j.value("pool_bytes", c.pool_bytes);
    c.prealloc_bytes = j.value("prealloc_bytes", c.prealloc_bytes);
    c.cow = j.value("cow", c.cow);
    c.descriptor_clone_us = j.value("descriptor_clone_us", c.descriptor_clone_us);
    c.trustlet_heap_pages = j.value("trustlet_heap_pages", c.trustlet_heap_pages);
    c.limits.max_objects = j.value("max_objects", c.limits.max_objects);
    c.limits.max_bytes = j.value("max_object_bytes", c.limits.max_bytes);
    c.vendor_platform = j.value("vendor_platform", c.vendor_platform);
    c.seed = j.value("seed", c.seed);
    c.monitor_id = j.value("monitor_id", c.monitor_id);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, std::string("monitor config: ") + e.what());
  }
  c.validate();
  return c;
}

Bytes MonitorConfig::canonical_bytes() const {
  nlohmann::json j = to_json();
  j.erase("seed");
  j.erase("monitor_id");
  ByteWriter w;
  w.prefixed(kMonitorBuild).prefixed(j.dump());
  return w.take();
}

// ---- envelopes and metrics ----

Bytes Envelope::serialize() const {
  ByteWriter w;
  w.raw(kEnvelopeMagic).prefixed(source).prefixed(sealed).prefixed(prior.serialize());
  return w.take();
}

Envelope Envelope::parse(ByteView bytes) {
  ByteReader r(bytes);
  if (r.fixed<4>() != kEnvelopeMagic) fail(ErrorCode::parse_error, "not an envelope");
  Envelope e;
  e.source = r.prefixed_string();
  auto s = r.prefixed();
  e.sealed.assign(s.begin(), s.end());
  e.prior = attest::AttestationReport::parse(r.prefixed());
  r.expect_done();
  return e;
}

nlohmann::json InvokeMetrics::to_json() const {
  return {{"total_us", total.count()},     {"exec_us", exec.count()},     {"measure_us", measure.count()},
          {"crypto_us", crypto.count()},   {"io_us", io.count()},         {"comm_us", comm.count()},
          {"memory_us", memory.count()},   {"bytes_hashed", bytes_hashed}, {"cow_faults", cow_faults},
          {"hops", hops}};
}

// ---- network ----

void Network::attach(Monitor& m) {
  if (monitors_.count(m.id())) fail(ErrorCode::invalid_argument, "monitor id '" + m.id() + "' already attached");
  monitors_[m.id()] = &m;
  m.set_network(this);
  if (m.platform().genuine()) trust(m.platform().machine_id());
}

Monitor& Network::route(std::string_view id) const {
  auto it = monitors_.find(id);
  if (it == monitors_.end()) fail(ErrorCode::no_route, "no route to monitor '" + std::string(id) + "'");
  return *it->second;
}

InvokeResult Network::run_fallback_chain(const std::vector<Hop>& hops, ByteView request) {
  if (hops.empty()) fail(ErrorCode::invalid_argument, "a chain needs at least one hop");
  for (const auto& h : hops) route(h.monitor);
  Monitor& first = route(hops[0].monitor);
  if (hops.size() == 1) return first.invoke_trustlet(hops[0].trustlet, request);

  InvocationId id = first.submit_export(hops[0].trustlet, request, hops[1].monitor);
  first.run_until_idle();
  InvokeResult r = first.collect(id);
  const TrustletHandle head = r.trustlet;
  const bool recreated = r.recreated;
  InvokeMetrics sum = r.metrics;
  for (std::size_t i = 1; i < hops.size(); ++i) {
    Monitor& m = route(hops[i].monitor);
    std::optional<std::string> next;
    if (i + 1 < hops.size()) next = hops[i + 1].monitor;
    InvocationId hid = m.submit_envelope(hops[i].trustlet, *r.envelope, next);
    m.run_until_idle();
    r = m.collect(hid);
    sum.total += r.metrics.total;
    sum.exec += r.metrics.exec;
    sum.measure += r.metrics.measure;
    sum.crypto += r.metrics.crypto;
    sum.io += r.metrics.io;
    sum.comm += r.metrics.comm;
    sum.memory += r.metrics.memory;
    sum.bytes_hashed += r.metrics.bytes_hashed;
    sum.cow_faults += r.metrics.cow_faults;
    sum.hops += r.metrics.hops;
  }
  r.trustlet = head;
  r.recreated = recreated;
  r.metrics = sum;
  return r;
}

// ---- trap context ----

class Monitor::Context : public libos::TrustletContext {
 public:
  Context(Monitor& m, ProcessDescriptor& d, Invocation& inv, Job& job) : m_(m), d_(d), inv_(inv), job_(job) {}

  libos::TrapResponse trap(const libos::TrapRequest& req) override {
    if (!m_.running_ || *m_.running_ != d_.pid) {
      fail(ErrorCode::permission_denied, "trap from pid " + pid_str(d_.pid) + " which is not running");
    }
    using libos::Service;
    libos::TrapResponse resp;
    const auto& cost = m_.mem_.cost_model();
    switch (static_cast<Service>(req.leaf)) {
      case Service::mem_alloc: {
        std::uint64_t n = mm::pages_for(req.args[0]);
        auto frames = m_.mem_.alloc_frames(n);
        mm::Vpn base = d_.heap_next;
        for (std::size_t i = 0; i < n; ++i) {
          m_.mem_.map_page(PrivilegeLevel::monitor, d_.pid, base + i, frames.value[i],
                           mm::PagePerms::process(mm::kReadWrite));
        }
        d_.heap_next += n;
        Micros c = frames.charge + cost.grant(n);
        m_.charge(c);
        job_.result.metrics.memory += c;
        resp.regs = {base, n, 0};
        return resp;
      }
      case Service::file_read: {
        auto bytes = m_.guest_.read_file(req.path);
        Micros io = cost.transfer(bytes ? bytes->size() : 0);
        inv_.io_ready = m_.now() + io;
        inv_.fetched = std::move(bytes);
        job_.result.metrics.io += io;
        resp.suspended = true;
        return resp;
      }
      case Service::obj_create: {
        auto c = m_.objects_.create(d_.pid, req.args[0], ObjectType::output);
        d_.objects.insert(c.value);
        m_.charge(c.charge);
        job_.result.metrics.memory += c.charge;
        resp.regs = {c.value, objects::object_vpn(c.value), 0};
        return resp;
      }
      case Service::obj_get: {
        ObjectId id = static_cast<ObjectId>(req.args[0]);
        const auto& o = m_.objects_.get(id);
        if (o.reader != d_.pid) {
          // A plain attachment is allowed only along a chain edge of the policy.
          if (!o.writer || !m_.exists(*o.writer)) fail(ErrorCode::policy_violation, "object has no live producer");
          const auto& w = m_.proc(*o.writer);
          if (!w.measurement || !d_.measurement ||
              !m_.policy().chain_adjacent(*w.measurement, *d_.measurement)) {
            fail(ErrorCode::policy_violation, "policy does not let this function consume the object");
          }
        }
        auto c = m_.objects_.attach_reader(d_.pid, id);
        d_.objects.insert(id);
        m_.charge(c.charge);
        job_.result.metrics.memory += c.charge;
        resp.regs = {id, m_.objects_.get(id).len, objects::object_vpn(id)};
        return resp;
      }
      case Service::obj_get_input: {
        if (inv_.input == objects::kNoObject) fail(ErrorCode::no_input, "no input object for this invocation");
        resp.regs = {inv_.input, m_.objects_.get(inv_.input).len, objects::object_vpn(inv_.input)};
        return resp;
      }
      case Service::obj_set_output: {
        ObjectId id = static_cast<ObjectId>(req.args[0]);
        if (id == objects::kNoObject) {
          m_.objects_.clear_output(d_.pid);
        } else {
          m_.objects_.set_output(d_.pid, id);
        }
        return resp;
      }
      case Service::exit:
        return resp;
    }
    fail(ErrorCode::unknown_service, "unknown trap leaf " + std::to_string(req.leaf));
  }

  Bytes load(mm::Vpn first, std::size_t len) override {
    auto r = m_.mem_.read_range(d_.pid, PrivilegeLevel::process, first, len);
    if (!r) {
      fail(ErrorCode::function_error, std::string("load fault (") + std::string(mm::fault_name(r.fault().kind)) +
                                          ") at vpn " + std::to_string(r.fault().vpn));
    }
    return std::move(r.value());
  }

  void store(mm::Vpn first, ByteView data) override {
    while (auto fault = m_.mem_.write_range(d_.pid, PrivilegeLevel::process, first, data)) {
      if (fault->kind != mm::FaultKind::cow_fault) {
        fail(ErrorCode::function_error, std::string("store fault (") + std::string(mm::fault_name(fault->kind)) +
                                            ") at vpn " + std::to_string(fault->vpn));
      }
      auto c = m_.mem_.resolve_cow(d_.pid, fault->vpn);
      m_.charge(c.charge);
      job_.result.metrics.memory += c.charge;
      ++job_.result.metrics.cow_faults;
    }
    if (objects::object_at(first)) m_.objects_.counters().payload_bytes_copied += data.size();
  }

 private:
  Monitor& m_;
  ProcessDescriptor& d_;
  Invocation& inv_;
  Job& job_;
};

// ---- boot ----

Monitor::Monitor(MonitorConfig config, GuestBroker& guest)
    : config_((config.validate(), std::move(config))),
      guest_(guest),
      mem_(config_.cost),
      objects_(mem_, config_.limits),
      cache_(config_.cost),
      rng_(config_.seed) {
  crypto::ensure_initialized();
  mem_.create_table(kGuestPid, PrivilegeLevel::guest);
  boot_charge_ = mem_.preallocate(config_.prealloc_bytes);
  mem_.add_capacity(config_.pool_bytes);
  asp_ = config_.vendor_platform ? attest::Asp::vendor(rng_) : attest::Asp::plain_vm(rng_);
  auto m = cache_.measure(Subject::monitor, config_.canonical_bytes(), clock_.now());
  measurement_ = m.value.digest;
  boot_charge_ += m.charge;
  charge(boot_charge_);
}

Monitor::~Monitor() = default;

Digest Monitor::expected_measurement(const MonitorConfig& config) { return crypto::sha512(config.canonical_bytes()); }

// ---- helpers ----

ProcessDescriptor& Monitor::proc(ProcessId pid) {
  auto it = procs_.find(pid);
  if (it == procs_.end()) fail(ErrorCode::unknown_handle, "no process with pid " + pid_str(pid));
  return it->second;
}

const ProcessDescriptor& Monitor::descriptor(ProcessId pid) const {
  auto it = procs_.find(pid);
  if (it == procs_.end()) fail(ErrorCode::unknown_handle, "no process with pid " + pid_str(pid));
  return it->second;
}

ProcessDescriptor& Monitor::trustlet(TrustletHandle h) {
  ProcessDescriptor& d = proc(h.pid);
  if (d.kind != ProcKind::trustlet) fail(ErrorCode::unknown_handle, "pid " + pid_str(h.pid) + " is not a trustlet");
  return d;
}

std::vector<ProcessId> Monitor::processes() const {
  std::vector<ProcessId> out;
  for (const auto& [pid, d] : procs_) out.push_back(pid);
  return out;
}

std::size_t Monitor::running_count() const {
  return static_cast<std::size_t>(
      std::count_if(procs_.begin(), procs_.end(), [](const auto& p) { return p.second.state == ProcState::running; }));
}

mm::Accounting Monitor::accounting() const {
  auto owners = processes();
  return mem_.accounting(owners);
}

const attest::ProviderPolicy& Monitor::policy() const {
  if (!policy_) fail(ErrorCode::no_policy_key, "no provider policy loaded");
  return *policy_;
}

std::optional<crypto::SigningKey> Monitor::compromise_function_key() const { return function_key_; }

void Monitor::transition(ProcessDescriptor& d, ProcState next) {
  if (!edge_allowed(d.state, next)) {
    fail(ErrorCode::invalid_state, std::string("illegal transition ") + state_name(d.state) + " -> " + state_name(next));
  }
  if (next == ProcState::running) {
    for (const auto& [pid, other] : procs_) {
      if (other.state == ProcState::running) fail(ErrorCode::invalid_state, "another process is already running");
    }
  }
  d.state = next;
}

Charged<attest::Measurement> Monitor::measure(Subject s, ByteView bytes, Job* job) {
  std::uint64_t before = cache_.bytes_hashed();
  auto m = cache_.measure(s, bytes, clock_.now());
  charge(m.charge);
  if (job) {
    job->result.metrics.measure += m.charge;
    job->result.metrics.bytes_hashed += cache_.bytes_hashed() - before;
  }
  return m;
}

void Monitor::check_policy_digest(const std::set<Digest>& allowed, const Digest& d, std::string_view what) const {
  if (!allowed.count(d)) {
    fail(ErrorCode::policy_violation, std::string(what) + " digest " + to_hex(d).substr(0, 16) + "... not in policy");
  }
}

// ---- attestation and policy ----

attest::HandshakeResponse Monitor::attest_monitor(const Nonce& provider_nonce) {
  Bytes n = guest_.forward("handshake", Bytes(provider_nonce.begin(), provider_nonce.end()));
  Nonce nonce{};
  if (n.size() != nonce.size()) fail(ErrorCode::invalid_argument, "nonce has wrong length");
  std::copy(n.begin(), n.end(), nonce.begin());
  auto resp = sessions_.begin(nonce, *asp_, measurement_, rng_);
  guest_.record("handshake", resp.report.signed_bytes());
  guest_.record("handshake", resp.monitor_dh_public);
  return resp;
}

void Monitor::load_policy(const attest::PolicyBlob& blob) {
  guest_.record("policy", blob.ciphertext);
  attest::ProviderPolicy p = sessions_.accept(blob);
  p.validate();
  function_key_ = crypto::SigningKey::from_seed(p.function_key_seed);
  p.function_key_seed.fill(0);
  policy_ = std::move(p);
  invocation_platform_ = asp_->gen(measurement_, attest::function_key_binding(function_key_->public_key()));
}

attest::ProcessReport Monitor::attest(ProcessId handle, const Nonce& nonce) {
  const ProcessDescriptor& d = descriptor(handle);
  attest::ProcessReport r;
  if (d.kind == ProcKind::zygote) {
    r.zygote = *d.measurement;
  } else {
    r.zygote = *descriptor(*d.base_zygote).measurement;
    r.function = d.measurement;
  }
  r.nonce = nonce;
  r.platform = asp_->gen(measurement_, attest::process_binding(r.zygote, r.function, nonce));
  guest_.record("attest", r.platform.signed_bytes());
  return r;
}

// ---- zygotes ----

ZygoteCreation Monitor::create_zygote(const libos::ZygoteImage& image) {
  return create_zygote(std::make_shared<const libos::ZygoteImage>(image));
}

ZygoteCreation Monitor::create_zygote(std::shared_ptr<const libos::ZygoteImage> image) {
  if (!policy_) fail(ErrorCode::policy_violation, "no provider policy loaded");
  ZygoteCreation out;
  Micros start = now();
  std::uint64_t hits = cache_.hits();
  auto m = cache_.measure(Subject::zygote, image->canonical_ptr(), clock_.now());
  charge(m.charge);
  out.measure = m.charge;
  out.cache_hit = cache_.hits() > hits;
  out.digest = m.value.digest;
  check_policy_digest(policy_->allowed_zygotes, out.digest, "zygote");

  ProcessId pid = next_pid();
  ProcessDescriptor d;
  d.pid = pid;
  d.kind = ProcKind::zygote;
  d.image = image;
  d.measurement = out.digest;
  mem_.create_table(pid, PrivilegeLevel::process);
  try {
    const Bytes& canon = image->canonical_bytes();
    std::uint64_t pages = std::max<std::uint64_t>(1, mm::pages_for(canon.size()));
    auto frames = mem_.alloc_frames(pages);
    for (std::uint64_t i = 0; i < pages; ++i) {
      mem_.map_page(PrivilegeLevel::monitor, pid, kImageBase + i, frames.value[i], mm::PagePerms::process(mm::kReadWrite));
    }
    mem_.write_range(pid, PrivilegeLevel::monitor, kImageBase, canon);
    charge(frames.charge + mem_.cost_model().grant(pages));
    out.pages = pages;
  } catch (...) {
    mem_.destroy_table(PrivilegeLevel::monitor, pid);
    throw;
  }
  transition(d, ProcState::initialized);
  charge(libos::runtime_init(d.state, d.preloaded, *image));
  mem_.seal(pid);
  d.sealed = true;
  transition(d, ProcState::ready);
  procs_.emplace(pid, std::move(d));
  out.handle = ZygoteHandle{pid};
  out.charge = now() - start;
  return out;
}

std::size_t Monitor::delete_zygote(ZygoteHandle handle) {
  ProcessDescriptor& z = proc(handle.pid);
  if (z.kind != ProcKind::zygote) fail(ErrorCode::unknown_handle, "pid " + pid_str(handle.pid) + " is not a zygote");
  std::vector<ProcessId> children;
  for (const auto& [pid, d] : procs_) {
    if (d.base_zygote == handle.pid) children.push_back(pid);
  }
  for (ProcessId c : children) terminate(c);
  terminate(handle.pid);
  return children.size() + 1;
}

// ---- trustlets ----

TrustletCreation Monitor::create_trustlet(ZygoteHandle zygote, const libos::FunctionSpec& fn) {
  if (!policy_) fail(ErrorCode::policy_violation, "no provider policy loaded");
  ProcessDescriptor& z = proc(zygote.pid);
  if (z.kind != ProcKind::zygote) fail(ErrorCode::unknown_handle, "pid " + pid_str(zygote.pid) + " is not a zygote");
  if (!z.sealed || z.state != ProcState::ready) fail(ErrorCode::not_sealed, "zygote is not sealed and ready");

  TrustletCreation out;
  auto canon = std::make_shared<const Bytes>(fn.canonical_bytes());
  std::uint64_t hits = cache_.hits();
  std::uint64_t hashed = cache_.bytes_hashed();
  auto m = cache_.measure(Subject::function, canon, clock_.now());
  charge(m.charge);
  out.measure = m.charge;
  out.cache_hit = cache_.hits() > hits;
  out.bytes_hashed = cache_.bytes_hashed() - hashed;
  out.digest = m.value.digest;
  check_policy_digest(policy_->allowed_functions, out.digest, "function");

  const auto& cost = mem_.cost_model();
  ProcessId pid = next_pid();
  Micros creation{static_cast<std::int64_t>(config_.descriptor_clone_us)};
  auto fork = config_.cow ? mem_.fork_cow(zygote.pid, pid) : mem_.fork_copy(zygote.pid, pid);
  creation += fork.charge;
  std::uint64_t fn_pages = std::max<std::uint64_t>(1, mm::pages_for(canon->size()));
  std::uint64_t total = fn_pages + config_.trustlet_heap_pages;
  try {
    auto frames = mem_.alloc_frames(total);
    creation += frames.charge;
    for (std::uint64_t i = 0; i < fn_pages; ++i) {
      mem_.map_page(PrivilegeLevel::monitor, pid, kFunctionBase + i, frames.value[i], mm::PagePerms::process(mm::kReadOnly));
    }
    mem_.write_range(pid, PrivilegeLevel::monitor, kFunctionBase, *canon);
    for (std::uint64_t i = 0; i < config_.trustlet_heap_pages; ++i) {
      mem_.map_page(PrivilegeLevel::monitor, pid, kHeapBase + i, frames.value[fn_pages + i],
                    mm::PagePerms::process(mm::kReadWrite));
    }
  } catch (...) {
    mem_.destroy_table(PrivilegeLevel::monitor, pid);
    throw;
  }
  creation += cost.transfer(canon->size()) + cost.grant(total);
  charge(creation);
  out.charge = creation;

  ProcessDescriptor d;
  d.pid = pid;
  d.kind = ProcKind::trustlet;
  d.base_zygote = zygote.pid;
  d.measurement = out.digest;
  d.fs = std::make_shared<const libos::NestedFs>(z.image);
  d.fn = std::make_shared<const libos::FunctionSpec>(fn);
  d.function_bytes = canon->size();
  d.heap_next = kHeapBase + config_.trustlet_heap_pages;
  transition(d, ProcState::initialized);
  transition(d, ProcState::ready);
  procs_.emplace(pid, std::move(d));
  out.handle = TrustletHandle{pid};
  return out;
}

void Monitor::delete_trustlet(TrustletHandle handle) {
  trustlet(handle);
  terminate(handle.pid);
}

void Monitor::drop_link(ProcessId producer) {
  auto it = links_.find(producer);
  if (it == links_.end()) return;
  auto cit = procs_.find(it->second.consumer);
  if (cit != procs_.end() && !active_.count(it->second.consumer)) cit->second.busy = false;
  objects_.release(it->second.object);
  links_.erase(it);
}

void Monitor::terminate(ProcessId pid) {
  ProcessDescriptor& d = proc(pid);
  if (auto a = active_.find(pid); a != active_.end()) {
    InvocationId id = a->second;
    Invocation& inv = invocations_.at(id);
    ready_.erase(std::remove(ready_.begin(), ready_.end(), id), ready_.end());
    blocked_.erase(std::remove(blocked_.begin(), blocked_.end(), id), blocked_.end());
    Job& job = jobs_.at(inv.job);
    job.aborted = true;
    fail_invocation(inv, Error(ErrorCode::aborted, "trustlet " + pid_str(pid) + " was deleted mid-invocation"));
  }
  drop_link(pid);
  std::vector<ProcessId> feeders;
  for (const auto& [producer, link] : links_) {
    if (link.consumer == pid) feeders.push_back(producer);
  }
  for (ProcessId p : feeders) drop_link(p);
  objects_.reclaim(pid);
  mem_.destroy_table(PrivilegeLevel::monitor, pid);
  if (d.state == ProcState::ready) transition(d, ProcState::running);
  if (d.state == ProcState::running) transition(d, ProcState::terminated);
  procs_.erase(pid);
}

// ---- invocation ----

TrustletHandle Monitor::prepare_user(TrustletHandle handle, const Digest& user, bool& recreated) {
  ProcessDescriptor& d = trustlet(handle);
  recreated = false;
  if (!d.user) {
    d.user = user;
    return handle;
  }
  if (*d.user == user) return handle;
  // A different user never reuses a descriptor.
  ZygoteHandle z{*d.base_zygote};
  libos::FunctionSpec fn = *d.fn;
  terminate(handle.pid);
  auto fresh = create_trustlet(z, fn);
  proc(fresh.handle.pid).user = user;
  recreated = true;
  return fresh.handle;
}

InvokeResult Monitor::invoke_trustlet(TrustletHandle handle, ByteView request) {
  InvocationId id = submit(handle, request);
  run_until_idle();
  return collect(id);
}

InvocationId Monitor::submit(TrustletHandle handle, ByteView request) {
  Bytes req = guest_.forward("request", Bytes(request.begin(), request.end()));
  if (!function_key_) fail(ErrorCode::no_policy_key, "no function key loaded");
  ProcessDescriptor& d = trustlet(handle);
  if (d.busy) fail(ErrorCode::trustlet_busy, "trustlet " + pid_str(handle.pid) + " is busy");
  auto plain = attest::open_request(*function_key_, req);
  if (!plain) fail(ErrorCode::decrypt_failed, "request does not open under the function key");
  Micros crypto = config_.cost.crypto(req.size());
  charge(crypto);
  if (plain->function_digest != *d.measurement) {
    fail(ErrorCode::policy_violation, "request names a different function than the trustlet runs");
  }
  bool recreated = false;
  TrustletHandle h = prepare_user(handle, crypto::fingerprint(plain->response_key), recreated);
  Bytes input = plain->input;
  InvocationId id = enqueue(h, *plain, std::move(input), std::nullopt, {});
  Job& job = jobs_.at(id);
  job.recreated = recreated;
  job.result.metrics.crypto += crypto;
  return id;
}

InvocationId Monitor::submit_export(TrustletHandle handle, ByteView request, std::string_view destination) {
  if (!network_ || !network_->has(destination)) {
    fail(ErrorCode::no_route, "no route to monitor '" + std::string(destination) + "'");
  }
  InvocationId id = submit(handle, request);
  invocations_.at(id).export_to = std::string(destination);
  return id;
}

InvocationId Monitor::submit_envelope(TrustletHandle handle, const Envelope& envelope,
                                      std::optional<std::string> destination) {
  if (destination && (!network_ || !network_->has(*destination))) {
    fail(ErrorCode::no_route, "no route to monitor '" + *destination + "'");
  }
  if (!function_key_) fail(ErrorCode::no_policy_key, "no function key loaded");
  ProcessDescriptor& d = trustlet(handle);
  if (d.busy) fail(ErrorCode::trustlet_busy, "trustlet " + pid_str(handle.pid) + " is busy");

  const auto& prior = envelope.prior;
  const auto& fpub = function_key_->public_key();
  bool machine_ok = prior.platform.machine_id == asp_->machine_id() ||
                    (network_ && network_->trusts(prior.platform.machine_id));
  if (!machine_ok || !attest::asp_verif(prior.platform, prior.platform.machine_id, measurement_) ||
      attest::asp_get_d(prior.platform) != attest::function_key_binding(fpub) || prior.chain.empty() ||
      !crypto::verify(fpub, prior.signed_bytes(), prior.signature)) {
    fail(ErrorCode::verif_failed, "prior hop report does not verify");
  }
  auto opened = crypto::unseal(*function_key_, envelope.sealed);
  if (!opened) fail(ErrorCode::decrypt_failed, "envelope does not open under the function key");
  HopPayload payload = HopPayload::parse(*opened);
  if (payload.nonce != prior.nonce || crypto::sha512(payload.output) != prior.chain.back().output) {
    fail(ErrorCode::integrity_error, "envelope payload does not match the prior report");
  }
  const auto& cost = mem_.cost_model();
  Micros crypto = cost.crypto(payload.output.size());
  Micros comm = crypto + cost.transfer(envelope.sealed.size());
  charge(comm);
  auto& ctr = objects_.counters();
  ctr.crypto_ops += 1;
  ctr.fallback_copies += 1;
  ctr.payload_bytes_copied += payload.output.size();

  attest::InvocationPlain plain;
  plain.function_digest = *d.measurement;
  plain.response_key = payload.response_key;
  plain.nonce = payload.nonce;
  bool recreated = false;
  TrustletHandle h = prepare_user(handle, crypto::fingerprint(payload.response_key), recreated);
  InvocationId id = enqueue(h, plain, std::move(payload.output), destination, prior.chain);
  Job& job = jobs_.at(id);
  job.recreated = recreated;
  job.result.metrics.crypto += crypto;
  job.result.metrics.comm += comm;
  return id;
}

InvocationId Monitor::enqueue(TrustletHandle handle, const attest::InvocationPlain& plain, Bytes input,
                              std::optional<std::string> export_to, std::vector<attest::ChainEntry> entries) {
  ProcessDescriptor& d = trustlet(handle);
  auto in = objects_.create_input(d.pid, input);
  charge(in.charge);
  d.objects.insert(in.value);

  auto fn_bytes = mem_.read_range(d.pid, PrivilegeLevel::process, kFunctionBase, d.function_bytes);
  auto fn = std::make_shared<const libos::FunctionSpec>(libos::FunctionSpec::from_canonical(fn_bytes.value()));
  d.runner = std::make_unique<libos::PipelineRunner>(fn, d.fs);
  d.busy = true;

  InvocationId id = next_invocation_++;
  Invocation inv;
  inv.id = id;
  inv.job = id;
  inv.pid = d.pid;
  inv.nonce = plain.nonce;
  inv.response_key = plain.response_key;
  inv.input = in.value;
  inv.entries = std::move(entries);
  inv.export_to = std::move(export_to);
  inv.submitted = now();
  Job job;
  job.id = id;
  job.first = handle;
  job.submitted = now();
  job.result.metrics.memory += in.charge;
  invocations_.emplace(id, std::move(inv));
  jobs_.emplace(id, std::move(job));
  active_[d.pid] = id;
  ready_.push_back(id);
  return id;
}

void Monitor::wake_blocked() {
  std::vector<InvocationId> woken;
  for (InvocationId id : blocked_) {
    if (invocations_.at(id).io_ready <= now()) woken.push_back(id);
  }
  std::sort(woken.begin(), woken.end(), [&](InvocationId a, InvocationId b) {
    auto ta = invocations_.at(a).io_ready, tb = invocations_.at(b).io_ready;
    return ta != tb ? ta < tb : a < b;
  });
  for (InvocationId id : woken) {
    blocked_.erase(std::find(blocked_.begin(), blocked_.end(), id));
    ready_.push_back(id);
  }
}

std::optional<ProcessId> Monitor::schedule() {
  wake_blocked();
  if (ready_.empty() && !blocked_.empty()) {
    Micros earliest = invocations_.at(blocked_.front()).io_ready;
    for (InvocationId id : blocked_) earliest = std::min(earliest, invocations_.at(id).io_ready);
    if (earliest > now()) charge(earliest - now());
    wake_blocked();
  }
  if (ready_.empty()) return std::nullopt;
  InvocationId id = ready_.front();
  ready_.pop_front();
  Invocation& inv = invocations_.at(id);
  ProcessId pid = inv.pid;
  run_invocation(inv);
  return pid;
}

void Monitor::run_until_idle() {
  while (schedule()) {
  }
}

void Monitor::run_invocation(Invocation& inv) {
  ProcessDescriptor& d = proc(inv.pid);
  Job& job = jobs_.at(inv.job);
  charge(mem_.cost_model().context_switch());
  transition(d, ProcState::running);
  running_ = d.pid;
  dispatch_log_.push_back(d.pid);
  libos::PipelineRunner::Status status;
  try {
    if (inv.fetched) {
      std::optional<Bytes> f = std::move(*inv.fetched);
      inv.fetched.reset();
      if (!f) fail(ErrorCode::not_found, "guest has no file " + d.runner->pending_file().value_or("?"));
      Micros c = place_in_heap(d, *f);
      charge(c);
      job.result.metrics.memory += c;
      d.runner->deliver(libos::UnverifiedBytes(std::move(*f)));
    }
    Context ctx(*this, d, inv, job);
    status = d.runner->run(ctx);
    Micros compute = d.runner->take_compute();
    charge(compute);
    job.result.metrics.exec += compute;
  } catch (const Error& e) {
    running_.reset();
    transition(d, ProcState::ready);
    fail_invocation(inv, e);
    return;
  } catch (const std::exception& e) {
    running_.reset();
    transition(d, ProcState::ready);
    fail_invocation(inv, Error(ErrorCode::function_error, e.what()));
    return;
  }
  running_.reset();
  transition(d, ProcState::ready);
  if (status == libos::PipelineRunner::Status::suspended) {
    blocked_.push_back(inv.id);
    return;
  }
  try {
    finish_invocation(inv);
  } catch (const Error& e) {
    fail_invocation(inv, e);
  }
}

Micros Monitor::place_in_heap(ProcessDescriptor& d, ByteView bytes) {
  std::uint64_t n = mm::pages_for(bytes.size());
  if (n == 0) return Micros(0);
  auto frames = mem_.alloc_frames(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    mem_.map_page(PrivilegeLevel::monitor, d.pid, d.heap_next + i, frames.value[i],
                  mm::PagePerms::process(mm::kReadOnly));
    d.scratch.push_back(d.heap_next + i);
  }
  mem_.write_range(d.pid, PrivilegeLevel::monitor, d.heap_next, bytes);
  d.heap_next += n;
  return frames.charge + mem_.cost_model().grant(n);
}

void Monitor::finish_invocation(Invocation& inv) {
  ProcessDescriptor& d = proc(inv.pid);
  Job& job = jobs_.at(inv.job);
  const auto& cost = mem_.cost_model();

  std::optional<PendingLink> link;
  if (auto it = links_.find(d.pid); it != links_.end()) {
    link = it->second;
    links_.erase(it);
  }
  Bytes output;
  ObjectId chain_obj = objects::kNoObject;
  if (link) {
    auto c = objects_.complete_chain(d.pid);
    chain_obj = c.value;
    Micros comm = cost.context_switch() + c.charge;
    charge(c.charge);
    job.result.metrics.comm += comm;
    output = objects_.read(chain_obj);
  } else if (auto out = objects_.output_of(d.pid)) {
    objects_.seal(*out);
    output = objects_.read(*out);
  }
  Bytes input = objects_.read(inv.input);
  // Function pages live in the trustlet's address space, so they are re-measured per invocation.
  auto fn_pages = mem_.read_range(d.pid, PrivilegeLevel::process, kFunctionBase, d.function_bytes);
  auto mf = cache_.measure_fresh(Subject::function, fn_pages.value(), clock_.now());
  charge(mf.charge);
  job.result.metrics.measure += mf.charge;
  job.result.metrics.bytes_hashed += d.function_bytes;
  auto mi = measure(Subject::input, input, &job);
  auto mo = measure(Subject::output, output, &job);
  attest::ChainEntry entry;
  entry.zygote = *descriptor(*d.base_zygote).measurement;
  entry.function = mf.value.digest;
  entry.input = mi.value.digest;
  entry.output = mo.value.digest;
  inv.entries.push_back(entry);
  job.result.metrics.hops += 1;

  if (link) {
    ProcessDescriptor& c = proc(link->consumer);
    auto fn_bytes = mem_.read_range(c.pid, PrivilegeLevel::process, kFunctionBase, c.function_bytes);
    auto fn = std::make_shared<const libos::FunctionSpec>(libos::FunctionSpec::from_canonical(fn_bytes.value()));
    c.runner = std::make_unique<libos::PipelineRunner>(fn, c.fs);
    c.busy = true;
    c.objects.insert(chain_obj);
    Invocation next;
    next.id = next_invocation_++;
    next.job = inv.job;
    next.pid = c.pid;
    next.nonce = inv.nonce;
    next.response_key = inv.response_key;
    next.input = chain_obj;
    next.entries = inv.entries;
    next.export_to = inv.export_to;
    next.submitted = now();
    InvocationId nid = next.id;
    invocations_.emplace(nid, std::move(next));
    active_[c.pid] = nid;
    ready_.push_front(nid);
    release_invocation(inv);
    return;
  }

  if (inv.export_to) {
    HopPayload payload{output, inv.response_key, inv.nonce};
    Envelope env;
    env.source = id();
    env.sealed = crypto::seal(function_key_->public_key(), payload.serialize(), rng_);
    env.prior = attest::build_report(*invocation_platform_, inv.nonce, inv.entries, &*function_key_);
    Micros crypto = cost.crypto(output.size());
    Micros comm = crypto + cost.transfer(env.sealed.size());
    charge(comm);
    job.result.metrics.crypto += crypto;
    job.result.metrics.comm += comm;
    auto& ctr = objects_.counters();
    ctr.crypto_ops += 1;
    ctr.fallback_copies += 1;
    ctr.fallback_hops += 1;
    ctr.payload_bytes_copied += output.size();
    if (*inv.export_to == id()) ctr.colocated_fallbacks += 1;
    guest_.record("fallback", env.serialize());
    job.result.report = env.prior;
    job.result.envelope = std::move(env);
  } else {
    Micros crypto = cost.crypto(output.size());
    charge(crypto);
    job.result.metrics.crypto += crypto;
    job.result.ciphertext = crypto::aead_encrypt(inv.response_key, output, rng_);
    job.result.report = attest::build_report(*invocation_platform_, inv.nonce, inv.entries, &*function_key_);
    guest_.record("response", job.result.ciphertext);
    guest_.record("report", job.result.report.serialize());
  }
  job.result.output = std::move(output);
  job.result.trustlet = job.first;
  job.result.recreated = job.recreated;
  job.result.metrics.total = now() - job.submitted;
  job.finished = true;
  release_invocation(inv);
}

void Monitor::fail_invocation(Invocation& inv, Error err) {
  Job& job = jobs_.at(inv.job);
  job.error = std::move(err);
  job.finished = true;
  job.result.metrics.total = now() - job.submitted;
  drop_link(inv.pid);
  release_invocation(inv);
}

void Monitor::release_invocation(Invocation& inv) {
  ProcessId pid = inv.pid;
  InvocationId id = inv.id;
  if (auto it = procs_.find(pid); it != procs_.end()) {
    ProcessDescriptor& d = it->second;
    for (mm::Vpn v : d.scratch) {
      if (mem_.table(pid).find(v)) mem_.unmap_page(PrivilegeLevel::monitor, pid, v);
    }
    d.scratch.clear();
    objects_.reclaim(pid);
    d.objects.clear();
    d.runner.reset();
    bool still_linked = std::any_of(links_.begin(), links_.end(), [&](const auto& l) { return l.second.consumer == pid; });
    d.busy = still_linked;
  }
  active_.erase(pid);
  completions_.push_back(id);
  invocations_.erase(id);
}

bool Monitor::done(InvocationId id) const {
  auto it = jobs_.find(id);
  return it != jobs_.end() && it->second.finished;
}

InvokeResult Monitor::collect(InvocationId id) {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorCode::unknown_handle, "no invocation " + std::to_string(id));
  if (!it->second.finished) fail(ErrorCode::invalid_state, "invocation " + std::to_string(id) + " has not finished");
  Job job = std::move(it->second);
  jobs_.erase(it);
  if (job.error) throw *job.error;
  return std::move(job.result);
}

libos::TrapResponse Monitor::trap(TrustletHandle caller, const libos::TrapRequest& request) {
  ProcessDescriptor& d = trustlet(caller);
  auto a = active_.find(d.pid);
  if (!running_ || *running_ != d.pid || a == active_.end()) {
    fail(ErrorCode::permission_denied, "trap from pid " + pid_str(d.pid) + " which is not running");
  }
  Invocation& inv = invocations_.at(a->second);
  Context ctx(*this, d, inv, jobs_.at(inv.job));
  return ctx.trap(request);
}

void Monitor::drive(TrustletHandle handle, ByteView input, const std::function<void(libos::TrustletContext&)>& body) {
  ProcessDescriptor& d = trustlet(handle);
  if (d.busy) fail(ErrorCode::trustlet_busy, "trustlet " + pid_str(handle.pid) + " is busy");
  attest::InvocationPlain plain;
  InvocationId id = enqueue(handle, plain, Bytes(input.begin(), input.end()), std::nullopt, {});
  ready_.erase(std::remove(ready_.begin(), ready_.end(), id), ready_.end());
  Invocation& inv = invocations_.at(id);
  Job& job = jobs_.at(id);
  transition(d, ProcState::running);
  running_ = d.pid;
  dispatch_log_.push_back(d.pid);
  std::optional<Error> err;
  try {
    Context ctx(*this, d, inv, job);
    body(ctx);
  } catch (const Error& e) {
    err = e;
  }
  running_.reset();
  transition(d, ProcState::ready);
  drop_link(d.pid);
  release_invocation(inv);
  jobs_.erase(id);
  if (err) throw *err;
}

// ---- chaining ----

bool Monitor::reaches(const Digest& from, const Digest& to) const {
  std::vector<Digest> stack{from};
  std::set<Digest> seen;
  while (!stack.empty()) {
    Digest cur = stack.back();
    stack.pop_back();
    if (cur == to) return true;
    if (!seen.insert(cur).second) continue;
    for (const auto& [p, l] : links_) {
      if (l.from == cur) stack.push_back(l.to);
    }
  }
  return false;
}

ObjectId Monitor::link_chain(TrustletHandle producer, TrustletHandle consumer) {
  ProcessDescriptor& p = trustlet(producer);
  if (!exists(consumer.pid)) fail(ErrorCode::not_co_located, "consumer is not on monitor '" + id() + "'");
  ProcessDescriptor& c = trustlet(consumer);
  if (producer == consumer) fail(ErrorCode::policy_violation, "circular chain: a trustlet cannot feed itself");
  if (active_.count(p.pid) || active_.count(c.pid)) fail(ErrorCode::trustlet_busy, "chain member is mid-invocation");
  const Digest& fp = *p.measurement;
  const Digest& fc = *c.measurement;
  if (!policy().chain_adjacent(fp, fc)) fail(ErrorCode::policy_violation, "policy does not chain these functions");
  if (fp == fc || reaches(fc, fp)) fail(ErrorCode::policy_violation, "circular chain rejected");
  if (links_.count(p.pid)) fail(ErrorCode::invalid_state, "producer already feeds a chain");
  for (const auto& [q, l] : links_) {
    if (l.consumer == c.pid) fail(ErrorCode::invalid_state, "consumer already has a chain input");
  }
  ObjectId obj = objects_.reserve_chain(p.pid, c.pid);
  links_[p.pid] = PendingLink{c.pid, fp, fc, obj};
  c.busy = true;
  return obj;
}

}  // namespace wallet
