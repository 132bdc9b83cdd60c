#pragma once

// Trusted-process runtime: function pipelines, zygote images, the nested
// filesystem and the resumable interpreter that talks to the monitor through traps.

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "wallet/bytes.hpp"
#include "wallet/memory_model.hpp"
#include "wallet/types.hpp"

namespace wallet::libos {

enum class OpKind : std::uint8_t {
  identity = 0,
  sha512 = 1,
  uppercase = 2,
  lowercase = 3,
  append = 4,
  prepend = 5,
  constant = 6,
  read_file = 7,
  sleep = 8,
};

std::string_view op_name(OpKind kind);
OpKind op_from_name(std::string_view name);

struct PipelineOp {
  OpKind kind = OpKind::identity;
  // Literal for append/prepend/const, path for read_file, decimal ms for sleep.
  Bytes arg;

  static PipelineOp identity() { return {OpKind::identity, {}}; }
  static PipelineOp sha512() { return {OpKind::sha512, {}}; }
  static PipelineOp uppercase() { return {OpKind::uppercase, {}}; }
  static PipelineOp lowercase() { return {OpKind::lowercase, {}}; }
  static PipelineOp append(std::string_view s) { return {OpKind::append, to_bytes(s)}; }
  static PipelineOp prepend(std::string_view s) { return {OpKind::prepend, to_bytes(s)}; }
  static PipelineOp constant(ByteView b) { return {OpKind::constant, Bytes(b.begin(), b.end())}; }
  static PipelineOp read_file(std::string_view path) { return {OpKind::read_file, to_bytes(path)}; }
  static PipelineOp sleep(std::uint64_t ms) { return {OpKind::sleep, to_bytes(std::to_string(ms))}; }

  std::uint64_t sleep_ms() const;
  bool operator==(const PipelineOp&) const = default;
};

struct FunctionSpec {
  std::string name;
  std::vector<PipelineOp> steps;
  std::uint64_t exec_time_ms = 0;

  // u32-prefixed name, u64 exec_time_ms, u32 step count, then per step a tag
  // byte and a u32-prefixed argument.
  Bytes canonical_bytes() const;
  static FunctionSpec from_canonical(ByteView bytes);

  nlohmann::json to_json() const;
  static FunctionSpec from_json(const nlohmann::json& j);
  static FunctionSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const FunctionSpec&) const = default;
};

class ZygoteImage {
 public:
  struct File {
    std::string path;
    Bytes bytes;
  };
  struct ManifestEntry {
    std::string path;
    Digest digest;
  };

  ZygoteImage(std::string runtime_id, std::uint64_t init_cost_ms, std::vector<File> embedded,
              std::vector<ManifestEntry> manifest);

  // Parses canonical bytes; the result measures to the same digest.
  static ZygoteImage parse(ByteView canonical);
  static ZygoteImage load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::string& runtime_id() const { return runtime_id_; }
  std::uint64_t init_cost_ms() const { return init_cost_ms_; }
  const std::vector<ManifestEntry>& manifest() const { return manifest_; }
  std::vector<std::string> embedded_paths() const;
  std::optional<ByteView> embedded(std::string_view path) const;

  const Bytes& canonical_bytes() const { return *canonical_; }
  std::shared_ptr<const Bytes> canonical_ptr() const { return canonical_; }
  std::size_t size() const { return canonical_->size(); }

 private:
  ZygoteImage() = default;
  void index();

  std::string runtime_id_;
  std::uint64_t init_cost_ms_ = 0;
  std::vector<ManifestEntry> manifest_;
  std::shared_ptr<const Bytes> canonical_;
  // path -> (offset, length) into canonical_
  std::map<std::string, std::pair<std::size_t, std::size_t>, std::less<>> files_;
};

// Bytes delivered by the guest. Contents are reachable only through
// NestedFs::verify, so nothing unchecked can flow into a pipeline op.
class UnverifiedBytes {
 public:
  explicit UnverifiedBytes(Bytes raw) : raw_(std::move(raw)) {}
  std::size_t size() const { return raw_.size(); }

 private:
  friend class NestedFs;
  Bytes raw_;
};

class NestedFs {
 public:
  explicit NestedFs(std::shared_ptr<const ZygoteImage> image);

  enum class Source { embedded, external, missing };
  Source classify(std::string_view path) const;
  std::optional<ByteView> embedded(std::string_view path) const;
  std::optional<Digest> expected(std::string_view path) const;
  // Throws IntegrityError on digest mismatch, NotFound if the path is not in the manifest.
  Bytes verify(std::string_view path, const UnverifiedBytes& bytes) const;

 private:
  std::shared_ptr<const ZygoteImage> image_;
};

// Pure application of one op to a value; read_file and sleep are handled by the runner.
Bytes apply_op(const PipelineOp& op, Bytes value);

// Trap leaves, modeled on hypervisor-reserved cpuid leaves.
enum class Service : std::uint32_t {
  mem_alloc = 0x40000100,
  file_read = 0x40000101,
  obj_create = 0x40000102,
  obj_get = 0x40000103,
  obj_get_input = 0x40000104,
  obj_set_output = 0x40000105,
  exit = 0x40000106,
};

std::string_view service_name(std::uint32_t leaf);

struct TrapRequest {
  std::uint32_t leaf = 0;
  std::array<std::uint64_t, 3> args{};
  std::string path;  // file_read only
};

struct TrapResponse {
  std::array<std::uint64_t, 3> regs{};
  bool suspended = false;
};

// What a running trustlet sees of the machine: loads and stores at PL1 and the trap instruction.
class TrustletContext {
 public:
  virtual ~TrustletContext() = default;
  virtual TrapResponse trap(const TrapRequest& request) = 0;
  virtual Bytes load(mm::Vpn first, std::size_t len) = 0;
  virtual void store(mm::Vpn first, ByteView data) = 0;
};

// Interpreter state kept in the descriptor's register file; ip is the next step index.
class PipelineRunner {
 public:
  enum class Status { exited, suspended };

  PipelineRunner(std::shared_ptr<const FunctionSpec> fn, std::shared_ptr<const NestedFs> fs);

  // Runs until the exit trap or an I/O suspension. Pipeline errors propagate as Error.
  Status run(TrustletContext& ctx);
  // Hands over the bytes for the pending read_file; verification happens here.
  void deliver(const UnverifiedBytes& bytes);

  std::size_t ip() const { return ip_; }
  const std::optional<std::string>& pending_file() const { return pending_; }
  // Compute time accumulated since the last call.
  Micros take_compute();

 private:
  enum class Phase { fetch_input, steps, emit, done };

  std::shared_ptr<const FunctionSpec> fn_;
  std::shared_ptr<const NestedFs> fs_;
  Phase phase_ = Phase::fetch_input;
  std::size_t ip_ = 0;
  Bytes value_;
  std::optional<std::string> pending_;
  std::optional<Bytes> delivered_;
  Micros compute_{0};
};

// Runtime preloading for a zygote in state initialized; returns the init charge.
// Throws InvalidState when the state machine forbids it, including a second call.
Micros runtime_init(ProcState state, bool& preloaded, const ZygoteImage& image);

}  // namespace wallet::libos
