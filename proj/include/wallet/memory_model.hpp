#pragma once

// Emulated confidential-VM private memory: 4 KiB frames with real contents,
// per-privilege-level page permissions, copy-on-write forking, a validated
// frame pool and a simulated-time cost model.

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "wallet/bytes.hpp"
#include "wallet/types.hpp"

namespace wallet::mm {

inline constexpr std::size_t kPageSize = 4096;
inline constexpr std::uint64_t kMiB = 1ull << 20;

using FrameId = std::uint64_t;
using Vpn = std::uint64_t;
using Page = std::array<std::uint8_t, kPageSize>;

constexpr std::uint64_t pages_for(std::uint64_t bytes) { return (bytes + kPageSize - 1) / kPageSize; }

// PL0 (monitor) > PL1 (trusted processes) > PL2 (guest).
enum class PrivilegeLevel : std::uint8_t { monitor = 0, process = 1, guest = 2 };

constexpr bool outranks(PrivilegeLevel a, PrivilegeLevel b) {
  return static_cast<std::uint8_t>(a) < static_cast<std::uint8_t>(b);
}

std::string_view level_name(PrivilegeLevel level);

struct Access {
  bool read = false;
  bool write = false;
  bool operator==(const Access&) const = default;
};

inline constexpr Access kNoAccess{false, false};
inline constexpr Access kReadOnly{true, false};
inline constexpr Access kWriteOnly{false, true};
inline constexpr Access kReadWrite{true, true};

struct PagePerms {
  std::array<Access, 3> by_level{};

  Access& operator[](PrivilegeLevel l) { return by_level[static_cast<std::size_t>(l)]; }
  const Access& operator[](PrivilegeLevel l) const { return by_level[static_cast<std::size_t>(l)]; }
  bool operator==(const PagePerms&) const = default;

  static PagePerms monitor_only() { return make(kNoAccess, kNoAccess); }
  static PagePerms process(Access a) { return make(a, kNoAccess); }
  static PagePerms guest(Access a) { return make(kNoAccess, a); }

 private:
  static PagePerms make(Access process, Access guest) {
    PagePerms p;
    p.by_level = {kReadWrite, process, guest};
    return p;
  }
};

struct CostModel {
  double validation_us_per_page = 24.0;
  double hash_mb_per_s = 54.5;
  double cow_copy_us_per_page = 2.0;
  double transfer_us_per_mb = 1089.0;
  // Fixed part of one guest<->monitor transfer (privilege switch plus page-table update).
  double transfer_fixed_us = 50.0;
  double crypto_mb_per_s = 1024.0;
  double page_grant_us = 1.0;
  double context_switch_us = 5.0;

  // Throws ConfigInvalid unless every rate is strictly positive.
  void validate() const;

  Micros validation(std::uint64_t pages) const;
  Micros hash(std::uint64_t bytes) const;
  Micros page_copy(std::uint64_t pages) const;
  Micros transfer(std::uint64_t bytes) const;
  Micros crypto(std::uint64_t bytes) const;
  Micros grant(std::uint64_t pages) const;
  Micros context_switch() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static CostModel from_json(const nlohmann::json& j);
};

enum class AccessKind { read, write };
enum class FaultKind { not_mapped, permission_violation, cow_fault };

std::string_view fault_name(FaultKind kind);

struct PageFault {
  FaultKind kind;
  Vpn vpn;
};

template <class T>
class FaultOr {
 public:
  FaultOr(T value) : v_(std::move(value)) {}
  FaultOr(PageFault fault) : v_(fault) {}

  bool ok() const { return v_.index() == 0; }
  explicit operator bool() const { return ok(); }

  const T& value() const {
    if (!ok()) fail(ErrorCode::invalid_state, "page fault: " + std::string(fault_name(fault().kind)));
    return std::get<0>(v_);
  }
  T& value() {
    if (!ok()) fail(ErrorCode::invalid_state, "page fault: " + std::string(fault_name(fault().kind)));
    return std::get<0>(v_);
  }
  const PageFault& fault() const { return std::get<1>(v_); }

 private:
  std::variant<T, PageFault> v_;
};

struct Frame {
  FrameId id = 0;
  bool allocated = false;
  bool validated = false;
  // Data-object frames may be writable at one holder while mapped by a second.
  bool object = false;
  std::uint32_t ref_count = 0;
  std::uint32_t writable_maps = 0;
  PrivilegeLevel owner = PrivilegeLevel::guest;
  std::unique_ptr<Page> bytes;  // null reads as zeros
};

struct PageEntry {
  FrameId frame = 0;
  PagePerms perms;
  bool cow = false;
  bool present = false;
};

// Two-level table; leaves are shared between a zygote and its forks until one
// side modifies an entry in that leaf.
class PageTable {
 public:
  PageTable(ProcessId owner, PrivilegeLevel level) : owner_(owner), level_(level) {}

  ProcessId owner() const { return owner_; }
  PrivilegeLevel level() const { return level_; }
  std::size_t size() const { return size_; }
  const PageEntry* find(Vpn vpn) const;

  template <class F>
  void for_each(F&& f) const {
    for (const auto& [base, leaf] : leaves_) {
      for (std::size_t i = 0; i < kLeafSlots; ++i) {
        if (leaf->slots[i].present) f(base + i, leaf->slots[i]);
      }
    }
  }

 private:
  friend class MemoryModel;

  static constexpr std::size_t kLeafBits = 9;
  static constexpr std::size_t kLeafSlots = std::size_t{1} << kLeafBits;
  struct Leaf {
    std::array<PageEntry, kLeafSlots> slots{};
  };

  PageEntry* find_mutable(Vpn vpn);
  void insert(Vpn vpn, const PageEntry& e);
  void erase(Vpn vpn);

  ProcessId owner_;
  PrivilegeLevel level_;
  std::map<Vpn, std::shared_ptr<Leaf>> leaves_;
  std::size_t size_ = 0;
};

class MemoryPool {
 public:
  std::uint64_t free_frames() const;
  // True when every free frame is already validated.
  bool prevalidated() const;
  Micros clock_charged() const { return charged_; }

 private:
  friend class MemoryModel;

  struct Range {
    FrameId begin;
    FrameId end;
    bool validated;
  };

  void add_range(std::uint64_t pages, bool validated);
  // Lowest free frame id and whether it is validated.
  std::pair<FrameId, bool> take();

  std::set<FrameId> recycled_;
  std::deque<Range> fresh_;
  FrameId next_id_ = 0;
  Micros charged_{0};
};

struct Accounting {
  std::uint64_t shared_bytes = 0;
  std::uint64_t exclusive_bytes = 0;
  std::uint64_t total_resident_bytes = 0;
};

class MemoryModel {
 public:
  explicit MemoryModel(CostModel model = {});

  const CostModel& cost_model() const { return model_; }
  const MemoryPool& pool() const { return pool_; }

  // Adds validated frames; returns the validation time charged to boot.
  Micros preallocate(std::uint64_t bytes);
  // Adds frames that are validated on first allocation.
  void add_capacity(std::uint64_t bytes);

  Charged<std::vector<FrameId>> alloc_frames(std::size_t n);
  // Returns allocated frames that were never mapped.
  void release_unmapped(std::span<const FrameId> frames);

  void create_table(ProcessId owner, PrivilegeLevel level);
  bool has_table(ProcessId owner) const;
  const PageTable& table(ProcessId owner) const;
  void destroy_table(PrivilegeLevel caller, ProcessId owner);

  void map_page(PrivilegeLevel caller, ProcessId owner, Vpn vpn, FrameId frame, PagePerms perms, bool cow = false);
  void unmap_page(PrivilegeLevel caller, ProcessId owner, Vpn vpn);
  // Issuer must strictly outrank the level whose permission changes.
  void set_access(PrivilegeLevel caller, ProcessId owner, Vpn vpn, PrivilegeLevel target, Access access);

  // Permission check for one page; read success yields the page contents.
  FaultOr<ByteView> access(ProcessId owner, PrivilegeLevel level, Vpn vpn, AccessKind kind) const;
  std::optional<PageFault> write(ProcessId owner, PrivilegeLevel level, Vpn vpn, std::size_t offset, ByteView data);
  FaultOr<Bytes> read_range(ProcessId owner, PrivilegeLevel level, Vpn first, std::size_t len) const;
  // Stops at the first faulting page; earlier pages keep their new contents.
  std::optional<PageFault> write_range(ProcessId owner, PrivilegeLevel level, Vpn first, ByteView data);

  // Marks every PL1 entry non-writable and copy-on-write.
  void seal(ProcessId owner);
  bool is_sealed(ProcessId owner) const;

  // Aliases every base frame read-only into a new table. No bytes are copied.
  Charged<std::size_t> fork_cow(ProcessId base, ProcessId new_owner);
  // Full duplication, the path taken when copy-on-write is disabled.
  Charged<std::size_t> fork_copy(ProcessId base, ProcessId new_owner);
  Charged<FrameId> resolve_cow(ProcessId owner, Vpn vpn);

  Accounting accounting(std::span<const ProcessId> owners) const;

  const Frame& frame(FrameId id) const;
  // Marks a frame as backing a data object; its owner becomes PL1.
  void set_object_frame(FrameId id, bool object);
  ByteView frame_bytes(FrameId id) const;
  // Physical write by the monitor, bypassing page tables.
  void monitor_write(FrameId id, std::size_t offset, ByteView data);

  std::uint64_t bytes_copied() const { return bytes_copied_; }
  std::uint64_t live_frames() const { return live_frames_; }
  std::uint64_t total_ref_count() const;
  std::uint64_t total_entries() const;
  std::vector<ProcessId> owners() const;

 private:
  Frame& frame_mut(FrameId id);
  PageTable& table_mut(ProcessId owner);
  void add_ref(Frame& f, const PageEntry& e);
  void drop_ref(FrameId id, const PageEntry& e);
  void copy_frame(FrameId from, FrameId to);
  void check_isolation(const PageTable& t, const Frame& f, const PagePerms& perms, bool extra_ref) const;
  static bool writable_below_monitor(const PagePerms& p);

  CostModel model_;
  MemoryPool pool_;
  std::vector<Frame> frames_;
  std::map<ProcessId, PageTable> tables_;
  std::uint64_t bytes_copied_ = 0;
  std::uint64_t live_frames_ = 0;
};

}  // namespace wallet::mm
