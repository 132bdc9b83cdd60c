#pragma once

// Monitor-owned data objects: one writer, one reader, mapped straight into the
// two trustlets' page tables.

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "json.hpp"

#include "wallet/bytes.hpp"
#include "wallet/memory_model.hpp"
#include "wallet/types.hpp"

namespace wallet::objects {

inline constexpr ObjectId kNoObject = 0;
inline constexpr mm::Vpn kObjectWindowBase = mm::Vpn{1} << 40;
inline constexpr mm::Vpn kObjectWindowPages = mm::Vpn{1} << 16;

// Both holders see an object at the same virtual address.
constexpr mm::Vpn object_vpn(ObjectId id) { return kObjectWindowBase + mm::Vpn{id} * kObjectWindowPages; }
std::optional<ObjectId> object_at(mm::Vpn vpn);

struct DataObject {
  ObjectId id = kNoObject;
  std::uint64_t len = 0;
  ObjectType type = ObjectType::plain;
  std::vector<mm::FrameId> frames;
  std::optional<ProcessId> writer;
  std::optional<ProcessId> reader;
  bool sealed = false;
  bool sized = true;  // chain objects are sized when the producer creates its output
  bool writer_mapped = false;
  bool reader_mapped = false;
};

struct CopyCounter {
  std::uint64_t payload_bytes_copied = 0;
  std::uint64_t crypto_ops = 0;
  std::uint64_t fallback_copies = 0;
  std::uint64_t fallback_hops = 0;
  std::uint64_t colocated_fallbacks = 0;
};

struct ObjectLimits {
  std::size_t max_objects = 64;
  std::uint64_t max_bytes = 256 * mm::kMiB;
};

class ObjectStore {
 public:
  ObjectStore(mm::MemoryModel& mem, ObjectLimits limits = {});

  // Writer gets a write-only mapping. QuotaExceeded past the per-writer limits.
  Charged<ObjectId> create(ProcessId writer, std::uint64_t len, ObjectType type = ObjectType::plain);
  // Monitor-filled input object, read-only for the reader. Not a payload copy.
  Charged<ObjectId> create_input(ProcessId reader, ByteView bytes);
  // Reader gets a read-only mapping. AlreadyAttached once a different reader holds it.
  Charged<ObjectId> attach_reader(ProcessId reader, ObjectId id);
  // Last call wins.
  void set_output(ProcessId caller, ObjectId id);
  std::optional<ObjectId> output_of(ProcessId pid) const;
  void clear_output(ProcessId pid);

  // Reserves a chain object for producer -> consumer. Frames arrive on the producer's first create.
  ObjectId reserve_chain(ProcessId producer, ProcessId consumer);
  std::optional<ObjectId> pending_chain_of(ProcessId producer) const;
  // Producer exit: drop the producer's write mapping and grant the consumer read access.
  Charged<ObjectId> complete_chain(ProcessId producer);

  // Removes the writer's write access.
  void seal(ObjectId id);
  Bytes read(ObjectId id) const;

  // Detaches pid from every object; objects left with no holder are released.
  void reclaim(ProcessId pid);
  void release(ObjectId id);

  bool exists(ObjectId id) const { return objects_.count(id) != 0; }
  const DataObject& get(ObjectId id) const;
  std::vector<ObjectId> ids() const;
  std::vector<ObjectId> attached_to(ProcessId pid) const;

  CopyCounter& counters() { return counters_; }
  const CopyCounter& counters() const { return counters_; }

  nlohmann::json dump() const;

 private:
  DataObject& get_mut(ObjectId id);
  Charged<std::vector<mm::FrameId>> alloc_object_frames(std::uint64_t len);
  void map_frames(ProcessId pid, DataObject& o, mm::Access access);
  void unmap_frames(ProcessId pid, DataObject& o);
  void check_quota(ProcessId writer, std::uint64_t len) const;

  mm::MemoryModel& mem_;
  ObjectLimits limits_;
  std::map<ObjectId, DataObject> objects_;
  std::map<ProcessId, ObjectId> output_;
  std::map<ProcessId, ObjectId> pending_chain_;
  ObjectId next_id_ = 1;
  CopyCounter counters_;
};

}  // namespace wallet::objects
