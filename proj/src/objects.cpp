#include "wallet/objects.hpp"

namespace wallet::objects {

using mm::PrivilegeLevel;

std::optional<ObjectId> object_at(mm::Vpn vpn) {
  if (vpn < kObjectWindowBase) return std::nullopt;
  mm::Vpn rel = (vpn - kObjectWindowBase) / kObjectWindowPages;
  if (rel == 0 || rel > UINT32_MAX) return std::nullopt;
  return static_cast<ObjectId>(rel);
}

ObjectStore::ObjectStore(mm::MemoryModel& mem, ObjectLimits limits) : mem_(mem), limits_(limits) {
  if (!mem_.has_table(kMonitorPid)) mem_.create_table(kMonitorPid, PrivilegeLevel::monitor);
}

DataObject& ObjectStore::get_mut(ObjectId id) {
  auto it = objects_.find(id);
  if (it == objects_.end()) fail(ErrorCode::unknown_object, "object " + std::to_string(id) + " does not exist");
  return it->second;
}

const DataObject& ObjectStore::get(ObjectId id) const {
  auto it = objects_.find(id);
  if (it == objects_.end()) fail(ErrorCode::unknown_object, "object " + std::to_string(id) + " does not exist");
  return it->second;
}

std::vector<ObjectId> ObjectStore::ids() const {
  std::vector<ObjectId> out;
  for (const auto& [id, o] : objects_) out.push_back(id);
  return out;
}

std::vector<ObjectId> ObjectStore::attached_to(ProcessId pid) const {
  std::vector<ObjectId> out;
  for (const auto& [id, o] : objects_) {
    if (o.writer == pid || o.reader == pid) out.push_back(id);
  }
  return out;
}

void ObjectStore::check_quota(ProcessId writer, std::uint64_t len) const {
  std::size_t count = 0;
  std::uint64_t bytes = len;
  for (const auto& [id, o] : objects_) {
    if (o.writer == writer) {
      ++count;
      bytes += o.len;
    }
  }
  if (count + 1 > limits_.max_objects) {
    fail(ErrorCode::quota_exceeded, "object count limit " + std::to_string(limits_.max_objects) + " reached");
  }
  if (bytes > limits_.max_bytes) fail(ErrorCode::quota_exceeded, "object byte limit exceeded");
}

Charged<std::vector<mm::FrameId>> ObjectStore::alloc_object_frames(std::uint64_t len) {
  if (mm::pages_for(len) > kObjectWindowPages) fail(ErrorCode::quota_exceeded, "object larger than its window");
  auto frames = mem_.alloc_frames(mm::pages_for(len));
  for (auto f : frames.value) mem_.set_object_frame(f, true);
  return frames;
}

void ObjectStore::map_frames(ProcessId pid, DataObject& o, mm::Access access) {
  mm::PagePerms perms = mm::PagePerms::process(access);
  for (std::size_t i = 0; i < o.frames.size(); ++i) {
    mem_.map_page(PrivilegeLevel::monitor, pid, object_vpn(o.id) + i, o.frames[i], perms);
  }
}

void ObjectStore::unmap_frames(ProcessId pid, DataObject& o) {
  if (!mem_.has_table(pid)) return;
  for (std::size_t i = 0; i < o.frames.size(); ++i) {
    if (mem_.table(pid).find(object_vpn(o.id) + i)) mem_.unmap_page(PrivilegeLevel::monitor, pid, object_vpn(o.id) + i);
  }
}

Charged<ObjectId> ObjectStore::create(ProcessId writer, std::uint64_t len, ObjectType type) {
  if (len == 0) fail(ErrorCode::invalid_argument, "object length must be positive");
  if (auto chain = pending_chain_of(writer)) {
    DataObject& o = get_mut(*chain);
    if (!o.sized) {
      check_quota(writer, len);
      auto frames = alloc_object_frames(len);
      o.frames = frames.value;
      o.len = len;
      o.sized = true;
      for (std::size_t i = 0; i < o.frames.size(); ++i) {
        mem_.map_page(PrivilegeLevel::monitor, kMonitorPid, object_vpn(o.id) + i, o.frames[i],
                      mm::PagePerms::monitor_only());
      }
      map_frames(writer, o, mm::kWriteOnly);
      o.writer_mapped = true;
      return {o.id, frames.charge + mem_.cost_model().grant(o.frames.size())};
    }
  }
  check_quota(writer, len);
  auto frames = alloc_object_frames(len);
  DataObject o;
  o.id = next_id_++;
  o.len = len;
  o.type = type;
  o.frames = frames.value;
  o.writer = writer;
  for (std::size_t i = 0; i < o.frames.size(); ++i) {
    mem_.map_page(PrivilegeLevel::monitor, kMonitorPid, object_vpn(o.id) + i, o.frames[i],
                  mm::PagePerms::monitor_only());
  }
  map_frames(writer, o, mm::kWriteOnly);
  o.writer_mapped = true;
  ObjectId id = o.id;
  objects_.emplace(id, std::move(o));
  return {id, frames.charge + mem_.cost_model().grant(frames.value.size())};
}

Charged<ObjectId> ObjectStore::create_input(ProcessId reader, ByteView bytes) {
  auto frames = alloc_object_frames(bytes.size());
  DataObject o;
  o.id = next_id_++;
  o.len = bytes.size();
  o.type = ObjectType::input;
  o.frames = frames.value;
  o.reader = reader;
  o.sealed = true;
  for (std::size_t i = 0; i < o.frames.size(); ++i) {
    std::size_t off = i * mm::kPageSize;
    mem_.monitor_write(o.frames[i], 0, bytes.subspan(off, std::min(mm::kPageSize, bytes.size() - off)));
    mem_.map_page(PrivilegeLevel::monitor, kMonitorPid, object_vpn(o.id) + i, o.frames[i],
                  mm::PagePerms::monitor_only());
  }
  map_frames(reader, o, mm::kReadOnly);
  o.reader_mapped = true;
  ObjectId id = o.id;
  objects_.emplace(id, std::move(o));
  return {id, frames.charge + mem_.cost_model().grant(frames.value.size())};
}

Charged<ObjectId> ObjectStore::attach_reader(ProcessId reader, ObjectId id) {
  DataObject& o = get_mut(id);
  if (o.reader == reader && o.reader_mapped) return {id, Micros(0)};
  if (o.writer == reader) fail(ErrorCode::already_attached, "writer cannot also attach as reader");
  if (o.reader && o.reader != reader) {
    fail(ErrorCode::already_attached, "object " + std::to_string(id) + " already has a reader");
  }
  if (!o.sized) fail(ErrorCode::invalid_state, "chain object has no contents yet");
  o.reader = reader;
  map_frames(reader, o, mm::kReadOnly);
  o.reader_mapped = true;
  return {id, mem_.cost_model().grant(o.frames.size())};
}

void ObjectStore::set_output(ProcessId caller, ObjectId id) {
  const DataObject& o = get(id);
  if (o.writer != caller) fail(ErrorCode::not_writer, "pid " + std::to_string(caller.value) + " is not the writer");
  output_[caller] = id;
}

std::optional<ObjectId> ObjectStore::output_of(ProcessId pid) const {
  auto it = output_.find(pid);
  if (it == output_.end()) return std::nullopt;
  return it->second;
}

void ObjectStore::clear_output(ProcessId pid) { output_.erase(pid); }

ObjectId ObjectStore::reserve_chain(ProcessId producer, ProcessId consumer) {
  if (producer == consumer) fail(ErrorCode::policy_violation, "a trustlet cannot chain to itself");
  if (pending_chain_.count(producer)) fail(ErrorCode::invalid_state, "producer already has a pending chain");
  DataObject o;
  o.id = next_id_++;
  o.type = ObjectType::chain;
  o.writer = producer;
  o.reader = consumer;
  o.sized = false;
  ObjectId id = o.id;
  objects_.emplace(id, std::move(o));
  pending_chain_[producer] = id;
  return id;
}

std::optional<ObjectId> ObjectStore::pending_chain_of(ProcessId producer) const {
  auto it = pending_chain_.find(producer);
  if (it == pending_chain_.end()) return std::nullopt;
  return it->second;
}

Charged<ObjectId> ObjectStore::complete_chain(ProcessId producer) {
  auto it = pending_chain_.find(producer);
  if (it == pending_chain_.end()) fail(ErrorCode::invalid_state, "no pending chain");
  ObjectId id = it->second;
  pending_chain_.erase(it);
  DataObject& o = get_mut(id);
  seal(id);
  o.sized = true;
  Micros charge = mem_.cost_model().grant(o.frames.size());
  map_frames(*o.reader, o, mm::kReadOnly);
  o.reader_mapped = true;
  return {id, charge};
}

void ObjectStore::seal(ObjectId id) {
  DataObject& o = get_mut(id);
  if (o.sealed) return;
  if (o.writer && o.writer_mapped) {
    unmap_frames(*o.writer, o);
    o.writer_mapped = false;
  }
  o.sealed = true;
}

Bytes ObjectStore::read(ObjectId id) const {
  const DataObject& o = get(id);
  Bytes out;
  out.reserve(o.len);
  for (auto f : o.frames) {
    auto page = mem_.frame_bytes(f);
    std::size_t n = std::min<std::size_t>(mm::kPageSize, o.len - out.size());
    out.insert(out.end(), page.begin(), page.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

void ObjectStore::release(ObjectId id) {
  auto it = objects_.find(id);
  if (it == objects_.end()) return;
  DataObject& o = it->second;
  if (o.writer && o.writer_mapped) unmap_frames(*o.writer, o);
  if (o.reader && o.reader_mapped) unmap_frames(*o.reader, o);
  unmap_frames(kMonitorPid, o);
  for (auto p = output_.begin(); p != output_.end();) {
    p = p->second == id ? output_.erase(p) : std::next(p);
  }
  for (auto p = pending_chain_.begin(); p != pending_chain_.end();) {
    p = p->second == id ? pending_chain_.erase(p) : std::next(p);
  }
  objects_.erase(it);
}

void ObjectStore::reclaim(ProcessId pid) {
  std::vector<ObjectId> dead;
  for (auto& [id, o] : objects_) {
    bool touched = false;
    if (o.writer == pid) {
      if (o.writer_mapped) unmap_frames(pid, o);
      o.writer_mapped = false;
      o.writer.reset();
      touched = true;
      // A pending chain without contents has nothing for its consumer.
      if (!o.sized) o.reader.reset();
    }
    if (o.reader == pid) {
      if (o.reader_mapped) unmap_frames(pid, o);
      o.reader_mapped = false;
      o.reader.reset();
      touched = true;
    }
    if (touched && !o.writer && !o.reader) dead.push_back(id);
  }
  pending_chain_.erase(pid);
  output_.erase(pid);
  for (ObjectId id : dead) release(id);
}

nlohmann::json ObjectStore::dump() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, o] : objects_) {
    nlohmann::json j{{"obj_id", id},
                     {"len", o.len},
                     {"otype", object_type_name(o.type)},
                     {"pages", o.frames.size()},
                     {"sealed", o.sealed}};
    j["writer"] = o.writer ? nlohmann::json(o.writer->value) : nlohmann::json(nullptr);
    j["reader"] = o.reader ? nlohmann::json(o.reader->value) : nlohmann::json(nullptr);
    arr.push_back(j);
  }
  return {{"objects", arr},
          {"counters",
           {{"payload_bytes_copied", counters_.payload_bytes_copied},
            {"crypto_ops", counters_.crypto_ops},
            {"fallback_copies", counters_.fallback_copies},
            {"fallback_hops", counters_.fallback_hops},
            {"colocated_fallbacks", counters_.colocated_fallbacks}}}};
}

}  // namespace wallet::objects
