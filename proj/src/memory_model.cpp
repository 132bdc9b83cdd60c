#include "wallet/memory_model.hpp"

#include <algorithm>
#include <cmath>
#include <new>
#include <unordered_set>

namespace wallet::mm {

namespace {

Micros ceil_us(double us) {
  // Guard against 24.0 * n landing a hair above an integer.
  double r = std::ceil(us - 1e-9);
  return Micros(static_cast<std::int64_t>(std::max(0.0, r)));
}

const Page& zero_page() {
  static const Page z{};
  return z;
}

bool all_zero(ByteView b) {
  return std::all_of(b.begin(), b.end(), [](std::uint8_t x) { return x == 0; });
}

}  // namespace

std::string_view level_name(PrivilegeLevel level) {
  switch (level) {
    case PrivilegeLevel::monitor: return "PL0";
    case PrivilegeLevel::process: return "PL1";
    case PrivilegeLevel::guest: return "PL2";
  }
  return "?";
}

std::string_view fault_name(FaultKind kind) {
  switch (kind) {
    case FaultKind::not_mapped: return "NotMapped";
    case FaultKind::permission_violation: return "PermissionViolation";
    case FaultKind::cow_fault: return "CowFault";
  }
  return "?";
}

// ---- CostModel ----

void CostModel::validate() const {
  const std::pair<const char*, double> rates[] = {
      {"validation_us_per_page", validation_us_per_page},
      {"hash_mb_per_s", hash_mb_per_s},
      {"cow_copy_us_per_page", cow_copy_us_per_page},
      {"transfer_us_per_mb", transfer_us_per_mb},
      {"transfer_fixed_us", transfer_fixed_us},
      {"crypto_mb_per_s", crypto_mb_per_s},
      {"page_grant_us", page_grant_us},
      {"context_switch_us", context_switch_us},
  };
  for (const auto& [name, v] : rates) {
    if (!(v > 0) || !std::isfinite(v)) fail(ErrorCode::config_invalid, std::string(name) + " must be positive");
  }
}

Micros CostModel::validation(std::uint64_t pages) const {
  return ceil_us(static_cast<double>(pages) * validation_us_per_page);
}

Micros CostModel::hash(std::uint64_t bytes) const {
  if (bytes == 0) return Micros(0);
  return ceil_us(static_cast<double>(bytes) / static_cast<double>(kMiB) / hash_mb_per_s * 1e6);
}

Micros CostModel::page_copy(std::uint64_t pages) const {
  return ceil_us(static_cast<double>(pages) * cow_copy_us_per_page);
}

Micros CostModel::transfer(std::uint64_t bytes) const {
  return ceil_us(transfer_fixed_us + static_cast<double>(bytes) / static_cast<double>(kMiB) * transfer_us_per_mb);
}

Micros CostModel::crypto(std::uint64_t bytes) const {
  return ceil_us(static_cast<double>(bytes) / static_cast<double>(kMiB) / crypto_mb_per_s * 1e6);
}

Micros CostModel::grant(std::uint64_t pages) const { return ceil_us(static_cast<double>(pages) * page_grant_us); }

Micros CostModel::context_switch() const { return ceil_us(context_switch_us); }

nlohmann::json CostModel::to_json() const {
  return {
      {"validation_us_per_page", validation_us_per_page},
      {"hash_mb_per_s", hash_mb_per_s},
      {"cow_copy_us_per_page", cow_copy_us_per_page},
      {"transfer_us_per_mb", transfer_us_per_mb},
      {"transfer_fixed_us", transfer_fixed_us},
      {"crypto_mb_per_s", crypto_mb_per_s},
      {"page_grant_us", page_grant_us},
      {"context_switch_us", context_switch_us},
  };
}

CostModel CostModel::from_json(const nlohmann::json& j) {
  CostModel m;
  if (!j.is_object()) fail(ErrorCode::config_invalid, "cost model must be a JSON object");
  auto take = [&](const char* key, double& field) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) fail(ErrorCode::config_invalid, std::string(key) + " must be a number");
    field = j[key].get<double>();
  };
  take("validation_us_per_page", m.validation_us_per_page);
  take("hash_mb_per_s", m.hash_mb_per_s);
  take("cow_copy_us_per_page", m.cow_copy_us_per_page);
  take("transfer_us_per_mb", m.transfer_us_per_mb);
  take("transfer_fixed_us", m.transfer_fixed_us);
  take("crypto_mb_per_s", m.crypto_mb_per_s);
  take("page_grant_us", m.page_grant_us);
  take("context_switch_us", m.context_switch_us);
  m.validate();
  return m;
}

// ---- PageTable ----

const PageEntry* PageTable::find(Vpn vpn) const {
  auto it = leaves_.find(vpn & ~Vpn{kLeafSlots - 1});
  if (it == leaves_.end()) return nullptr;
  const PageEntry& e = it->second->slots[vpn & (kLeafSlots - 1)];
  return e.present ? &e : nullptr;
}

PageEntry* PageTable::find_mutable(Vpn vpn) {
  auto it = leaves_.find(vpn & ~Vpn{kLeafSlots - 1});
  if (it == leaves_.end()) return nullptr;
  if (!it->second->slots[vpn & (kLeafSlots - 1)].present) return nullptr;
  if (it->second.use_count() > 1) it->second = std::make_shared<Leaf>(*it->second);
  return &it->second->slots[vpn & (kLeafSlots - 1)];
}

void PageTable::insert(Vpn vpn, const PageEntry& e) {
  auto& leaf = leaves_[vpn & ~Vpn{kLeafSlots - 1}];
  if (!leaf) {
    leaf = std::make_shared<Leaf>();
  } else if (leaf.use_count() > 1) {
    leaf = std::make_shared<Leaf>(*leaf);
  }
  PageEntry& slot = leaf->slots[vpn & (kLeafSlots - 1)];
  slot = e;
  slot.present = true;
  ++size_;
}

void PageTable::erase(Vpn vpn) {
  auto it = leaves_.find(vpn & ~Vpn{kLeafSlots - 1});
  if (it == leaves_.end()) return;
  if (it->second.use_count() > 1) it->second = std::make_shared<Leaf>(*it->second);
  it->second->slots[vpn & (kLeafSlots - 1)] = PageEntry{};
  --size_;
  bool empty = std::none_of(it->second->slots.begin(), it->second->slots.end(),
                            [](const PageEntry& s) { return s.present; });
  if (empty) leaves_.erase(it);
}

// ---- MemoryPool ----

std::uint64_t MemoryPool::free_frames() const {
  std::uint64_t n = recycled_.size();
  for (const auto& r : fresh_) n += r.end - r.begin;
  return n;
}

bool MemoryPool::prevalidated() const {
  return std::all_of(fresh_.begin(), fresh_.end(), [](const Range& r) { return r.validated; });
}

void MemoryPool::add_range(std::uint64_t pages, bool validated) {
  if (pages == 0) return;
  if (!fresh_.empty() && fresh_.back().end == next_id_ && fresh_.back().validated == validated) {
    fresh_.back().end += pages;
  } else {
    fresh_.push_back({next_id_, next_id_ + pages, validated});
  }
  next_id_ += pages;
}

std::pair<FrameId, bool> MemoryPool::take() {
  bool use_recycled = !recycled_.empty() && (fresh_.empty() || *recycled_.begin() < fresh_.front().begin);
  if (use_recycled) {
    FrameId id = *recycled_.begin();
    recycled_.erase(recycled_.begin());
    return {id, true};
  }
  Range& r = fresh_.front();
  FrameId id = r.begin++;
  bool validated = r.validated;
  if (r.begin == r.end) fresh_.pop_front();
  return {id, validated};
}

// ---- MemoryModel ----

MemoryModel::MemoryModel(CostModel model) : model_(model) { model_.validate(); }

Micros MemoryModel::preallocate(std::uint64_t bytes) {
  std::uint64_t pages = pages_for(bytes);
  pool_.add_range(pages, true);
  return model_.validation(pages);
}

void MemoryModel::add_capacity(std::uint64_t bytes) { pool_.add_range(pages_for(bytes), false); }

Charged<std::vector<FrameId>> MemoryModel::alloc_frames(std::size_t n) {
  if (pool_.free_frames() < n) {
    fail(ErrorCode::out_of_memory,
         "requested " + std::to_string(n) + " frames, " + std::to_string(pool_.free_frames()) + " free");
  }
  Charged<std::vector<FrameId>> out;
  std::uint64_t unvalidated = 0;
  try {
    out.value.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto [id, validated] = pool_.take();
      if (id >= frames_.size()) frames_.resize(std::max<std::size_t>(id + 1, frames_.size() * 3 / 2));
      Frame& f = frames_[id];
      f.id = id;
      f.allocated = true;
      f.ref_count = 0;
      f.writable_maps = 0;
      f.object = false;
      f.owner = PrivilegeLevel::guest;
      f.bytes.reset();
      if (!validated) ++unvalidated;
      f.validated = true;
      ++live_frames_;
      out.value.push_back(id);
    }
  } catch (const std::bad_alloc&) {
    fail(ErrorCode::out_of_host_memory, "host allocation failed while growing the frame store");
  }
  out.charge = model_.validation(unvalidated);
  pool_.charged_ += out.charge;
  return out;
}

void MemoryModel::release_unmapped(std::span<const FrameId> frames) {
  for (FrameId id : frames) {
    Frame& f = frame_mut(id);
    if (f.ref_count != 0) fail(ErrorCode::invalid_state, "frame " + std::to_string(id) + " is still mapped");
    f.allocated = false;
    f.bytes.reset();
    f.object = false;
    pool_.recycled_.insert(id);
    --live_frames_;
  }
}

Frame& MemoryModel::frame_mut(FrameId id) {
  if (id >= frames_.size() || !frames_[id].allocated) {
    fail(ErrorCode::invalid_argument, "frame " + std::to_string(id) + " does not exist");
  }
  return frames_[id];
}

const Frame& MemoryModel::frame(FrameId id) const {
  if (id >= frames_.size() || !frames_[id].allocated) {
    fail(ErrorCode::invalid_argument, "frame " + std::to_string(id) + " does not exist");
  }
  return frames_[id];
}

void MemoryModel::set_object_frame(FrameId id, bool object) {
  Frame& f = frame_mut(id);
  f.object = object;
  if (object) f.owner = PrivilegeLevel::process;
}

void MemoryModel::monitor_write(FrameId id, std::size_t offset, ByteView data) {
  if (offset + data.size() > kPageSize) fail(ErrorCode::invalid_argument, "write crosses a page boundary");
  Frame& f = frame_mut(id);
  if (!f.bytes) {
    if (all_zero(data)) return;
    f.bytes = std::make_unique<Page>();
    f.bytes->fill(0);
  }
  std::copy(data.begin(), data.end(), f.bytes->begin() + static_cast<std::ptrdiff_t>(offset));
}

ByteView MemoryModel::frame_bytes(FrameId id) const {
  const Frame& f = frame(id);
  const Page& p = f.bytes ? *f.bytes : zero_page();
  return ByteView(p.data(), p.size());
}

void MemoryModel::create_table(ProcessId owner, PrivilegeLevel level) {
  if (tables_.count(owner)) fail(ErrorCode::invalid_state, "page table already exists for pid " + std::to_string(owner.value));
  tables_.emplace(owner, PageTable(owner, level));
}

bool MemoryModel::has_table(ProcessId owner) const { return tables_.count(owner) != 0; }

const PageTable& MemoryModel::table(ProcessId owner) const {
  auto it = tables_.find(owner);
  if (it == tables_.end()) fail(ErrorCode::unknown_handle, "no page table for pid " + std::to_string(owner.value));
  return it->second;
}

PageTable& MemoryModel::table_mut(ProcessId owner) {
  auto it = tables_.find(owner);
  if (it == tables_.end()) fail(ErrorCode::unknown_handle, "no page table for pid " + std::to_string(owner.value));
  return it->second;
}

std::vector<ProcessId> MemoryModel::owners() const {
  std::vector<ProcessId> out;
  for (const auto& [pid, t] : tables_) out.push_back(pid);
  return out;
}

bool MemoryModel::writable_below_monitor(const PagePerms& p) {
  return p[PrivilegeLevel::process].write || p[PrivilegeLevel::guest].write;
}

void MemoryModel::add_ref(Frame& f, const PageEntry& e) {
  ++f.ref_count;
  if (writable_below_monitor(e.perms)) ++f.writable_maps;
}

void MemoryModel::drop_ref(FrameId id, const PageEntry& e) {
  Frame& f = frames_[id];
  --f.ref_count;
  if (writable_below_monitor(e.perms)) --f.writable_maps;
  if (f.ref_count == 0) {
    f.allocated = false;
    f.bytes.reset();
    f.object = false;
    pool_.recycled_.insert(id);
    --live_frames_;
  }
}

void MemoryModel::check_isolation(const PageTable& t, const Frame& f, const PagePerms& perms, bool extra_ref) const {
  bool guest_table = t.level() == PrivilegeLevel::guest;
  bool trusted_frame = (f.ref_count > 0 || f.object) && f.owner != PrivilegeLevel::guest;
  if (!guest_table && (perms[PrivilegeLevel::guest].read || perms[PrivilegeLevel::guest].write)) {
    fail(ErrorCode::permission_denied, "PL2 access requested in a trusted page table");
  }
  if (guest_table && trusted_frame) {
    fail(ErrorCode::permission_denied, "frame " + std::to_string(f.id) + " belongs to a trusted process");
  }
  if (f.object) return;
  // frames still shared after the change
  std::uint32_t refs = f.ref_count + (extra_ref ? 1 : 0);
  if (refs > 1 && (writable_below_monitor(perms) || f.writable_maps > (extra_ref ? 0u : 1u))) {
    fail(ErrorCode::permission_denied, "shared frame " + std::to_string(f.id) + " cannot be writable");
  }
}

void MemoryModel::map_page(PrivilegeLevel caller, ProcessId owner, Vpn vpn, FrameId frame_id, PagePerms perms,
                           bool cow) {
  if (caller != PrivilegeLevel::monitor) fail(ErrorCode::permission_denied, "only PL0 maps pages");
  PageTable& t = table_mut(owner);
  Frame& f = frame_mut(frame_id);
  if (t.find(vpn)) fail(ErrorCode::double_map, "vpn " + std::to_string(vpn) + " already mapped");
  perms[PrivilegeLevel::monitor] = kReadWrite;
  check_isolation(t, f, perms, true);
  if (f.ref_count == 0 && !f.object) f.owner = t.level();
  PageEntry e{frame_id, perms, cow, true};
  t.insert(vpn, e);
  add_ref(f, e);
}

void MemoryModel::unmap_page(PrivilegeLevel caller, ProcessId owner, Vpn vpn) {
  if (caller != PrivilegeLevel::monitor) fail(ErrorCode::permission_denied, "only PL0 unmaps pages");
  PageTable& t = table_mut(owner);
  const PageEntry* e = t.find(vpn);
  if (!e) fail(ErrorCode::invalid_argument, "vpn " + std::to_string(vpn) + " not mapped");
  PageEntry copy = *e;
  t.erase(vpn);
  drop_ref(copy.frame, copy);
}

void MemoryModel::set_access(PrivilegeLevel caller, ProcessId owner, Vpn vpn, PrivilegeLevel target, Access access) {
  if (!outranks(caller, target)) {
    fail(ErrorCode::permission_denied,
         std::string(level_name(caller)) + " cannot change " + std::string(level_name(target)) + " permissions");
  }
  PageTable& t = table_mut(owner);
  const PageEntry* cur = t.find(vpn);
  if (!cur) fail(ErrorCode::invalid_argument, "vpn " + std::to_string(vpn) + " not mapped");
  PagePerms next = cur->perms;
  next[target] = access;
  Frame& f = frames_[cur->frame];
  // Evaluate as if this entry were removed and re-added with the new perms.
  PageEntry old = *cur;
  --f.ref_count;
  if (writable_below_monitor(old.perms)) --f.writable_maps;
  try {
    check_isolation(t, f, next, true);
  } catch (...) {
    ++f.ref_count;
    if (writable_below_monitor(old.perms)) ++f.writable_maps;
    throw;
  }
  ++f.ref_count;
  if (writable_below_monitor(next)) ++f.writable_maps;
  PageEntry* e = t.find_mutable(vpn);
  e->perms = next;
  if (access.write && target == PrivilegeLevel::process) e->cow = false;
}

void MemoryModel::destroy_table(PrivilegeLevel caller, ProcessId owner) {
  if (caller != PrivilegeLevel::monitor) fail(ErrorCode::permission_denied, "only PL0 destroys page tables");
  auto it = tables_.find(owner);
  if (it == tables_.end()) fail(ErrorCode::unknown_handle, "no page table for pid " + std::to_string(owner.value));
  it->second.for_each([&](Vpn, const PageEntry& e) { drop_ref(e.frame, e); });
  tables_.erase(it);
}

FaultOr<ByteView> MemoryModel::access(ProcessId owner, PrivilegeLevel level, Vpn vpn, AccessKind kind) const {
  auto it = tables_.find(owner);
  if (it == tables_.end()) return PageFault{FaultKind::not_mapped, vpn};
  const PageEntry* e = it->second.find(vpn);
  if (!e) return PageFault{FaultKind::not_mapped, vpn};
  const Access& a = e->perms[level];
  const Frame& f = frames_[e->frame];
  if (kind == AccessKind::read) {
    if (!a.read) return PageFault{FaultKind::permission_violation, vpn};
  } else {
    if (!a.write) {
      if (e->cow && level == PrivilegeLevel::process) return PageFault{FaultKind::cow_fault, vpn};
      return PageFault{FaultKind::permission_violation, vpn};
    }
    if (f.ref_count > 1 && !f.object) return PageFault{FaultKind::cow_fault, vpn};
  }
  const Page& p = f.bytes ? *f.bytes : zero_page();
  return ByteView(p.data(), p.size());
}

std::optional<PageFault> MemoryModel::write(ProcessId owner, PrivilegeLevel level, Vpn vpn, std::size_t offset,
                                            ByteView data) {
  if (offset + data.size() > kPageSize) fail(ErrorCode::invalid_argument, "write crosses a page boundary");
  auto ok = access(owner, level, vpn, AccessKind::write);
  if (!ok) return ok.fault();
  Frame& f = frames_[tables_.at(owner).find(vpn)->frame];
  if (!f.bytes) {
    if (all_zero(data)) return std::nullopt;
    f.bytes = std::make_unique<Page>();
    f.bytes->fill(0);
  }
  std::copy(data.begin(), data.end(), f.bytes->begin() + static_cast<std::ptrdiff_t>(offset));
  return std::nullopt;
}

FaultOr<Bytes> MemoryModel::read_range(ProcessId owner, PrivilegeLevel level, Vpn first, std::size_t len) const {
  Bytes out;
  out.reserve(len);
  for (Vpn vpn = first; out.size() < len; ++vpn) {
    auto page = access(owner, level, vpn, AccessKind::read);
    if (!page) return page.fault();
    std::size_t n = std::min(kPageSize, len - out.size());
    out.insert(out.end(), page.value().begin(), page.value().begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

std::optional<PageFault> MemoryModel::write_range(ProcessId owner, PrivilegeLevel level, Vpn first, ByteView data) {
  std::size_t done = 0;
  for (Vpn vpn = first; done < data.size(); ++vpn) {
    std::size_t n = std::min(kPageSize, data.size() - done);
    if (auto fault = write(owner, level, vpn, 0, data.subspan(done, n))) return fault;
    done += n;
  }
  return std::nullopt;
}

void MemoryModel::seal(ProcessId owner) {
  PageTable& t = table_mut(owner);
  std::vector<Vpn> vpns;
  t.for_each([&](Vpn vpn, const PageEntry&) { vpns.push_back(vpn); });
  for (Vpn vpn : vpns) {
    PageEntry* e = t.find_mutable(vpn);
    if (e->perms[PrivilegeLevel::process].write) --frames_[e->frame].writable_maps;
    e->perms[PrivilegeLevel::process].write = false;
    e->cow = true;
  }
}

bool MemoryModel::is_sealed(ProcessId owner) const {
  bool sealed = true;
  table(owner).for_each([&](Vpn, const PageEntry& e) {
    if (e.perms[PrivilegeLevel::process].write) sealed = false;
  });
  return sealed;
}

Charged<std::size_t> MemoryModel::fork_cow(ProcessId base, ProcessId new_owner) {
  const PageTable& b = table(base);
  if (!is_sealed(base)) fail(ErrorCode::not_sealed, "base table of pid " + std::to_string(base.value) + " is writable");
  if (tables_.count(new_owner)) fail(ErrorCode::invalid_state, "page table already exists for pid " + std::to_string(new_owner.value));
  PageTable child(new_owner, b.level());
  child.leaves_ = b.leaves_;  // leaves shared until written
  child.size_ = b.size_;
  b.for_each([&](Vpn, const PageEntry& e) { add_ref(frames_[e.frame], e); });
  std::size_t n = child.size_;
  tables_.emplace(new_owner, std::move(child));
  return {n, Micros(0)};
}

void MemoryModel::copy_frame(FrameId from, FrameId to) {
  Frame& src = frames_[from];
  Frame& dst = frames_[to];
  if (src.bytes) {
    dst.bytes = std::make_unique<Page>(*src.bytes);
  } else {
    dst.bytes.reset();
  }
  bytes_copied_ += kPageSize;
}

Charged<std::size_t> MemoryModel::fork_copy(ProcessId base, ProcessId new_owner) {
  const PageTable& b = table(base);
  std::vector<std::pair<Vpn, PageEntry>> entries;
  entries.reserve(b.size());
  b.for_each([&](Vpn vpn, const PageEntry& e) { entries.emplace_back(vpn, e); });
  auto frames = alloc_frames(entries.size());
  create_table(new_owner, b.level());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    copy_frame(entries[i].second.frame, frames.value[i]);
    PagePerms perms = entries[i].second.perms;
    perms[PrivilegeLevel::process] = kReadWrite;
    map_page(PrivilegeLevel::monitor, new_owner, entries[i].first, frames.value[i], perms, false);
  }
  return {entries.size(), frames.charge + model_.page_copy(entries.size())};
}

Charged<FrameId> MemoryModel::resolve_cow(ProcessId owner, Vpn vpn) {
  PageTable& t = table_mut(owner);
  const PageEntry* cur = t.find(vpn);
  if (!cur) fail(ErrorCode::invalid_argument, "vpn " + std::to_string(vpn) + " not mapped");
  if (!cur->cow) fail(ErrorCode::invalid_state, "vpn " + std::to_string(vpn) + " is not copy-on-write");
  PageEntry old = *cur;
  Frame& f = frames_[old.frame];
  if (f.ref_count == 1) {
    // Last holder: take the frame over in place.
    PageEntry* e = t.find_mutable(vpn);
    e->perms[PrivilegeLevel::process] = kReadWrite;
    e->cow = false;
    ++f.writable_maps;
    return {old.frame, Micros(0)};
  }
  auto fresh = alloc_frames(1);
  FrameId nf = fresh.value[0];
  copy_frame(old.frame, nf);
  t.erase(vpn);
  drop_ref(old.frame, old);
  PagePerms perms = old.perms;
  perms[PrivilegeLevel::process] = kReadWrite;
  map_page(PrivilegeLevel::monitor, owner, vpn, nf, perms, false);
  return {nf, fresh.charge + model_.page_copy(1)};
}

Accounting MemoryModel::accounting(std::span<const ProcessId> owners) const {
  Accounting a;
  std::unordered_set<FrameId> seen;
  for (ProcessId pid : owners) {
    table(pid).for_each([&](Vpn, const PageEntry& e) {
      if (!seen.insert(e.frame).second) return;
      const Frame& f = frames_[e.frame];
      if (f.ref_count > 1 || e.cow) {
        a.shared_bytes += kPageSize;
      } else if (e.perms[PrivilegeLevel::process].read || e.perms[PrivilegeLevel::process].write) {
        a.exclusive_bytes += kPageSize;
      }
    });
  }
  a.total_resident_bytes = a.shared_bytes + a.exclusive_bytes;
  return a;
}

std::uint64_t MemoryModel::total_ref_count() const {
  std::uint64_t n = 0;
  for (const auto& f : frames_) {
    if (f.allocated) n += f.ref_count;
  }
  return n;
}

std::uint64_t MemoryModel::total_entries() const {
  std::uint64_t n = 0;
  for (const auto& [pid, t] : tables_) n += t.size();
  return n;
}

}  // namespace wallet::mm
