#include <gtest/gtest.h>

#include "support/memory_fuzz.hpp"

using namespace wallet;
using namespace wallet::mm;

TEST(MemoryProperties, PermissionMonotonicityAndConservation) {
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    auto bad = fuzz::run_random_ops(seed, 24);
    ASSERT_TRUE(bad.empty()) << "seed " << seed << ": " << bad;
  }
}

TEST(MemoryProperties, CowIsolation) {
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    auto bad = fuzz::run_cow_isolation(seed, 12);
    ASSERT_TRUE(bad.empty()) << "seed " << seed << ": " << bad;
  }
}

TEST(MemoryProperties, ThousandChildWritesLeaveZygoteIntact) {
  auto bad = fuzz::run_cow_isolation(77, 1000);
  EXPECT_TRUE(bad.empty()) << bad;
}

TEST(MemoryProperties, ZeroCopyFork) {
  MemoryModel m;
  m.preallocate(256 * kPageSize);
  m.create_table(fuzz::kFuzzZygote, PrivilegeLevel::process);
  auto frames = m.alloc_frames(100).value;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    m.map_page(PrivilegeLevel::monitor, fuzz::kFuzzZygote, i, frames[i], PagePerms::process(kReadWrite));
  }
  m.seal(fuzz::kFuzzZygote);
  for (std::uint32_t c = 0; c < 50; ++c) {
    auto before = m.bytes_copied();
    m.fork_cow(fuzz::kFuzzZygote, ProcessId{200 + c});
    ASSERT_EQ(m.bytes_copied(), before);
  }
  EXPECT_EQ(m.frame(frames[0]).ref_count, 51u);
  EXPECT_TRUE(fuzz::check_structure(m).empty());
}

TEST(MemoryProperties, CostDeterminism) {
  auto run = [] {
    MemoryModel m;
    m.add_capacity(512 * kPageSize);
    Micros total{0};
    m.create_table(fuzz::kFuzzZygote, PrivilegeLevel::process);
    auto a = m.alloc_frames(64);
    total += a.charge;
    for (std::size_t i = 0; i < 64; ++i) {
      m.map_page(PrivilegeLevel::monitor, fuzz::kFuzzZygote, i, a.value[i], PagePerms::process(kReadWrite));
    }
    m.seal(fuzz::kFuzzZygote);
    m.fork_cow(fuzz::kFuzzZygote, ProcessId{300});
    for (Vpn v = 0; v < 64; v += 3) total += m.resolve_cow(ProcessId{300}, v).charge;
    total += m.fork_copy(fuzz::kFuzzZygote, ProcessId{301}).charge;
    return total.count();
  };
  auto first = run();
  EXPECT_EQ(first, run());
  // 64 + 22 + 64 unvalidated pages validated, 22 + 64 page copies
  EXPECT_EQ(first, (64 + 22 + 64) * 24 + (22 + 64) * 2);
}
