#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>

namespace wallet {

// Simulated time. Never wall-clock.
using Micros = std::chrono::microseconds;

class SimClock {
 public:
  Micros now() const { return now_; }
  void advance(Micros d) { now_ += d; }

 private:
  Micros now_{0};
};

template <class T>
struct Charged {
  T value;
  Micros charge{0};
};

struct ProcessId {
  std::uint32_t value = 0;
  auto operator<=>(const ProcessId&) const = default;
};

inline constexpr ProcessId kMonitorPid{0};
inline constexpr ProcessId kGuestPid{1};

struct ZygoteHandle {
  ProcessId pid;
  auto operator<=>(const ZygoteHandle&) const = default;
};

struct TrustletHandle {
  ProcessId pid;
  auto operator<=>(const TrustletHandle&) const = default;
};

using ObjectId = std::uint32_t;

enum class ObjectType : std::uint8_t { plain, input, output, chain };

// created -> initialized -> ready -> running -> (ready | terminated)
enum class ProcState : std::uint8_t { created, initialized, ready, running, terminated };

inline const char* state_name(ProcState s) {
  switch (s) {
    case ProcState::created: return "created";
    case ProcState::initialized: return "initialized";
    case ProcState::ready: return "ready";
    case ProcState::running: return "running";
    case ProcState::terminated: return "terminated";
  }
  return "?";
}

inline const char* object_type_name(ObjectType t) {
  switch (t) {
    case ObjectType::plain: return "plain";
    case ObjectType::input: return "input";
    case ObjectType::output: return "output";
    case ObjectType::chain: return "chain";
  }
  return "?";
}

}  // namespace wallet

template <>
struct std::hash<wallet::ProcessId> {
  std::size_t operator()(const wallet::ProcessId& p) const noexcept { return std::hash<std::uint32_t>{}(p.value); }
};
