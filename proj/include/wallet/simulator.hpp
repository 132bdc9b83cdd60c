#pragma once

// Trace-driven scale-out simulator: nodes with fixed execution slots and LRU
// warm caches, per-variant boot profiles, FIFO admission.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace wallet::sim {

struct TraceEvent {
  std::uint64_t invocation_id = 0;
  std::string app_id;
  std::string function_id;
  double arrival_ms = 0;
  double duration_ms = 1;

  bool operator==(const TraceEvent&) const = default;
};

// Point mass at mean_ms unless sigma > 0, in which case log-normal with the same mean.
struct BootDist {
  double mean_ms = 0;
  double sigma = 0;

  bool operator==(const BootDist&) const = default;
};

// Seeded, platform-independent sampler (splitmix64 + Box-Muller).
class BootSampler {
 public:
  explicit BootSampler(std::uint64_t seed) : state_(seed) {}
  double sample(const BootDist& d);

 private:
  std::uint64_t next();
  double uniform();
  std::uint64_t state_;
};

enum class Variant : std::uint8_t { CVM, VM, MicroVM, Container, Wallet };
std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

enum class BootType : std::uint8_t { cold, lukewarm, warm };
std::string_view boot_name(BootType b);

struct VariantProfile {
  Variant name = Variant::CVM;
  BootDist cold;
  std::optional<BootDist> lukewarm;  // Wallet only
  BootDist warm;
  std::uint64_t per_function_memory = 0;
  std::optional<std::uint32_t> per_node_instance_cap;

  void validate() const;
  static VariantProfile defaults(Variant v);
  nlohmann::json to_json() const;
  static VariantProfile from_json(const nlohmann::json& j);
};

struct SimConfig {
  std::uint32_t nodes = 100;
  std::uint32_t slots = 32;
  std::uint32_t cache_size = 32;
  std::vector<VariantProfile> profiles;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

struct InvocationRecord {
  std::uint64_t invocation_id = 0;
  std::uint32_t node = 0;
  BootType boot = BootType::cold;
  double arrival_ms = 0;
  double start_ms = 0;  // dispatch
  double wait_ms = 0;
  double boot_ms = 0;
  double duration_ms = 0;

  double delay_ms() const { return wait_ms + boot_ms; }
  double end_ms() const { return start_ms + boot_ms + duration_ms; }
  // (queueing delay + boot-adjusted duration) / duration
  double slowdown() const { return (wait_ms + boot_ms + duration_ms) / duration_ms; }
};

struct SimStats {
  std::string variant;
  std::vector<InvocationRecord> invocations;  // trace order
  double p50_delay_ms = 0;
  double p99_delay_ms = 0;
  double p50_slowdown = 0;
  double p99_slowdown = 0;
  std::uint64_t cold = 0;
  std::uint64_t lukewarm = 0;
  std::uint64_t warm = 0;
  double makespan_ms = 0;

  // Fills percentiles, counts and makespan from invocations.
  void summarize();
  nlohmann::json summary_json() const;
};

// p-th nearest-rank order statistic: the ceil(q*n)-th smallest value.
double nearest_rank(std::vector<double> values, double q);

// EmptyTrace when empty; InvariantError on bad fields or when not sorted by (arrival, id).
void check_trace(const std::vector<TraceEvent>& trace);

// Event-driven engine for one variant.
SimStats simulate_variant(const std::vector<TraceEvent>& trace, const SimConfig& config,
                          const VariantProfile& profile);
// One SimStats per configured profile, same trace and seed for each.
std::vector<SimStats> simulate(const std::vector<TraceEvent>& trace, const SimConfig& config);

// Brute-force 1 ms time-stepping reference with the same policies. Small traces only.
SimStats oracle_simulate(const std::vector<TraceEvent>& trace, const SimConfig& config,
                         const VariantProfile& profile);

// Post-hoc checks over a finished run.
std::uint32_t max_occupancy(const SimStats& stats, std::uint32_t nodes);

}  // namespace wallet::sim
