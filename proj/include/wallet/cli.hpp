#pragma once

// Command implementations behind the `wallet` tool. Each command is a plain
// function over a config struct so tests can call it without a process.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "wallet/attestation.hpp"
#include "wallet/libos.hpp"
#include "wallet/monitor.hpp"
#include "wallet/simulator.hpp"
#include "wallet/trace_io.hpp"

namespace wallet::cli {

// {"allowed_zygotes": [hex], "allowed_functions": [hex], "chains": [[hex]]}
nlohmann::json policy_to_json(const attest::ProviderPolicy& p);
attest::ProviderPolicy policy_from_json(const nlohmann::json& j);

// ---- emulate ----

struct EmulateRequest {
  std::string function;
  Bytes input;
};

struct EmulateConfig {
  MonitorConfig monitor;
  // Defaults to a zero-padded image of zygote_bytes.
  std::optional<libos::ZygoteImage> zygote;
  std::uint64_t zygote_bytes = 4 * mm::kMiB;
  std::vector<libos::FunctionSpec> functions;
  // Defaults to exactly the zygote and functions above.
  std::optional<attest::ProviderPolicy> policy;
  std::vector<EmulateRequest> requests;
  std::uint64_t seed = 1;

  // Keys: monitor, zygote (path or {"bytes", "runtime_id", "init_cost_ms"}), functions
  // (paths or inline objects), policy (path or inline), requests [{"function", "input"}], seed.
  // Relative paths resolve against `base`.
  static EmulateConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  // Two functions ("echo", "shout") and three requests to "echo".
  static EmulateConfig defaults();
};

// Handshake, policy, then each request labeled cold (no zygote yet), lukewarm
// (zygote, no trustlet for the function) or warm (trustlet resident).
nlohmann::json emulate(const EmulateConfig& config);

// ---- chain ----

struct ChainConfig {
  std::size_t k = 2;
  std::uint64_t payload_bytes = 4096;
  // Fallback hops stay on one monitor instead of alternating between two.
  bool colocated = false;
  // Function index per position; empty means 0..k-1. Repeats form a cycle.
  std::vector<std::size_t> sequence;
  MonitorConfig monitor;
  std::uint64_t seed = 1;

  static ChainConfig from_json(const nlohmann::json& j);
  std::vector<std::size_t> positions() const;
};

// Runs the chain through data objects, then the same stages as encrypted fallback hops.
nlohmann::json chain(const ChainConfig& config);

// ---- density ----

struct DensityConfig {
  std::vector<std::uint32_t> counts{500};
  std::uint64_t zygote_bytes = 147 * mm::kMiB;
  std::vector<sim::VariantProfile> baselines;  // empty: CVM, VM, MicroVM, Container
  MonitorConfig monitor;
  std::uint64_t seed = 1;

  static DensityConfig from_json(const nlohmann::json& j);
};

// Wallet bytes come from the monitor's page accounting after creating n trustlets.
nlohmann::json density(const DensityConfig& config);
std::string density_csv(const nlohmann::json& table);

// ---- simulate ----

struct SimulateConfig {
  std::optional<std::filesystem::path> trace;
  trace::GeneratorSpec generator;  // used when no trace is given
  sim::SimConfig sim;

  // Keys: trace (path), generator (GeneratorSpec), sim (SimConfig). Relative paths resolve against `base`.
  static SimulateConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  std::vector<sim::TraceEvent> load() const;
};

std::vector<sim::SimStats> simulate(const SimulateConfig& config);

struct SweepAxis {
  std::string key;  // nodes, slots, cache or seed
  std::vector<std::uint64_t> values;
};
// "nodes=10,50,100"
SweepAxis parse_sweep(std::string_view text);
// One point per value, run on a thread pool; trace loaded once.
nlohmann::json sweep(const SimulateConfig& config, const SweepAxis& axis);

std::string stats_table(const std::vector<sim::SimStats>& stats);

// ---- attestation demo ----

struct AttestDemoConfig {
  MonitorConfig monitor;
  std::uint64_t zygote_bytes = 4 * mm::kMiB;
  std::string input = "attest me";
  std::uint64_t seed = 1;

  static AttestDemoConfig from_json(const nlohmann::json& j);
};

nlohmann::json attest_demo(const AttestDemoConfig& config);

// ---- entry point ----

// Exit status: 0, an ErrorCode value, 2 for usage errors, 1 for anything unexpected.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wallet::cli
