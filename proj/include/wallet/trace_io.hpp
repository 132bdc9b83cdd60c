#pragma once

// Trace CSV ingestion, the synthetic trace generator, and stats writers.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "wallet/simulator.hpp"

namespace wallet::trace {

using sim::SimStats;
using sim::TraceEvent;

inline constexpr std::string_view kTraceHeader = "invocation_id,app_id,function_id,arrival_ms,duration_ms";

struct GeneratorSpec {
  std::uint32_t n_functions = 4000;
  std::uint32_t n_apps = 400;
  double duration_minutes = 30;
  double arrival_rate_per_s = 60;
  double popularity_zipf_s = 1.0;
  double duration_mu = 6.0;  // of ln(duration_ms)
  double duration_sigma = 1.5;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

// Poisson arrivals at the aggregate rate, each assigned a function by Zipf rank.
// Function k belongs to app k mod n_apps. Durations log-normal, clipped to >= 1 ms.
std::vector<TraceEvent> generate_trace(const GeneratorSpec& spec);

// ParseError (with line number) on malformed rows or duplicate ids; InvariantError on
// negative or zero values. Output is stably sorted by (arrival, id).
std::vector<TraceEvent> parse_trace(std::istream& in);
std::vector<TraceEvent> load_trace(const std::filesystem::path& path);
void write_trace(const std::vector<TraceEvent>& trace, std::ostream& out);
void save_trace(const std::vector<TraceEvent>& trace, const std::filesystem::path& path);

// Maps an upstream per-invocation CSV (one row per call) onto TraceEvent. Column
// names are supplied by the caller; other columns are ignored.
struct ColumnMap {
  std::string app;
  std::string function;
  std::string time;  // arrival timestamp, or end timestamp when time_is_end
  bool time_is_end = false;
  std::string duration;
  std::optional<std::string> id;  // data-row index when absent
  double time_unit_ms = 1;        // ms per upstream time unit
  double duration_unit_ms = 1;
  bool rebase = true;             // shift so the earliest arrival is 0
  double min_duration_ms = 1;     // shorter (or zero) durations are raised to this

  void validate() const;
  nlohmann::json to_json() const;
  static ColumnMap from_json(const nlohmann::json& j);
};

// ParseError on a missing column, a short row or a non-numeric field. Output sorted by (arrival, id).
std::vector<TraceEvent> convert_trace(std::istream& in, const ColumnMap& map);
std::vector<TraceEvent> convert_trace_file(const std::filesystem::path& path, const ColumnMap& map);

enum class Format { json, csv };
Format format_from_name(std::string_view name);

// Summary columns, in this order, for both formats.
inline constexpr std::string_view kStatsColumns =
    "variant,p50_delay_ms,p99_delay_ms,p50_slowdown,p99_slowdown,cold,lukewarm,warm,makespan_ms";
inline constexpr std::string_view kInvocationColumns =
    "variant,invocation_id,node,boot_type,arrival_ms,start_ms,wait_ms,boot_ms,delay_ms,duration_ms,slowdown";

std::string render_stats(const std::vector<SimStats>& stats, Format format);
void write_stats(const std::vector<SimStats>& stats, const std::filesystem::path& path, Format format);
// Summary fields only; per-invocation records are not part of the JSON form.
std::vector<SimStats> parse_stats_json(std::string_view text);
void write_invocations(const std::vector<SimStats>& stats, const std::filesystem::path& path);

// Shortest decimal form that parses back to the same double.
std::string format_number(double v);

}  // namespace wallet::trace
