#include "wallet/trace_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "wallet/error.hpp"

namespace wallet::trace {

namespace {

double uniform01(std::mt19937_64& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

double std_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

template <class T>
T parse_field(std::string_view s, std::size_t line, std::string_view what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    fail(ErrorCode::parse_error, "line " + std::to_string(line) + ": bad " + std::string(what) + " '" +
                                     std::string(s) + "'");
  }
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io_error, "cannot write " + path.string());
  return f;
}

void flush_or_fail(std::ofstream& f, const std::filesystem::path& path) {
  f.flush();
  if (!f) fail(ErrorCode::io_error, "write failed for " + path.string());
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) fail(ErrorCode::invalid_argument, "unformattable number");
  return std::string(buf, p);
}

// ---- generator ----

void GeneratorSpec::validate() const {
  if (n_functions == 0 || n_apps == 0) fail(ErrorCode::config_invalid, "function and app counts must be positive");
  if (!(duration_minutes > 0) || !(arrival_rate_per_s > 0)) {
    fail(ErrorCode::config_invalid, "duration and arrival rate must be positive");
  }
  if (!(popularity_zipf_s >= 0) || !(duration_sigma >= 0) || !std::isfinite(duration_mu)) {
    fail(ErrorCode::config_invalid, "bad distribution parameters");
  }
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"n_functions", n_functions},
          {"n_apps", n_apps},
          {"duration_minutes", duration_minutes},
          {"arrival_rate_per_s", arrival_rate_per_s},
          {"popularity_zipf_s", popularity_zipf_s},
          {"duration_lognormal", {{"mu", duration_mu}, {"sigma", duration_sigma}}},
          {"seed", seed}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec g;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "n_functions") g.n_functions = v.get<std::uint32_t>();
      else if (k == "n_apps") g.n_apps = v.get<std::uint32_t>();
      else if (k == "duration_minutes") g.duration_minutes = v.get<double>();
      else if (k == "arrival_rate_per_s") g.arrival_rate_per_s = v.get<double>();
      else if (k == "popularity_zipf_s") g.popularity_zipf_s = v.get<double>();
      else if (k == "seed") g.seed = v.get<std::uint64_t>();
      else if (k == "duration_lognormal") {
        g.duration_mu = v.at("mu").get<double>();
        g.duration_sigma = v.at("sigma").get<double>();
      } else {
        fail(ErrorCode::config_invalid, "unknown generator key " + k);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, e.what());
  }
  g.validate();
  return g;
}

std::vector<TraceEvent> generate_trace(const GeneratorSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<double> cdf(spec.n_functions);
  double total = 0;
  for (std::uint32_t k = 0; k < spec.n_functions; ++k) {
    total += 1.0 / std::pow(static_cast<double>(k + 1), spec.popularity_zipf_s);
    cdf[k] = total;
  }
  std::vector<std::string> fn_ids(spec.n_functions), app_ids(spec.n_apps);
  for (std::uint32_t k = 0; k < spec.n_functions; ++k) fn_ids[k] = "f" + std::to_string(k);
  for (std::uint32_t a = 0; a < spec.n_apps; ++a) app_ids[a] = "a" + std::to_string(a);

  const double horizon = spec.duration_minutes * 60'000.0;
  const double rate_per_ms = spec.arrival_rate_per_s / 1000.0;
  std::vector<TraceEvent> out;
  out.reserve(static_cast<std::size_t>(horizon * rate_per_ms * 1.01) + 16);
  double t = 0;
  for (;;) {
    t += -std::log(uniform01(rng)) / rate_per_ms;
    if (t >= horizon) break;
    double u = uniform01(rng) * total;
    auto k = static_cast<std::uint32_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, spec.n_functions - 1);
    double d = std::exp(spec.duration_mu + spec.duration_sigma * std_normal(rng));
    TraceEvent e;
    e.invocation_id = out.size();
    e.app_id = app_ids[k % spec.n_apps];
    e.function_id = fn_ids[k];
    e.arrival_ms = t;
    e.duration_ms = std::max(1.0, d);
    out.push_back(std::move(e));
  }
  return out;
}

// ---- CSV ----

std::vector<TraceEvent> parse_trace(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) fail(ErrorCode::parse_error, "line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) fail(ErrorCode::parse_error, "line 1: expected header " + std::string(kTraceHeader));
  std::vector<TraceEvent> out;
  std::unordered_set<std::uint64_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != 5) fail(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": expected 5 fields");
    TraceEvent e;
    e.invocation_id = parse_field<std::uint64_t>(f[0], lineno, "invocation_id");
    if (f[1].empty() || f[2].empty()) fail(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": empty id");
    e.app_id = std::string(f[1]);
    e.function_id = std::string(f[2]);
    e.arrival_ms = parse_field<double>(f[3], lineno, "arrival_ms");
    e.duration_ms = parse_field<double>(f[4], lineno, "duration_ms");
    if (!std::isfinite(e.arrival_ms) || e.arrival_ms < 0) {
      fail(ErrorCode::invariant_error, "line " + std::to_string(lineno) + ": negative arrival");
    }
    if (!std::isfinite(e.duration_ms) || e.duration_ms <= 0) {
      fail(ErrorCode::invariant_error, "line " + std::to_string(lineno) + ": non-positive duration");
    }
    if (!seen.insert(e.invocation_id).second) {
      fail(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": duplicate invocation_id " +
                                       std::to_string(e.invocation_id));
    }
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const TraceEvent& a, const TraceEvent& b) {
    return std::tie(a.arrival_ms, a.invocation_id) < std::tie(b.arrival_ms, b.invocation_id);
  });
  return out;
}

std::vector<TraceEvent> load_trace(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io_error, "cannot open " + path.string());
  return parse_trace(f);
}

void write_trace(const std::vector<TraceEvent>& trace, std::ostream& out) {
  out << kTraceHeader << '\n';
  for (const auto& e : trace) {
    out << e.invocation_id << ',' << e.app_id << ',' << e.function_id << ',' << format_number(e.arrival_ms) << ','
        << format_number(e.duration_ms) << '\n';
  }
}

void save_trace(const std::vector<TraceEvent>& trace, const std::filesystem::path& path) {
  auto f = open_out(path);
  write_trace(trace, f);
  flush_or_fail(f, path);
}

// ---- upstream conversion ----

void ColumnMap::validate() const {
  if (app.empty() || function.empty() || time.empty() || duration.empty()) {
    fail(ErrorCode::config_invalid, "column map needs app, function, time and duration");
  }
  if (id && id->empty()) fail(ErrorCode::config_invalid, "id column name is empty");
  if (!(time_unit_ms > 0) || !(duration_unit_ms > 0) || !(min_duration_ms > 0)) {
    fail(ErrorCode::config_invalid, "column map units must be positive");
  }
}

nlohmann::json ColumnMap::to_json() const {
  nlohmann::json j{{"app", app},
                   {"function", function},
                   {"time", time},
                   {"time_is_end", time_is_end},
                   {"duration", duration},
                   {"time_unit_ms", time_unit_ms},
                   {"duration_unit_ms", duration_unit_ms},
                   {"rebase", rebase},
                   {"min_duration_ms", min_duration_ms}};
  if (id) j["id"] = *id;
  return j;
}

ColumnMap ColumnMap::from_json(const nlohmann::json& j) {
  ColumnMap m;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "app") m.app = v.get<std::string>();
      else if (k == "function") m.function = v.get<std::string>();
      else if (k == "time") m.time = v.get<std::string>();
      else if (k == "time_is_end") m.time_is_end = v.get<bool>();
      else if (k == "duration") m.duration = v.get<std::string>();
      else if (k == "id") m.id = v.get<std::string>();
      else if (k == "time_unit_ms") m.time_unit_ms = v.get<double>();
      else if (k == "duration_unit_ms") m.duration_unit_ms = v.get<double>();
      else if (k == "rebase") m.rebase = v.get<bool>();
      else if (k == "min_duration_ms") m.min_duration_ms = v.get<double>();
      else fail(ErrorCode::config_invalid, "unknown column map key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, std::string("column map: ") + e.what());
  }
  m.validate();
  return m;
}

std::vector<TraceEvent> convert_trace(std::istream& in, const ColumnMap& map) {
  map.validate();
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::parse_error, "line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::parse_error, "line 1: no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_app = column(map.app), c_fn = column(map.function), c_time = column(map.time),
                    c_dur = column(map.duration);
  const std::optional<std::size_t> c_id = map.id ? std::optional(column(*map.id)) : std::nullopt;

  std::vector<TraceEvent> out;
  std::unordered_set<std::uint64_t> seen;
  std::size_t lineno = 1;
  std::uint64_t row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != header.size()) {
      fail(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                                       " fields");
    }
    TraceEvent e;
    e.invocation_id = c_id ? parse_field<std::uint64_t>(f[*c_id], lineno, *map.id) : row;
    ++row;
    if (f[c_app].empty() || f[c_fn].empty()) fail(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": empty id");
    e.app_id = std::string(f[c_app]);
    e.function_id = std::string(f[c_fn]);
    double t = parse_field<double>(f[c_time], lineno, map.time) * map.time_unit_ms;
    double d = parse_field<double>(f[c_dur], lineno, map.duration) * map.duration_unit_ms;
    if (!std::isfinite(t) || !std::isfinite(d) || d < 0) {
      fail(ErrorCode::invariant_error, "line " + std::to_string(lineno) + ": bad time or duration");
    }
    e.arrival_ms = map.time_is_end ? t - d : t;
    e.duration_ms = std::max(d, map.min_duration_ms);
    if (!seen.insert(e.invocation_id).second) {
      fail(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": duplicate id " + std::to_string(e.invocation_id));
    }
    out.push_back(std::move(e));
  }
  if (map.rebase && !out.empty()) {
    double t0 = std::min_element(out.begin(), out.end(), [](const TraceEvent& a, const TraceEvent& b) {
                  return a.arrival_ms < b.arrival_ms;
                })->arrival_ms;
    for (auto& e : out) e.arrival_ms -= t0;
  }
  for (const auto& e : out) {
    if (e.arrival_ms < 0) fail(ErrorCode::invariant_error, "negative arrival; enable rebase");
  }
  std::stable_sort(out.begin(), out.end(), [](const TraceEvent& a, const TraceEvent& b) {
    return std::tie(a.arrival_ms, a.invocation_id) < std::tie(b.arrival_ms, b.invocation_id);
  });
  return out;
}

std::vector<TraceEvent> convert_trace_file(const std::filesystem::path& path, const ColumnMap& map) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io_error, "cannot open " + path.string());
  return convert_trace(f, map);
}

// ---- stats ----

Format format_from_name(std::string_view name) {
  if (name == "json") return Format::json;
  if (name == "csv") return Format::csv;
  fail(ErrorCode::config_invalid, "format must be json or csv");
}

std::string render_stats(const std::vector<SimStats>& stats, Format format) {
  if (format == Format::json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : stats) arr.push_back(s.summary_json());
    return arr.dump(2) + "\n";
  }
  std::ostringstream o;
  o << kStatsColumns << '\n';
  for (const auto& s : stats) {
    o << s.variant << ',' << format_number(s.p50_delay_ms) << ',' << format_number(s.p99_delay_ms) << ','
      << format_number(s.p50_slowdown) << ',' << format_number(s.p99_slowdown) << ',' << s.cold << ',' << s.lukewarm
      << ',' << s.warm << ',' << format_number(s.makespan_ms) << '\n';
  }
  return o.str();
}

void write_stats(const std::vector<SimStats>& stats, const std::filesystem::path& path, Format format) {
  auto f = open_out(path);
  f << render_stats(stats, format);
  flush_or_fail(f, path);
}

std::vector<SimStats> parse_stats_json(std::string_view text) {
  std::vector<SimStats> out;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      SimStats s;
      s.variant = j.at("variant").get<std::string>();
      s.p50_delay_ms = j.at("p50_delay_ms").get<double>();
      s.p99_delay_ms = j.at("p99_delay_ms").get<double>();
      s.p50_slowdown = j.at("p50_slowdown").get<double>();
      s.p99_slowdown = j.at("p99_slowdown").get<double>();
      s.cold = j.at("cold").get<std::uint64_t>();
      s.lukewarm = j.at("lukewarm").get<std::uint64_t>();
      s.warm = j.at("warm").get<std::uint64_t>();
      s.makespan_ms = j.at("makespan_ms").get<double>();
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, e.what());
  }
  return out;
}

void write_invocations(const std::vector<SimStats>& stats, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << kInvocationColumns << '\n';
  for (const auto& s : stats) {
    for (const auto& r : s.invocations) {
      f << s.variant << ',' << r.invocation_id << ',' << r.node << ',' << sim::boot_name(r.boot) << ','
        << format_number(r.arrival_ms) << ',' << format_number(r.start_ms) << ',' << format_number(r.wait_ms) << ','
        << format_number(r.boot_ms) << ',' << format_number(r.delay_ms()) << ',' << format_number(r.duration_ms)
        << ',' << format_number(r.slowdown()) << '\n';
    }
  }
  flush_or_fail(f, path);
}

}  // namespace wallet::trace
