#include "wallet/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <list>
#include <map>
#include <queue>
#include <set>
#include <unordered_map>

#include "wallet/error.hpp"

namespace wallet::sim {

// ---- sampling ----

std::uint64_t BootSampler::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double BootSampler::uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

double BootSampler::sample(const BootDist& d) {
  if (d.sigma <= 0) return d.mean_ms;
  double z = std::sqrt(-2.0 * std::log(uniform())) * std::cos(2.0 * M_PI * uniform());
  return d.mean_ms * std::exp(d.sigma * z - 0.5 * d.sigma * d.sigma);
}

// ---- names and profiles ----

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::CVM: return "CVM";
    case Variant::VM: return "VM";
    case Variant::MicroVM: return "MicroVM";
    case Variant::Container: return "Container";
    case Variant::Wallet: return "Wallet";
  }
  return "?";
}

Variant variant_from_name(std::string_view name) {
  for (auto v : {Variant::CVM, Variant::VM, Variant::MicroVM, Variant::Container, Variant::Wallet}) {
    if (variant_name(v) == name) return v;
  }
  fail(ErrorCode::config_invalid, "unknown variant " + std::string(name));
}

std::string_view boot_name(BootType b) {
  switch (b) {
    case BootType::cold: return "cold";
    case BootType::lukewarm: return "lukewarm";
    case BootType::warm: return "warm";
  }
  return "?";
}

namespace {

constexpr std::uint64_t kMiB = 1ull << 20;

void check_dist(const BootDist& d, std::string_view what) {
  if (!(d.mean_ms >= 0) || !(d.sigma >= 0) || !std::isfinite(d.mean_ms) || !std::isfinite(d.sigma)) {
    fail(ErrorCode::config_invalid, "bad boot distribution for " + std::string(what));
  }
}

nlohmann::json dist_json(const BootDist& d) { return {{"mean_ms", d.mean_ms}, {"sigma", d.sigma}}; }

BootDist dist_from(const nlohmann::json& j) {
  BootDist d;
  for (const auto& [k, v] : j.items()) {
    if (k == "mean_ms") d.mean_ms = v.get<double>();
    else if (k == "sigma") d.sigma = v.get<double>();
    else fail(ErrorCode::config_invalid, "unknown boot key " + k);
  }
  return d;
}

}  // namespace

void VariantProfile::validate() const {
  check_dist(cold, "cold");
  check_dist(warm, "warm");
  if (lukewarm) check_dist(*lukewarm, "lukewarm");
  if (lukewarm.has_value() != (name == Variant::Wallet)) {
    fail(ErrorCode::config_invalid, "lukewarm boot is defined only for Wallet");
  }
  if (per_node_instance_cap && *per_node_instance_cap == 0) fail(ErrorCode::config_invalid, "instance cap 0");
}

VariantProfile VariantProfile::defaults(Variant v) {
  VariantProfile p;
  p.name = v;
  p.warm = {0.5, 0};
  switch (v) {
    case Variant::CVM:
      p.cold = {8300, 0};
      p.per_function_memory = 336 * kMiB;
      p.per_node_instance_cap = 509;
      break;
    case Variant::VM:
      p.cold = {3700, 0};
      p.per_function_memory = 168 * kMiB;
      break;
    case Variant::MicroVM:
      p.cold = {1930, 0};
      p.per_function_memory = static_cast<std::uint64_t>(17.4 * kMiB);
      break;
    case Variant::Container:
      p.cold = {1930, 0};
      p.per_function_memory = static_cast<std::uint64_t>(17.4 * kMiB);
      break;
    case Variant::Wallet:
      p.cold = {2380, 0};
      p.lukewarm = BootDist{10.3, 0};
      p.per_function_memory = 60 * 1024;
      break;
  }
  return p;
}

nlohmann::json VariantProfile::to_json() const {
  nlohmann::json j{{"name", variant_name(name)},
                   {"cold", dist_json(cold)},
                   {"warm", dist_json(warm)},
                   {"per_function_memory", per_function_memory}};
  if (lukewarm) j["lukewarm"] = dist_json(*lukewarm);
  if (per_node_instance_cap) j["per_node_instance_cap"] = *per_node_instance_cap;
  return j;
}

// Missing fields fall back to the named variant's defaults.
VariantProfile VariantProfile::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("name")) fail(ErrorCode::config_invalid, "profile needs a name");
  VariantProfile p = defaults(variant_from_name(j.at("name").get<std::string>()));
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "name") continue;
      if (k == "cold") p.cold = dist_from(v);
      else if (k == "warm") p.warm = dist_from(v);
      else if (k == "lukewarm") p.lukewarm = v.is_null() ? std::nullopt : std::optional(dist_from(v));
      else if (k == "per_function_memory") p.per_function_memory = v.get<std::uint64_t>();
      else if (k == "per_node_instance_cap")
        p.per_node_instance_cap = v.is_null() ? std::nullopt : std::optional(v.get<std::uint32_t>());
      else fail(ErrorCode::config_invalid, "unknown profile key " + k);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, e.what());
  }
  p.validate();
  return p;
}

void SimConfig::validate() const {
  if (nodes == 0 || slots == 0) fail(ErrorCode::config_invalid, "nodes and slots must be positive");
  for (const auto& p : profiles) p.validate();
}

nlohmann::json SimConfig::to_json() const {
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : profiles) ps.push_back(p.to_json());
  return {{"nodes", nodes}, {"slots", slots}, {"cache_size", cache_size}, {"profiles", ps}, {"seed", seed}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c;
  bool have_profiles = false;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "nodes") c.nodes = v.get<std::uint32_t>();
      else if (k == "slots") c.slots = v.get<std::uint32_t>();
      else if (k == "cache_size") c.cache_size = v.get<std::uint32_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "profiles") {
        have_profiles = true;
        for (const auto& p : v) {
          c.profiles.push_back(p.is_string() ? VariantProfile::defaults(variant_from_name(p.get<std::string>()))
                                             : VariantProfile::from_json(p));
        }
      } else {
        fail(ErrorCode::config_invalid, "unknown sim key " + k);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, e.what());
  }
  if (!have_profiles) {
    for (auto v : {Variant::CVM, Variant::VM, Variant::Wallet}) c.profiles.push_back(VariantProfile::defaults(v));
  }
  c.validate();
  return c;
}

// ---- statistics ----

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) return 0;
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

void SimStats::summarize() {
  std::vector<double> delays, slows;
  delays.reserve(invocations.size());
  slows.reserve(invocations.size());
  cold = lukewarm = warm = 0;
  makespan_ms = 0;
  for (const auto& r : invocations) {
    delays.push_back(r.delay_ms());
    slows.push_back(r.slowdown());
    makespan_ms = std::max(makespan_ms, r.end_ms());
    switch (r.boot) {
      case BootType::cold: ++cold; break;
      case BootType::lukewarm: ++lukewarm; break;
      case BootType::warm: ++warm; break;
    }
  }
  p50_delay_ms = nearest_rank(delays, 0.50);
  p99_delay_ms = nearest_rank(delays, 0.99);
  p50_slowdown = nearest_rank(slows, 0.50);
  p99_slowdown = nearest_rank(std::move(slows), 0.99);
}

nlohmann::json SimStats::summary_json() const {
  return {{"variant", variant},         {"p50_delay_ms", p50_delay_ms}, {"p99_delay_ms", p99_delay_ms},
          {"p50_slowdown", p50_slowdown}, {"p99_slowdown", p99_slowdown}, {"cold", cold},
          {"lukewarm", lukewarm},       {"warm", warm},                 {"makespan_ms", makespan_ms}};
}

void check_trace(const std::vector<TraceEvent>& trace) {
  if (trace.empty()) fail(ErrorCode::empty_trace, "trace has no invocations");
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& e = trace[i];
    if (!(e.arrival_ms >= 0) || !std::isfinite(e.arrival_ms)) {
      fail(ErrorCode::invariant_error, "negative arrival for invocation " + std::to_string(e.invocation_id));
    }
    if (!(e.duration_ms > 0) || !std::isfinite(e.duration_ms)) {
      fail(ErrorCode::invariant_error, "non-positive duration for invocation " + std::to_string(e.invocation_id));
    }
    if (i > 0) {
      const auto& p = trace[i - 1];
      if (std::tie(p.arrival_ms, p.invocation_id) >= std::tie(e.arrival_ms, e.invocation_id)) {
        fail(ErrorCode::invariant_error, "trace not sorted by (arrival, id) at index " + std::to_string(i));
      }
    }
  }
}

std::uint32_t max_occupancy(const SimStats& stats, std::uint32_t nodes) {
  // +1 at start, -1 at end; ends sort before starts at the same instant.
  std::vector<std::vector<std::pair<double, int>>> edges(nodes);
  for (const auto& r : stats.invocations) {
    edges.at(r.node).push_back({r.start_ms, +1});
    edges.at(r.node).push_back({r.end_ms(), -1});
  }
  int peak = 0;
  for (auto& e : edges) {
    std::sort(e.begin(), e.end());
    int cur = 0;
    for (const auto& [t, d] : e) peak = std::max(peak, cur += d);
  }
  return static_cast<std::uint32_t>(peak);
}

// ---- event-driven engine ----

namespace {

class Engine {
 public:
  Engine(const std::vector<TraceEvent>& trace, const SimConfig& config, const VariantProfile& profile)
      : trace_(trace), cfg_(config), prof_(profile), sampler_(config.seed), nodes_(config.nodes) {
    intern();
    for (std::uint32_t n = 0; n < cfg_.nodes; ++n) free_nodes_.insert(n);
    out_.variant = std::string(variant_name(prof_.name));
    out_.invocations.resize(trace_.size());
  }

  SimStats run() {
    std::size_t next_arrival = 0;
    while (next_arrival < trace_.size() || !running_.empty()) {
      bool take_completion = !running_.empty() &&
                             (next_arrival >= trace_.size() || running_.top().end <= trace_[next_arrival].arrival_ms);
      if (take_completion) {
        Completion c = running_.top();
        running_.pop();
        complete(c);
        dispatch(c.end);
      } else {
        std::size_t i = next_arrival++;
        queue_.push_back(i);
        dispatch(trace_[i].arrival_ms);
      }
    }
    if (!queue_.empty()) fail(ErrorCode::invariant_error, "queued work can never be placed");
    out_.summarize();
    return std::move(out_);
  }

 private:
  struct Completion {
    double end;
    std::uint64_t id;
    std::size_t index;
    bool operator>(const Completion& o) const { return std::tie(end, id) > std::tie(o.end, o.id); }
  };
  struct NodeState {
    std::uint32_t busy = 0;
    std::list<std::uint32_t> lru;  // front = most recently used
    std::unordered_map<std::uint32_t, std::list<std::uint32_t>::iterator> where;
    std::unordered_map<std::uint32_t, std::uint32_t> apps;  // app -> cached entries
  };

  void intern() {
    std::unordered_map<std::string, std::uint32_t> apps;
    std::map<std::pair<std::string_view, std::string_view>, std::uint32_t> fns;
    fn_of_.reserve(trace_.size());
    for (const auto& e : trace_) {
      auto a = apps.emplace(e.app_id, static_cast<std::uint32_t>(apps.size())).first->second;
      auto f = fns.emplace(std::pair<std::string_view, std::string_view>(e.app_id, e.function_id),
                           static_cast<std::uint32_t>(fns.size()))
                   .first->second;
      fn_of_.push_back(f);
      if (app_of_fn_.size() <= f) app_of_fn_.resize(f + 1);
      app_of_fn_[f] = a;
    }
  }

  bool has_slot(std::uint32_t n) const { return nodes_[n].busy < cfg_.slots; }

  // Running instances count against the cap; idle cached ones are evicted to make room.
  bool admits(std::uint32_t n) const {
    if (!has_slot(n)) return false;
    return !prof_.per_node_instance_cap || nodes_[n].busy < *prof_.per_node_instance_cap;
  }

  // Lowest-id node in `candidates` that can take the invocation.
  std::optional<std::uint32_t> first_admitting(const std::set<std::uint32_t>& candidates) const {
    for (auto n : candidates) {
      if (admits(n)) return n;
    }
    return std::nullopt;
  }

  std::optional<std::pair<std::uint32_t, BootType>> place(std::uint32_t fn) const {
    if (auto it = cached_fn_.find(fn); it != cached_fn_.end()) {
      if (auto n = first_admitting(it->second)) return std::pair{*n, BootType::warm};
    }
    if (prof_.lukewarm) {
      if (auto it = cached_app_.find(app_of_fn_[fn]); it != cached_app_.end()) {
        if (auto n = first_admitting(it->second)) return std::pair{*n, classify(*n, fn)};
      }
    }
    if (auto n = first_admitting(free_nodes_)) return std::pair{*n, classify(*n, fn)};
    return std::nullopt;
  }

  BootType classify(std::uint32_t n, std::uint32_t fn) const {
    const auto& node = nodes_[n];
    if (node.where.count(fn)) return BootType::warm;
    if (prof_.lukewarm && node.apps.count(app_of_fn_[fn])) return BootType::lukewarm;
    return BootType::cold;
  }

  void dispatch(double now) {
    while (!queue_.empty()) {
      std::size_t i = queue_.front();
      auto where = place(fn_of_[i]);
      if (!where) return;
      queue_.pop_front();
      auto [n, boot] = *where;
      const auto& e = trace_[i];
      auto& rec = out_.invocations[i];
      rec.invocation_id = e.invocation_id;
      rec.node = n;
      rec.boot = boot;
      rec.arrival_ms = e.arrival_ms;
      rec.start_ms = now;
      rec.wait_ms = now - e.arrival_ms;
      rec.duration_ms = e.duration_ms;
      const BootDist& d = boot == BootType::warm ? prof_.warm : boot == BootType::lukewarm ? *prof_.lukewarm : prof_.cold;
      rec.boot_ms = sampler_.sample(d);
      if (boot != BootType::warm && prof_.per_node_instance_cap) {
        auto& node = nodes_[n];
        while (!node.lru.empty() && node.busy + node.lru.size() + 1 > *prof_.per_node_instance_cap) evict(n);
      }
      if (++nodes_[n].busy == cfg_.slots) free_nodes_.erase(n);
      running_.push({rec.end_ms(), e.invocation_id, i});
    }
  }

  void complete(const Completion& c) {
    std::uint32_t n = out_.invocations[c.index].node;
    auto& node = nodes_[n];
    if (node.busy-- == cfg_.slots) free_nodes_.insert(n);
    touch(n, fn_of_[c.index]);
  }

  void evict(std::uint32_t n) {
    auto& node = nodes_[n];
    std::uint32_t victim = node.lru.back();
    node.lru.pop_back();
    node.where.erase(victim);
    cached_fn_[victim].erase(n);
    std::uint32_t app = app_of_fn_[victim];
    if (--node.apps[app] == 0) {
      node.apps.erase(app);
      cached_app_[app].erase(n);
    }
  }

  void touch(std::uint32_t n, std::uint32_t fn) {
    if (cfg_.cache_size == 0) return;
    auto& node = nodes_[n];
    if (auto it = node.where.find(fn); it != node.where.end()) {
      node.lru.splice(node.lru.begin(), node.lru, it->second);
      return;
    }
    if (node.lru.size() == cfg_.cache_size) evict(n);
    node.lru.push_front(fn);
    node.where[fn] = node.lru.begin();
    cached_fn_[fn].insert(n);
    if (node.apps[app_of_fn_[fn]]++ == 0) cached_app_[app_of_fn_[fn]].insert(n);
  }

  const std::vector<TraceEvent>& trace_;
  const SimConfig& cfg_;
  const VariantProfile& prof_;
  BootSampler sampler_;
  std::vector<NodeState> nodes_;
  std::vector<std::uint32_t> fn_of_;
  std::vector<std::uint32_t> app_of_fn_;
  std::unordered_map<std::uint32_t, std::set<std::uint32_t>> cached_fn_;
  std::unordered_map<std::uint32_t, std::set<std::uint32_t>> cached_app_;
  std::set<std::uint32_t> free_nodes_;
  std::deque<std::size_t> queue_;
  std::priority_queue<Completion, std::vector<Completion>, std::greater<>> running_;
  SimStats out_;
};

}  // namespace

SimStats simulate_variant(const std::vector<TraceEvent>& trace, const SimConfig& config,
                          const VariantProfile& profile) {
  check_trace(trace);
  config.validate();
  profile.validate();
  return Engine(trace, config, profile).run();
}

std::vector<SimStats> simulate(const std::vector<TraceEvent>& trace, const SimConfig& config) {
  check_trace(trace);
  std::vector<SimStats> out;
  for (const auto& p : config.profiles) out.push_back(simulate_variant(trace, config, p));
  return out;
}

}  // namespace wallet::sim
