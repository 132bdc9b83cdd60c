// Time-stepped reference for the simulator. Advances a 1 ms clock, finds
// completions by scanning every slot, and places work by scanning every node.
// Nothing here shares state or indexing with the event engine.

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "wallet/error.hpp"
#include "wallet/simulator.hpp"

namespace wallet::sim {

namespace {

struct Slot {
  bool used = false;
  double end = 0;
  std::size_t index = 0;
};

struct Entry {
  std::string app;
  std::string fn;
  std::uint64_t stamp = 0;
};

struct OracleNode {
  std::vector<Slot> slots;
  std::vector<Entry> cache;

  std::size_t busy() const {
    return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const Slot& s) { return s.used; }));
  }
  bool holds(const TraceEvent& e) const {
    return std::any_of(cache.begin(), cache.end(), [&](const Entry& c) { return c.app == e.app_id && c.fn == e.function_id; });
  }
  bool holds_app(const TraceEvent& e) const {
    return std::any_of(cache.begin(), cache.end(), [&](const Entry& c) { return c.app == e.app_id; });
  }
};

}  // namespace

SimStats oracle_simulate(const std::vector<TraceEvent>& trace, const SimConfig& config,
                         const VariantProfile& profile) {
  check_trace(trace);
  std::vector<OracleNode> nodes(config.nodes);
  for (auto& n : nodes) n.slots.resize(config.slots);
  BootSampler sampler(config.seed);
  std::uint64_t clock_stamp = 0;

  SimStats out;
  out.variant = std::string(variant_name(profile.name));
  out.invocations.resize(trace.size());
  std::vector<std::size_t> queue;  // FIFO, front at index 0
  std::size_t next_arrival = 0;
  std::size_t finished = 0;

  auto can_take = [&](const OracleNode& n) {
    if (n.busy() >= config.slots) return false;
    return !profile.per_node_instance_cap || n.busy() < *profile.per_node_instance_cap;
  };
  auto drop_oldest = [](OracleNode& n) {
    n.cache.erase(std::min_element(n.cache.begin(), n.cache.end(),
                                   [](const Entry& a, const Entry& b) { return a.stamp < b.stamp; }));
  };

  auto try_dispatch = [&](double now) {
    while (!queue.empty()) {
      const TraceEvent& e = trace[queue.front()];
      int chosen = -1;
      BootType boot = BootType::cold;
      for (std::size_t n = 0; n < nodes.size() && chosen < 0; ++n) {
        if (nodes[n].holds(e) && can_take(nodes[n])) chosen = static_cast<int>(n), boot = BootType::warm;
      }
      if (chosen < 0 && profile.lukewarm) {
        for (std::size_t n = 0; n < nodes.size() && chosen < 0; ++n) {
          if (nodes[n].holds_app(e) && can_take(nodes[n])) chosen = static_cast<int>(n);
        }
      }
      for (std::size_t n = 0; n < nodes.size() && chosen < 0; ++n) {
        if (can_take(nodes[n])) chosen = static_cast<int>(n);
      }
      if (chosen < 0) return;
      auto& node = nodes[static_cast<std::size_t>(chosen)];
      if (boot != BootType::warm) {
        boot = node.holds(e) ? BootType::warm
               : (profile.lukewarm && node.holds_app(e)) ? BootType::lukewarm
                                                         : BootType::cold;
      }
      std::size_t i = queue.front();
      queue.erase(queue.begin());
      auto& r = out.invocations[i];
      r.invocation_id = e.invocation_id;
      r.node = static_cast<std::uint32_t>(chosen);
      r.boot = boot;
      r.arrival_ms = e.arrival_ms;
      r.start_ms = now;
      r.wait_ms = now - e.arrival_ms;
      r.duration_ms = e.duration_ms;
      r.boot_ms = sampler.sample(boot == BootType::warm       ? profile.warm
                                 : boot == BootType::lukewarm ? *profile.lukewarm
                                                              : profile.cold);
      if (boot != BootType::warm && profile.per_node_instance_cap) {
        while (!node.cache.empty() && node.busy() + node.cache.size() + 1 > *profile.per_node_instance_cap) {
          drop_oldest(node);
        }
      }
      for (auto& s : node.slots) {
        if (!s.used) {
          s = {true, r.end_ms(), i};
          break;
        }
      }
    }
  };

  auto finish = [&](std::size_t node_index, Slot& s) {
    s.used = false;
    ++finished;
    if (config.cache_size == 0) return;
    auto& node = nodes[node_index];
    const TraceEvent& e = trace[s.index];
    ++clock_stamp;
    for (auto& c : node.cache) {
      if (c.app == e.app_id && c.fn == e.function_id) {
        c.stamp = clock_stamp;
        return;
      }
    }
    if (node.cache.size() == config.cache_size) drop_oldest(node);
    node.cache.push_back({e.app_id, e.function_id, clock_stamp});
  };

  for (std::int64_t tick = 0; finished < trace.size(); ++tick) {
    double hi = static_cast<double>(tick);
    // Work through everything that happens in (tick - 1, tick] in time order.
    for (;;) {
      double best_t = INFINITY;
      std::uint64_t best_id = 0;
      Slot* best_slot = nullptr;
      std::size_t best_node = 0;
      for (std::size_t n = 0; n < nodes.size(); ++n) {
        for (auto& s : nodes[n].slots) {
          if (!s.used || s.end > hi) continue;
          std::uint64_t id = trace[s.index].invocation_id;
          if (std::tie(s.end, id) < std::tie(best_t, best_id) || best_slot == nullptr) {
            best_t = s.end, best_id = id, best_slot = &s, best_node = n;
          }
        }
      }
      bool arrival_due = next_arrival < trace.size() && trace[next_arrival].arrival_ms <= hi;
      if (best_slot && (!arrival_due || best_t <= trace[next_arrival].arrival_ms)) {
        finish(best_node, *best_slot);
        try_dispatch(best_t);
      } else if (arrival_due) {
        queue.push_back(next_arrival);
        try_dispatch(trace[next_arrival].arrival_ms);
        ++next_arrival;
      } else {
        break;
      }
    }
    // Idle stretch: step straight to the tick holding the next event.
    double next_t = next_arrival < trace.size() ? trace[next_arrival].arrival_ms : INFINITY;
    for (const auto& n : nodes) {
      for (const auto& s : n.slots) {
        if (s.used) next_t = std::min(next_t, s.end);
      }
    }
    if (!std::isfinite(next_t)) {
      if (finished < trace.size()) fail(ErrorCode::invariant_error, "queued work can never be placed");
      break;
    }
    tick = std::max(tick, static_cast<std::int64_t>(std::ceil(next_t)) - 1);
  }
  out.summarize();
  return out;
}

}  // namespace wallet::sim
