#include "wallet/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "wallet/error.hpp"
#include "wallet/scenario.hpp"

namespace wallet::cli {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io_error, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), {}};
}

nlohmann::json load_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, path.string() + ": " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void emit(const std::string& text, const std::optional<std::string>& out_path, std::ostream& out) {
  if (!out_path) {
    out << text;
    return;
  }
  std::ofstream f(*out_path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io_error, "cannot write " + *out_path);
  f << text;
  f.flush();
  if (!f) fail(ErrorCode::io_error, "write failed for " + *out_path);
}

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known, std::string_view what) {
  if (!j.is_object()) fail(ErrorCode::config_invalid, std::string(what) + " config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      fail(ErrorCode::config_invalid, "unknown " + std::string(what) + " key '" + k + "'");
    }
  }
}

template <class F>
auto json_guard(std::string_view what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, std::string(what) + ": " + e.what());
  }
}

std::string hex(const Digest& d) { return to_hex(view(d)); }

Digest digest_from_hex(const std::string& s) {
  if (s.size() != 128) fail(ErrorCode::config_invalid, "digest must be 128 hex characters");
  return array_from_hex<64>(s);
}

bool printable(ByteView b) {
  return std::all_of(b.begin(), b.end(), [](std::uint8_t c) { return c >= 0x20 && c < 0x7f; });
}

nlohmann::json bytes_json(ByteView b) {
  if (printable(b)) return to_string(b);
  return {{"hex", to_hex(b)}};
}

double ms(Micros d) { return static_cast<double>(d.count()) / 1000.0; }

double mib(std::uint64_t bytes) { return static_cast<double>(bytes) / static_cast<double>(mm::kMiB); }

attest::ProviderPolicy default_policy(const libos::ZygoteImage& z, const std::vector<libos::FunctionSpec>& fns) {
  attest::ProviderPolicy p;
  p.allowed_zygotes.insert(digest_of(z));
  for (const auto& f : fns) p.allowed_functions.insert(digest_of(f));
  return p;
}

libos::FunctionSpec stage(std::size_t i) {
  libos::FunctionSpec f;
  f.name = "stage" + std::to_string(i);
  f.steps = {libos::PipelineOp::identity()};
  return f;
}

Bytes random_payload(std::uint64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes b(n);
  for (auto& c : b) c = static_cast<std::uint8_t>(rng());
  return b;
}

struct CounterSnapshot {
  std::uint64_t copied = 0, crypto = 0, fallback_copies = 0, fallback_hops = 0, colocated = 0;

  static CounterSnapshot of(const std::vector<const Monitor*>& ms) {
    CounterSnapshot s;
    for (const auto* m : ms) {
      const auto& c = m->objects().counters();
      s.copied += c.payload_bytes_copied;
      s.crypto += c.crypto_ops;
      s.fallback_copies += c.fallback_copies;
      s.fallback_hops += c.fallback_hops;
      s.colocated += c.colocated_fallbacks;
    }
    return s;
  }
  nlohmann::json delta_json(const CounterSnapshot& before) const {
    return {{"payload_bytes_copied", copied - before.copied},
            {"crypto_ops", crypto - before.crypto},
            {"fallback_copies", fallback_copies - before.fallback_copies},
            {"fallback_hops", fallback_hops - before.fallback_hops},
            {"colocated_fallbacks", colocated - before.colocated}};
  }
};

crypto::SymmetricKey pinned_key(std::uint64_t seed) { return crypto::Rng(seed ^ 0x9e3779b97f4a7c15ull).bytes<32>(); }

}  // namespace

// ---- policy files ----

nlohmann::json policy_to_json(const attest::ProviderPolicy& p) {
  nlohmann::json z = nlohmann::json::array(), f = nlohmann::json::array(), c = nlohmann::json::array();
  for (const auto& d : p.allowed_zygotes) z.push_back(hex(d));
  for (const auto& d : p.allowed_functions) f.push_back(hex(d));
  for (const auto& chain : p.chains) {
    nlohmann::json one = nlohmann::json::array();
    for (const auto& d : chain) one.push_back(hex(d));
    c.push_back(one);
  }
  return {{"allowed_zygotes", z}, {"allowed_functions", f}, {"chains", c}};
}

attest::ProviderPolicy policy_from_json(const nlohmann::json& j) {
  check_keys(j, {"allowed_zygotes", "allowed_functions", "chains"}, "policy");
  return json_guard("policy", [&] {
    attest::ProviderPolicy p;
    for (const auto& d : j.value("allowed_zygotes", nlohmann::json::array())) {
      p.allowed_zygotes.insert(digest_from_hex(d.get<std::string>()));
    }
    for (const auto& d : j.value("allowed_functions", nlohmann::json::array())) {
      p.allowed_functions.insert(digest_from_hex(d.get<std::string>()));
    }
    for (const auto& chain : j.value("chains", nlohmann::json::array())) {
      std::vector<Digest> one;
      for (const auto& d : chain) one.push_back(digest_from_hex(d.get<std::string>()));
      p.chains.push_back(std::move(one));
    }
    p.validate();
    return p;
  });
}

// ---- emulate ----

EmulateConfig EmulateConfig::defaults() {
  EmulateConfig c;
  libos::FunctionSpec echo{"echo", {libos::PipelineOp::identity()}, 1};
  libos::FunctionSpec shout{"shout", {libos::PipelineOp::append("!"), libos::PipelineOp::uppercase()}, 2};
  c.functions = {echo, shout};
  for (int i = 0; i < 3; ++i) c.requests.push_back({"echo", to_bytes("hello")});
  return c;
}

EmulateConfig EmulateConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  check_keys(j, {"monitor", "zygote", "functions", "policy", "requests", "seed"}, "emulate");
  EmulateConfig c = defaults();
  return json_guard("emulate", [&] {
    if (j.contains("monitor")) c.monitor = MonitorConfig::from_json(j["monitor"]);
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("zygote")) {
      const auto& z = j["zygote"];
      if (z.is_string()) {
        c.zygote = libos::ZygoteImage::load(resolve(base, z.get<std::string>()));
      } else {
        check_keys(z, {"bytes", "runtime_id", "init_cost_ms"}, "zygote");
        c.zygote = sized_zygote(z.value("bytes", c.zygote_bytes), z.value("runtime_id", std::string("py-3.11")),
                                z.value("init_cost_ms", std::uint64_t{0}));
      }
    }
    if (j.contains("functions")) {
      c.functions.clear();
      for (const auto& f : j["functions"]) {
        c.functions.push_back(f.is_string() ? libos::FunctionSpec::load(resolve(base, f.get<std::string>()))
                                            : libos::FunctionSpec::from_json(f));
      }
      if (!j.contains("requests")) {
        c.requests.clear();
        if (!c.functions.empty()) {
          for (int i = 0; i < 3; ++i) c.requests.push_back({c.functions[0].name, to_bytes("hello")});
        }
      }
    }
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      c.policy = policy_from_json(p.is_string() ? load_json(resolve(base, p.get<std::string>())) : p);
    }
    if (j.contains("requests")) {
      c.requests.clear();
      for (const auto& r : j["requests"]) {
        check_keys(r, {"function", "input"}, "request");
        c.requests.push_back({r.at("function").get<std::string>(), to_bytes(r.value("input", std::string()))});
      }
    }
    return c;
  });
}

nlohmann::json emulate(const EmulateConfig& config) {
  if (config.functions.empty()) fail(ErrorCode::config_invalid, "emulate needs at least one function");
  auto image = std::make_shared<const libos::ZygoteImage>(config.zygote ? *config.zygote
                                                                         : sized_zygote(config.zygote_bytes));
  attest::ProviderPolicy policy = config.policy ? *config.policy : default_policy(*image, config.functions);

  Deployment dep(config.monitor, config.seed);
  Monitor& mon = dep.monitor();
  Micros t0 = mon.now();
  dep.install_policy(policy);
  nlohmann::json out;
  out["monitor"] = {{"measurement", hex(mon.measurement())}, {"boot_us", mon.boot_charge().count()}};
  out["handshake"] = {{"charge_us", (mon.now() - t0).count()}, {"policy_loaded", mon.has_policy()}};

  attest::UserClient user(config.seed + 101, dep.provider().function_public());
  user.pin_response_key(pinned_key(config.seed));
  std::optional<ZygoteHandle> zh;
  std::map<std::string, TrustletHandle> trustlets;
  nlohmann::json records = nlohmann::json::array(), labels = nlohmann::json::array();
  bool all_verified = true;

  for (std::size_t i = 0; i < config.requests.size(); ++i) {
    const auto& req = config.requests[i];
    auto fit = std::find_if(config.functions.begin(), config.functions.end(),
                            [&](const libos::FunctionSpec& f) { return f.name == req.function; });
    if (fit == config.functions.end()) fail(ErrorCode::config_invalid, "request names unknown function " + req.function);
    nlohmann::json rec{{"index", i}, {"function", req.function}};
    std::string label = "warm";
    Micros setup{0};
    if (!zh) {
      auto zc = mon.create_zygote(image);
      zh = zc.handle;
      setup += zc.charge;
      label = "cold";
      rec["zygote"] = {{"charge_us", zc.charge.count()},
                       {"measure_us", zc.measure.count()},
                       {"cache_hit", zc.cache_hit},
                       {"pages", zc.pages},
                       {"digest", hex(zc.digest)}};
    }
    auto tit = trustlets.find(req.function);
    if (tit == trustlets.end()) {
      if (label != "cold") label = "lukewarm";
      auto tc = mon.create_trustlet(*zh, *fit);
      setup += tc.charge;
      tit = trustlets.emplace(req.function, tc.handle).first;
      rec["trustlet"] = {{"charge_us", tc.charge.count()},
                         {"measure_us", tc.measure.count()},
                         {"bytes_hashed", tc.bytes_hashed},
                         {"cache_hit", tc.cache_hit}};
    }
    auto o = dep.invoke(tit->second, digest_of(*fit), req.input, user);
    if (o.result.recreated) tit->second = o.result.trustlet;
    const auto& m = o.result.metrics;
    Micros start = setup + (m.total - m.exec);
    rec["label"] = label;
    rec["start_us"] = start.count();
    rec["start_ms"] = ms(start);
    rec["invoke"] = m.to_json();
    rec["recreated"] = o.result.recreated;
    rec["output"] = bytes_json(o.plaintext);
    rec["verified"] = o.verified;
    rec["report"] = o.result.report.to_json();
    all_verified = all_verified && o.verified;
    labels.push_back(label);
    records.push_back(std::move(rec));
  }
  out["invocations"] = records;
  out["labels"] = labels;
  out["all_verified"] = all_verified;
  out["simulated_time_us"] = mon.now().count();
  return out;
}

// ---- chain ----

ChainConfig ChainConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"k", "payload_bytes", "colocated", "sequence", "monitor", "seed"}, "chain");
  return json_guard("chain", [&] {
    ChainConfig c;
    c.k = j.value("k", c.k);
    c.payload_bytes = j.value("payload_bytes", c.payload_bytes);
    c.colocated = j.value("colocated", c.colocated);
    c.seed = j.value("seed", c.seed);
    if (j.contains("sequence")) c.sequence = j["sequence"].get<std::vector<std::size_t>>();
    if (j.contains("monitor")) c.monitor = MonitorConfig::from_json(j["monitor"]);
    return c;
  });
}

std::vector<std::size_t> ChainConfig::positions() const {
  if (!sequence.empty()) return sequence;
  std::vector<std::size_t> p(k);
  for (std::size_t i = 0; i < k; ++i) p[i] = i;
  return p;
}

nlohmann::json chain(const ChainConfig& config) {
  auto pos = config.positions();
  if (pos.size() < 2) fail(ErrorCode::invalid_argument, "a chain needs at least two stages");
  std::size_t n_fns = *std::max_element(pos.begin(), pos.end()) + 1;
  std::vector<libos::FunctionSpec> fns;
  for (std::size_t i = 0; i < n_fns; ++i) fns.push_back(stage(i));
  auto image = std::make_shared<const libos::ZygoteImage>(sized_zygote(mm::kMiB));
  attest::ProviderPolicy policy = default_policy(*image, fns);
  std::vector<Digest> chain_digests;
  for (auto p : pos) chain_digests.push_back(digest_of(fns[p]));
  policy.chains.push_back(chain_digests);
  Bytes payload = random_payload(config.payload_bytes, config.seed);

  nlohmann::json out{{"k", pos.size()}, {"payload_bytes", config.payload_bytes}, {"colocated", config.colocated}};

  // Data-object path on one monitor.
  {
    Deployment dep(config.monitor, config.seed);
    dep.install_policy(policy);
    auto zh = dep.monitor().create_zygote(image).handle;
    std::vector<TrustletHandle> ts;
    for (auto p : pos) ts.push_back(dep.monitor().create_trustlet(zh, fns[p]).handle);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) dep.monitor().link_chain(ts[i], ts[i + 1]);
    attest::UserClient user(config.seed + 201, dep.provider().function_public());
    user.pin_response_key(pinned_key(config.seed));
    auto before = CounterSnapshot::of({&dep.monitor()});
    auto o = dep.invoke(ts[0], chain_digests[0], payload, user);
    auto j = CounterSnapshot::of({&dep.monitor()}).delta_json(before);
    j["latency_us"] = o.result.metrics.comm.count();
    j["total_us"] = o.result.metrics.total.count();
    j["hops"] = o.result.metrics.hops;
    j["verified"] = o.verified;
    j["output_matches"] = o.plaintext == payload;
    out["object_path"] = j;
  }

  // Fallback path: sealed envelopes, alternating between two monitors unless co-located.
  {
    Network net;
    std::vector<std::unique_ptr<Deployment>> deps;
    std::vector<ZygoteHandle> zhs;
    std::size_t n_monitors = config.colocated ? 1 : 2;
    for (std::size_t m = 0; m < n_monitors; ++m) {
      MonitorConfig mc = config.monitor;
      mc.monitor_id = "node-" + std::to_string(m);
      deps.push_back(std::make_unique<Deployment>(mc, config.seed));
      deps.back()->install_policy(policy);
      zhs.push_back(deps.back()->monitor().create_zygote(image).handle);
      net.attach(deps.back()->monitor());
    }
    std::vector<Network::Hop> hops;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      std::size_t m = i % n_monitors;
      hops.push_back({deps[m]->monitor().id(), deps[m]->monitor().create_trustlet(zhs[m], fns[pos[i]]).handle});
    }
    std::vector<const Monitor*> mons;
    for (const auto& d : deps) mons.push_back(&d->monitor());
    attest::UserClient user(config.seed + 202, deps[0]->provider().function_public());
    user.pin_response_key(pinned_key(config.seed));
    auto before = CounterSnapshot::of(mons);
    auto r = net.run_fallback_chain(hops, user.request(chain_digests[0], payload));
    auto opened = user.open_response(r.ciphertext);
    const auto& last = *deps[(pos.size() - 1) % n_monitors];
    bool verified = opened && attest::verify_report(r.report, last.expectations(user.last().nonce, payload));
    auto j = CounterSnapshot::of(mons).delta_json(before);
    j["latency_us"] = r.metrics.comm.count();
    j["total_us"] = r.metrics.total.count();
    j["hops"] = r.metrics.hops;
    j["verified"] = verified;
    j["output_matches"] = opened && *opened == payload;
    out["fallback"] = j;
  }
  double chain_us = out["object_path"]["latency_us"].get<double>();
  double fb_us = out["fallback"]["latency_us"].get<double>();
  out["latency_ratio"] = chain_us > 0 ? fb_us / chain_us : INFINITY;
  return out;
}

// ---- density ----

DensityConfig DensityConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"counts", "n", "zygote_bytes", "baselines", "monitor", "seed"}, "density");
  return json_guard("density", [&] {
    DensityConfig c;
    if (j.contains("counts")) c.counts = j["counts"].get<std::vector<std::uint32_t>>();
    if (j.contains("n")) c.counts = {j["n"].get<std::uint32_t>()};
    c.zygote_bytes = j.value("zygote_bytes", c.zygote_bytes);
    c.seed = j.value("seed", c.seed);
    if (j.contains("monitor")) c.monitor = MonitorConfig::from_json(j["monitor"]);
    if (j.contains("baselines")) {
      for (const auto& p : j["baselines"]) {
        c.baselines.push_back(p.is_string() ? sim::VariantProfile::defaults(sim::variant_from_name(p.get<std::string>()))
                                            : sim::VariantProfile::from_json(p));
      }
    }
    return c;
  });
}

nlohmann::json density(const DensityConfig& config) {
  auto counts = config.counts;
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  if (counts.empty() || counts.front() == 0) fail(ErrorCode::config_invalid, "density counts must be positive");
  auto baselines = config.baselines;
  if (baselines.empty()) {
    for (auto v : {sim::Variant::CVM, sim::Variant::VM, sim::Variant::MicroVM, sim::Variant::Container}) {
      baselines.push_back(sim::VariantProfile::defaults(v));
    }
  }

  std::vector<libos::FunctionSpec> fns;
  for (std::uint32_t i = 0; i < counts.back(); ++i) {
    fns.push_back({"fn" + std::to_string(i), {libos::PipelineOp::identity()}, 0});
  }
  auto image = std::make_shared<const libos::ZygoteImage>(sized_zygote(config.zygote_bytes));
  Deployment dep(config.monitor, config.seed);
  dep.install_policy(default_policy(*image, fns));
  auto zh = dep.monitor().create_zygote(image).handle;
  auto zygote_only = dep.monitor().accounting();

  nlohmann::json rows = nlohmann::json::array();
  std::uint32_t created = 0;
  for (auto n : counts) {
    while (created < n) dep.monitor().create_trustlet(zh, fns[created++]);
    auto acc = dep.monitor().accounting();
    nlohmann::json row{{"n", n},
                       {"wallet",
                        {{"bytes", acc.total_resident_bytes},
                         {"mib", mib(acc.total_resident_bytes)},
                         {"shared_bytes", acc.shared_bytes},
                         {"exclusive_bytes", acc.exclusive_bytes},
                         {"per_trustlet_bytes", (acc.total_resident_bytes - zygote_only.total_resident_bytes) / n}}}};
    nlohmann::json bs = nlohmann::json::array();
    for (const auto& p : baselines) {
      std::uint64_t bytes = static_cast<std::uint64_t>(n) * p.per_function_memory;
      nlohmann::json b{{"variant", sim::variant_name(p.name)},
                       {"bytes", bytes},
                       {"mib", mib(bytes)},
                       {"ratio", static_cast<double>(bytes) / static_cast<double>(acc.total_resident_bytes)}};
      if (p.per_node_instance_cap) {
        b["per_node_instance_cap"] = *p.per_node_instance_cap;
        b["nodes_needed"] = (n + *p.per_node_instance_cap - 1) / *p.per_node_instance_cap;
      }
      bs.push_back(b);
    }
    row["baselines"] = bs;
    rows.push_back(row);
  }
  return {{"zygote_bytes", config.zygote_bytes},
          {"zygote_resident_bytes", zygote_only.total_resident_bytes},
          {"cow", config.monitor.cow},
          {"rows", rows}};
}

std::string density_csv(const nlohmann::json& table) {
  std::ostringstream o;
  o << "n,variant,bytes,mib,ratio\n";
  for (const auto& row : table.at("rows")) {
    auto n = row.at("n").get<std::uint64_t>();
    const auto& w = row.at("wallet");
    o << n << ",Wallet," << w.at("bytes").get<std::uint64_t>() << ',' << trace::format_number(w.at("mib").get<double>())
      << ",1\n";
    for (const auto& b : row.at("baselines")) {
      o << n << ',' << b.at("variant").get<std::string>() << ',' << b.at("bytes").get<std::uint64_t>() << ','
        << trace::format_number(b.at("mib").get<double>()) << ',' << trace::format_number(b.at("ratio").get<double>())
        << '\n';
    }
  }
  return o.str();
}

// ---- simulate ----

SimulateConfig SimulateConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  check_keys(j, {"trace", "generator", "sim"}, "simulate");
  return json_guard("simulate", [&] {
    SimulateConfig c;
    if (j.contains("trace")) c.trace = resolve(base, j["trace"].get<std::string>());
    if (j.contains("generator")) c.generator = trace::GeneratorSpec::from_json(j["generator"]);
    if (j.contains("sim")) c.sim = sim::SimConfig::from_json(j["sim"]);
    else c.sim = sim::SimConfig::from_json(nlohmann::json::object());
    return c;
  });
}

std::vector<sim::TraceEvent> SimulateConfig::load() const {
  return trace ? trace::load_trace(*trace) : trace::generate_trace(generator);
}

std::vector<sim::SimStats> simulate(const SimulateConfig& config) { return sim::simulate(config.load(), config.sim); }

SweepAxis parse_sweep(std::string_view text) {
  auto eq = text.find('=');
  if (eq == std::string_view::npos) fail(ErrorCode::config_invalid, "sweep must look like key=v1,v2");
  SweepAxis a;
  a.key = std::string(text.substr(0, eq));
  if (a.key != "nodes" && a.key != "slots" && a.key != "cache" && a.key != "seed") {
    fail(ErrorCode::config_invalid, "sweep key must be nodes, slots, cache or seed");
  }
  std::string_view rest = text.substr(eq + 1);
  while (!rest.empty()) {
    auto comma = rest.find(',');
    auto item = rest.substr(0, comma);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      fail(ErrorCode::config_invalid, "bad sweep value '" + std::string(item) + "'");
    }
    a.values.push_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  if (a.values.empty()) fail(ErrorCode::config_invalid, "sweep has no values");
  return a;
}

nlohmann::json sweep(const SimulateConfig& config, const SweepAxis& axis) {
  const auto trace = config.load();
  auto point = [&](std::uint64_t v) {
    sim::SimConfig c = config.sim;
    if (axis.key == "nodes") c.nodes = static_cast<std::uint32_t>(v);
    else if (axis.key == "slots") c.slots = static_cast<std::uint32_t>(v);
    else if (axis.key == "cache") c.cache_size = static_cast<std::uint32_t>(v);
    else c.seed = v;
    c.validate();
    return sim::simulate(trace, c);
  };
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::vector<sim::SimStats>> results(axis.values.size());
  for (std::size_t begin = 0; begin < axis.values.size(); begin += workers) {
    std::vector<std::future<std::vector<sim::SimStats>>> batch;
    for (std::size_t i = begin; i < std::min(axis.values.size(), begin + workers); ++i) {
      batch.push_back(std::async(std::launch::async, point, axis.values[i]));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) results[begin + i] = batch[i].get();
  }
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < axis.values.size(); ++i) {
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& s : results[i]) stats.push_back(s.summary_json());
    out.push_back({{axis.key, axis.values[i]}, {"stats", stats}});
  }
  return out;
}

std::string stats_table(const std::vector<sim::SimStats>& stats) {
  std::ostringstream o;
  o << std::left << std::setw(10) << "variant" << std::right << std::setw(14) << "p50 delay" << std::setw(14)
    << "p99 delay" << std::setw(12) << "p50 slow" << std::setw(12) << "p99 slow" << std::setw(9) << "cold"
    << std::setw(9) << "lukewarm" << std::setw(9) << "warm" << '\n';
  o << std::fixed << std::setprecision(2);
  for (const auto& s : stats) {
    o << std::left << std::setw(10) << s.variant << std::right << std::setw(14) << s.p50_delay_ms << std::setw(14)
      << s.p99_delay_ms << std::setw(12) << s.p50_slowdown << std::setw(12) << s.p99_slowdown << std::setw(9) << s.cold
      << std::setw(9) << s.lukewarm << std::setw(9) << s.warm << '\n';
  }
  return o.str();
}

// ---- attestation demo ----

AttestDemoConfig AttestDemoConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"monitor", "zygote_bytes", "input", "seed"}, "attest-demo");
  return json_guard("attest-demo", [&] {
    AttestDemoConfig c;
    if (j.contains("monitor")) c.monitor = MonitorConfig::from_json(j["monitor"]);
    c.zygote_bytes = j.value("zygote_bytes", c.zygote_bytes);
    c.input = j.value("input", c.input);
    c.seed = j.value("seed", c.seed);
    return c;
  });
}

nlohmann::json attest_demo(const AttestDemoConfig& config) {
  libos::FunctionSpec fn{"greet", {libos::PipelineOp::prepend("hello, ")}, 1};
  auto image = std::make_shared<const libos::ZygoteImage>(sized_zygote(config.zygote_bytes));
  const Digest fd = digest_of(fn);
  Bytes input = to_bytes(config.input);

  Deployment dep(config.monitor, config.seed);
  Monitor& mon = dep.monitor();
  auto& provider = dep.provider();
  nlohmann::json steps = nlohmann::json::array();
  auto hashed = [&] { return mon.cache().bytes_hashed(); };

  steps.push_back({{"phase", "boot"},
                   {"bytes_hashed", hashed()},
                   {"charge_us", mon.boot_charge().count()},
                   {"measurement", hex(mon.measurement())}});

  // Handshake, done by hand so the verifier's checks are visible.
  std::uint64_t h0 = hashed();
  Nonce nonce = provider.begin_handshake();
  auto resp = mon.attest_monitor(nonce);
  bool platform_ok = attest::asp_verif(resp.report, dep.vendor_cert(), Monitor::expected_measurement(config.monitor));
  bool bound = attest::asp_get_d(resp.report) == attest::handshake_binding(resp.monitor_dh_public, nonce);
  attest::ProviderPolicy policy = default_policy(*image, {fn});
  mon.load_policy(provider.finish_handshake(resp, policy));
  dep.allowed_zygotes = policy.allowed_zygotes;
  dep.allowed_functions = policy.allowed_functions;
  steps.push_back({{"phase", "handshake"},
                   {"nonce", to_hex(view(nonce))},
                   {"bytes_hashed", hashed() - h0},
                   {"verdict", platform_ok && bound}});

  try {
    mon.attest_monitor(nonce);
    steps.push_back({{"phase", "replayed_nonce"}, {"verdict", true}, {"error", nullptr}});
  } catch (const Error& e) {
    steps.push_back({{"phase", "replayed_nonce"}, {"verdict", false}, {"error", error_name(e.code())}});
  }

  attest::UserClient user(config.seed + 301, provider.function_public());
  user.pin_response_key(pinned_key(config.seed));
  auto invocation_step = [&](const std::string& phase, const Deployment::Outcome& o, std::uint64_t bytes) {
    return nlohmann::json{{"phase", phase},
                          {"bytes_hashed", bytes},
                          {"invoke_bytes_hashed", o.result.metrics.bytes_hashed},
                          {"measure_us", o.result.metrics.measure.count()},
                          {"output", bytes_json(o.plaintext)},
                          {"verdict", o.verified},
                          {"report", o.result.report.to_json()}};
  };

  h0 = hashed();
  auto zh = mon.create_zygote(image).handle;
  auto t = mon.create_trustlet(zh, fn).handle;
  auto cold = dep.invoke(t, fd, input, user);
  steps.push_back(invocation_step("cold", cold, hashed() - h0));

  h0 = hashed();
  auto warm = dep.invoke(t, fd, input, user);
  auto warm_step = invocation_step("warm", warm, hashed() - h0);
  std::uint64_t expected = fn.canonical_bytes().size() + input.size() + warm.plaintext.size();
  warm_step["expected_bytes_hashed"] = expected;
  warm_step["differential_ok"] = warm.result.metrics.bytes_hashed == expected;
  steps.push_back(warm_step);

  // The guest swaps the user's request for one it sealed itself, over a different input.
  attest::UserClient attacker(config.seed + 302, provider.function_public());
  Bytes forged_input = to_bytes("forged " + config.input);
  (void)user.request(fd, input);  // the honest request the guest drops
  Nonce honest_nonce = user.last().nonce;
  auto forged = mon.invoke_trustlet(t, attacker.request(fd, forged_input));
  bool forged_opens = user.open_response(forged.ciphertext).has_value();
  bool forged_verdict = attest::verify_report(forged.report, dep.expectations(honest_nonce, input));
  steps.push_back({{"phase", "tampered_input"}, {"response_opens", forged_opens}, {"verdict", forged_verdict}});

  bool honest_ok = steps[1]["verdict"].get<bool>() && cold.verified && warm.verified &&
                   warm_step["differential_ok"].get<bool>();
  return {{"steps", steps}, {"honest_verdicts", honest_ok}, {"tampered_rejected", !forged_verdict}};
}

// ---- entry point ----

namespace {

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string format = "json";
  bool no_cow = false;
  std::optional<std::uint64_t> prealloc;
};

void add_common(CLI::App* cmd, Common& c, bool monitor_flags, bool format) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--out", c.out, "output path (default stdout)");
  if (format) cmd->add_option("--format", c.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  if (monitor_flags) {
    cmd->add_flag("--no-cow", c.no_cow, "disable copy-on-write forking");
    cmd->add_option("--prealloc", c.prealloc, "bytes of prevalidated pool at boot");
  }
}

nlohmann::json config_json(const Common& c) {
  return c.config ? load_json(*c.config) : nlohmann::json::object();
}

std::filesystem::path config_dir(const Common& c) {
  return c.config ? std::filesystem::path(*c.config).parent_path() : std::filesystem::path{};
}

void apply_monitor(const Common& c, MonitorConfig& m) {
  if (c.no_cow) m.cow = false;
  if (c.prealloc) m.prealloc_bytes = *c.prealloc;
  if (c.seed) m.seed = *c.seed;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trusted-monitor emulator and serverless trace simulator", "wallet"};
  app.require_subcommand(1);

  Common emu_c, chain_c, dens_c, sim_c, gen_c, att_c;

  auto* emu = app.add_subcommand("emulate", "handshake, policy, zygote, trustlets and invocations");
  add_common(emu, emu_c, true, false);

  auto* ch = app.add_subcommand("chain", "data-object chain versus encrypted fallback");
  add_common(ch, chain_c, true, false);
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> payload;
  bool colocated = false;
  std::vector<std::size_t> sequence;
  ch->add_option("--k", k, "chain length");
  ch->add_option("--payload", payload, "payload bytes");
  ch->add_flag("--colocated", colocated, "fallback hops stay on one monitor");
  ch->add_option("--sequence", sequence, "function index per stage")->delimiter(',');

  auto* dens = app.add_subcommand("density", "memory for n functions, Wallet versus per-function baselines");
  add_common(dens, dens_c, true, true);
  std::vector<std::uint32_t> counts;
  std::optional<std::uint64_t> zygote_bytes;
  std::vector<std::string> dens_variants;
  dens->add_option("--n", counts, "function counts")->delimiter(',');
  dens->add_option("--zygote-bytes", zygote_bytes, "zygote image size");
  dens->add_option("--variant", dens_variants, "baseline variants")->delimiter(',');

  auto* sim_cmd = app.add_subcommand("simulate", "replay a trace against each platform variant");
  add_common(sim_cmd, sim_c, false, true);
  std::optional<std::string> trace_path, invocations_path, sweep_text;
  std::vector<std::string> variants;
  std::optional<std::uint32_t> nodes, slots, cache;
  sim_cmd->add_option("--trace", trace_path, "trace CSV")->check(CLI::ExistingFile);
  sim_cmd->add_option("--variant", variants, "variants to run")->delimiter(',');
  sim_cmd->add_option("--nodes", nodes, "worker nodes");
  sim_cmd->add_option("--slots", slots, "slots per node");
  sim_cmd->add_option("--cache", cache, "keep-alive entries per node");
  sim_cmd->add_option("--invocations", invocations_path, "per-invocation CSV dump");
  sim_cmd->add_option("--sweep", sweep_text, "key=v1,v2,... over nodes, slots, cache or seed");

  auto* gen = app.add_subcommand("gen-trace", "write a synthetic trace CSV");
  add_common(gen, gen_c, false, false);
  std::optional<double> rate, minutes;
  std::optional<std::uint32_t> n_functions;
  gen->add_option("--rate", rate, "arrivals per second");
  gen->add_option("--minutes", minutes, "trace length");
  gen->add_option("--functions", n_functions, "function count");

  auto* att = app.add_subcommand("attest-demo", "handshake and report transcript with a tampered case");
  add_common(att, att_c, true, false);

  auto* pack = app.add_subcommand("pack-zygote", "write a zygote image and a policy admitting it");
  std::uint64_t pack_size = 4 * mm::kMiB;
  std::string pack_runtime = "py-3.11", pack_out;
  std::uint64_t pack_init = 0;
  std::vector<std::string> pack_functions;
  std::optional<std::string> pack_policy;
  pack->add_option("--size", pack_size, "image bytes");
  pack->add_option("--runtime", pack_runtime, "runtime id");
  pack->add_option("--init-ms", pack_init, "runtime init cost");
  pack->add_option("--out", pack_out, "zygote path")->required();
  pack->add_option("--function", pack_functions, "function JSON files to allow")->check(CLI::ExistingFile);
  pack->add_option("--policy-out", pack_policy, "policy JSON path");

  auto* conv = app.add_subcommand("convert-trace", "map an upstream per-invocation CSV onto the trace format");
  std::string conv_input, conv_map;
  std::optional<std::string> conv_out;
  conv->add_option("--input", conv_input, "upstream CSV")->required()->check(CLI::ExistingFile);
  conv->add_option("--map", conv_map, "column map JSON")->required()->check(CLI::ExistingFile);
  conv->add_option("--out", conv_out, "output path (default stdout)");

  std::vector<std::string> argv_store{"wallet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (emu->parsed()) {
      auto c = emu_c.config ? EmulateConfig::from_json(config_json(emu_c), config_dir(emu_c)) : EmulateConfig::defaults();
      apply_monitor(emu_c, c.monitor);
      if (emu_c.seed) c.seed = *emu_c.seed;
      emit(dump(emulate(c)), emu_c.out, out);
    } else if (ch->parsed()) {
      auto c = ChainConfig::from_json(config_json(chain_c));
      apply_monitor(chain_c, c.monitor);
      if (chain_c.seed) c.seed = *chain_c.seed;
      if (k) c.k = *k;
      if (payload) c.payload_bytes = *payload;
      if (colocated) c.colocated = true;
      if (!sequence.empty()) c.sequence = sequence;
      emit(dump(chain(c)), chain_c.out, out);
    } else if (dens->parsed()) {
      auto c = DensityConfig::from_json(config_json(dens_c));
      apply_monitor(dens_c, c.monitor);
      if (dens_c.seed) c.seed = *dens_c.seed;
      if (!counts.empty()) c.counts = counts;
      if (zygote_bytes) c.zygote_bytes = *zygote_bytes;
      if (!dens_variants.empty()) {
        c.baselines.clear();
        for (const auto& v : dens_variants) c.baselines.push_back(sim::VariantProfile::defaults(sim::variant_from_name(v)));
      }
      auto table = density(c);
      for (const auto& row : table["rows"]) {
        err << "n=" << row["n"] << " Wallet " << row["wallet"]["mib"].get<double>() << " MiB";
        for (const auto& b : row["baselines"]) {
          err << ", " << b["variant"].get<std::string>() << ' ' << b["mib"].get<double>() << " MiB (x"
              << b["ratio"].get<double>() << ')';
        }
        err << '\n';
      }
      emit(dens_c.format == "csv" ? density_csv(table) : dump(table), dens_c.out, out);
    } else if (sim_cmd->parsed()) {
      auto c = SimulateConfig::from_json(config_json(sim_c), config_dir(sim_c));
      if (trace_path) c.trace = *trace_path;
      if (sim_c.seed) c.sim.seed = c.generator.seed = *sim_c.seed;
      if (nodes) c.sim.nodes = *nodes;
      if (slots) c.sim.slots = *slots;
      if (cache) c.sim.cache_size = *cache;
      if (!variants.empty()) {
        std::vector<sim::VariantProfile> keep;
        for (const auto& v : variants) {
          auto want = sim::variant_from_name(v);
          auto it = std::find_if(c.sim.profiles.begin(), c.sim.profiles.end(),
                                 [&](const sim::VariantProfile& p) { return p.name == want; });
          keep.push_back(it != c.sim.profiles.end() ? *it : sim::VariantProfile::defaults(want));
        }
        c.sim.profiles = keep;
      }
      c.sim.validate();
      if (sweep_text) {
        emit(dump(sweep(c, parse_sweep(*sweep_text))), sim_c.out, out);
      } else {
        auto stats = simulate(c);
        err << stats_table(stats);
        emit(trace::render_stats(stats, trace::format_from_name(sim_c.format)), sim_c.out, out);
        if (invocations_path) trace::write_invocations(stats, *invocations_path);
      }
    } else if (gen->parsed()) {
      auto j = config_json(gen_c);
      auto g = j.empty() ? trace::GeneratorSpec{} : trace::GeneratorSpec::from_json(j);
      if (gen_c.seed) g.seed = *gen_c.seed;
      if (rate) g.arrival_rate_per_s = *rate;
      if (minutes) g.duration_minutes = *minutes;
      if (n_functions) g.n_functions = *n_functions;
      auto t = trace::generate_trace(g);
      std::ostringstream o;
      trace::write_trace(t, o);
      emit(o.str(), gen_c.out, out);
      err << t.size() << " invocations\n";
    } else if (conv->parsed()) {
      auto t = trace::convert_trace_file(conv_input, trace::ColumnMap::from_json(load_json(conv_map)));
      std::ostringstream o;
      trace::write_trace(t, o);
      emit(o.str(), conv_out, out);
      err << t.size() << " invocations\n";
    } else if (att->parsed()) {
      auto c = AttestDemoConfig::from_json(config_json(att_c));
      apply_monitor(att_c, c.monitor);
      if (att_c.seed) c.seed = *att_c.seed;
      emit(dump(attest_demo(c)), att_c.out, out);
    } else if (pack->parsed()) {
      auto z = sized_zygote(pack_size, pack_runtime, pack_init);
      z.save(pack_out);
      std::vector<libos::FunctionSpec> fns;
      for (const auto& f : pack_functions) fns.push_back(libos::FunctionSpec::load(f));
      auto policy = default_policy(z, fns);
      if (pack_policy) emit(dump(policy_to_json(policy)), *pack_policy, out);
      out << dump({{"zygote", pack_out}, {"bytes", z.size()}, {"digest", hex(digest_of(z))}});
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "error: config_invalid: " << e.what() << '\n';
    return static_cast<int>(ErrorCode::config_invalid);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace wallet::cli
