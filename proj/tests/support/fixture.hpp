#pragma once

// A booted deployment with one zygote and a handful of named functions allowed.

#include <map>
#include <memory>
#include <string>

#include "wallet/scenario.hpp"

namespace fixture {

using namespace wallet;

inline libos::FunctionSpec fn(std::string name, std::vector<libos::PipelineOp> steps, std::uint64_t exec_ms = 0) {
  return libos::FunctionSpec{std::move(name), std::move(steps), exec_ms};
}

struct World {
  std::unique_ptr<Deployment> dep;
  libos::ZygoteImage zygote;
  std::map<std::string, libos::FunctionSpec> fns;
  std::optional<ZygoteHandle> zh;

  Monitor& mon() { return dep->monitor(); }
  Digest fd(const std::string& name) const { return digest_of(fns.at(name)); }
};

inline MonitorConfig small_config(std::uint64_t seed = 7) {
  MonitorConfig c;
  c.pool_bytes = 64 * mm::kMiB;
  c.prealloc_bytes = 16 * mm::kMiB;
  c.seed = seed;
  return c;
}

// Builds the world, installs a policy naming every function, and loads the zygote.
inline World make_world(std::map<std::string, libos::FunctionSpec> fns, libos::ZygoteImage zygote,
                        std::vector<std::vector<std::string>> chains = {}, MonitorConfig config = small_config(),
                        bool load_zygote = true) {
  World w{std::make_unique<Deployment>(config, 99), std::move(zygote), std::move(fns), std::nullopt};
  attest::ProviderPolicy p;
  p.allowed_zygotes.insert(digest_of(w.zygote));
  for (const auto& [n, f] : w.fns) p.allowed_functions.insert(digest_of(f));
  for (const auto& c : chains) {
    std::vector<Digest> ds;
    for (const auto& n : c) ds.push_back(digest_of(w.fns.at(n)));
    p.chains.push_back(ds);
  }
  w.dep->install_policy(p);
  if (load_zygote) w.zh = w.mon().create_zygote(w.zygote).handle;
  return w;
}

inline libos::ZygoteImage small_zygote() {
  return libos::ZygoteImage("py-3.11", 500, {{"/data/x", to_bytes("42")}},
                            {{"/ext/model", crypto::sha512(std::string_view("weights"))}});
}

}  // namespace fixture
