#include "wallet/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wallet/error.hpp"
#include "wallet/scenario.hpp"

using namespace wallet;
using namespace wallet::cli;

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "wallet_cli_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(); }

}  // namespace

TEST(Emulate, ColdThenWarm) {
  auto r = emulate(EmulateConfig::defaults());
  EXPECT_EQ(r["labels"], nlohmann::json({"cold", "warm", "warm"}));
  EXPECT_TRUE(r["all_verified"].get<bool>());
  const auto& inv = r["invocations"];
  for (int i = 1; i < 3; ++i) {
    EXPECT_LT(inv[i]["start_ms"].get<double>(), 10.3);
    EXPECT_FALSE(inv[i]["recreated"].get<bool>());
    EXPECT_EQ(inv[i]["output"], "hello");
  }
  EXPECT_GT(inv[0]["start_ms"].get<double>(), inv[1]["start_ms"].get<double>());
}

TEST(Emulate, SecondFunctionIsLukewarm) {
  auto c = EmulateConfig::defaults();
  c.requests = {{"echo", to_bytes("a")}, {"shout", to_bytes("b")}, {"shout", to_bytes("c")}};
  auto r = emulate(c);
  EXPECT_EQ(r["labels"], nlohmann::json({"cold", "lukewarm", "warm"}));
  EXPECT_EQ(r["invocations"][1]["output"], "B!");
  // Trustlet creation from a resident zygote sits between a warm and a cold start.
  double luke = r["invocations"][1]["start_ms"].get<double>();
  EXPECT_LT(luke, 10.3);
  EXPECT_GT(luke, r["invocations"][2]["start_ms"].get<double>());
}

TEST(Emulate, UnknownFunctionAndPolicyMiss) {
  auto c = EmulateConfig::defaults();
  c.requests = {{"nope", {}}};
  try {
    emulate(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::config_invalid);
  }
  c = EmulateConfig::defaults();
  attest::ProviderPolicy p;
  p.allowed_zygotes.insert(digest_of(sized_zygote(c.zygote_bytes)));
  p.allowed_functions.insert(digest_of(c.functions[1]));  // echo is not admitted
  c.policy = p;
  try {
    emulate(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::policy_violation);
  }
}

TEST(Emulate, FilesAndTamperedZygoteExitCode) {
  auto zyg = scratch("z.zyg"), pol = scratch("policy.json"), fn = scratch("echo.json");
  libos::FunctionSpec echo{"echo", {libos::PipelineOp::identity()}, 1};
  echo.save(fn);
  auto pack = run_cli({"pack-zygote", "--size", "65536", "--out", zyg.string(), "--function", fn.string(),
                       "--policy-out", pol.string()});
  ASSERT_EQ(pack.code, 0) << pack.err;
  auto cfg = scratch("emulate.json");
  write_json(cfg, {{"zygote", "z.zyg"}, {"policy", "policy.json"}, {"functions", {"echo.json"}}});
  auto ok = run_cli({"emulate", "--config", cfg.string()});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(nlohmann::json::parse(ok.out)["labels"], nlohmann::json({"cold", "warm", "warm"}));

  // Flip one byte inside the image payload; the file still parses but no longer matches the policy.
  std::fstream f(zyg, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(32768);
  f.put('\x5a');
  f.close();
  auto bad = run_cli({"emulate", "--config", cfg.string()});
  EXPECT_EQ(bad.code, static_cast<int>(ErrorCode::policy_violation)) << bad.err;
  EXPECT_NE(bad.err.find("PolicyViolation"), std::string::npos);
}

TEST(Emulate, SeedIsReproducible) {
  auto a = run_cli({"emulate", "--seed", "7"}), b = run_cli({"emulate", "--seed", "7"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  auto c = run_cli({"emulate", "--seed", "8"});
  EXPECT_NE(a.out, c.out);
}

TEST(Emulate, NoCowAndPreallocFlags) {
  auto c = EmulateConfig::defaults();
  c.requests = {{"echo", to_bytes("x")}, {"shout", to_bytes("y")}};
  auto cow = emulate(c);
  c.monitor.cow = false;
  auto copy = emulate(c);
  EXPECT_GT(copy["invocations"][1]["trustlet"]["charge_us"].get<std::int64_t>(),
            cow["invocations"][1]["trustlet"]["charge_us"].get<std::int64_t>());
  auto r = run_cli({"emulate", "--no-cow", "--prealloc", "67108864"});
  ASSERT_EQ(r.code, 0) << r.err;
}

TEST(Chain, ZeroCopyAgainstFallback) {
  ChainConfig c;
  auto r = chain(c);
  const auto& obj = r["object_path"];
  const auto& fb = r["fallback"];
  EXPECT_EQ(obj["fallback_copies"], 0);
  EXPECT_EQ(obj["crypto_ops"], 0);
  EXPECT_TRUE(obj["verified"].get<bool>());
  EXPECT_TRUE(obj["output_matches"].get<bool>());
  EXPECT_EQ(fb["fallback_copies"], 2);
  EXPECT_EQ(fb["crypto_ops"], 2);
  EXPECT_TRUE(fb["verified"].get<bool>());
  EXPECT_TRUE(fb["output_matches"].get<bool>());
  EXPECT_GE(r["latency_ratio"].get<double>(), 10.0);
}

TEST(Chain, CountersLinearInK) {
  std::vector<double> fb_lat, obj_lat;
  for (std::size_t k : {2, 4, 8, 16, 32}) {
    ChainConfig c;
    c.k = k;
    auto r = chain(c);
    std::uint64_t hops = k - 1;
    EXPECT_EQ(r["fallback"]["fallback_copies"], 2 * hops) << k;
    EXPECT_EQ(r["fallback"]["crypto_ops"], 2 * hops) << k;
    EXPECT_EQ(r["object_path"]["fallback_copies"], 0) << k;
    EXPECT_EQ(r["object_path"]["crypto_ops"], 0) << k;
    // Each stage stores the payload once on the object path.
    EXPECT_EQ(r["object_path"]["payload_bytes_copied"], k * c.payload_bytes) << k;
    fb_lat.push_back(r["fallback"]["latency_us"].get<double>() / static_cast<double>(hops));
    obj_lat.push_back(r["object_path"]["latency_us"].get<double>() / static_cast<double>(hops));
  }
  for (std::size_t i = 1; i < fb_lat.size(); ++i) {
    EXPECT_DOUBLE_EQ(fb_lat[i], fb_lat[0]);
    EXPECT_DOUBLE_EQ(obj_lat[i], obj_lat[0]);
  }
}

TEST(Chain, ColocatedFallbackAndCycle) {
  ChainConfig c;
  c.k = 3;
  c.colocated = true;
  auto r = chain(c);
  EXPECT_EQ(r["fallback"]["colocated_fallbacks"], 2);
  EXPECT_EQ(r["fallback"]["crypto_ops"], 4);
  auto cyc = run_cli({"chain", "--sequence", "0,1,0"});
  EXPECT_EQ(cyc.code, static_cast<int>(ErrorCode::policy_violation)) << cyc.err;
  auto one = run_cli({"chain", "--k", "1"});
  EXPECT_EQ(one.code, static_cast<int>(ErrorCode::invalid_argument));
}

TEST(Density, FiveHundredFunctions) {
  DensityConfig c;
  auto r = density(c);
  const auto& row = r["rows"][0];
  EXPECT_EQ(row["n"], 500);
  std::uint64_t wallet = row["wallet"]["bytes"];
  EXPECT_EQ(wallet, 147 * mm::kMiB + 500ull * 60 * 1024);
  EXPECT_NEAR(row["wallet"]["mib"].get<double>(), 176.3, 0.05);
  EXPECT_EQ(row["wallet"]["per_trustlet_bytes"], 60 * 1024);
  const auto& cvm = row["baselines"][0];
  EXPECT_EQ(cvm["variant"], "CVM");
  EXPECT_DOUBLE_EQ(cvm["mib"].get<double>(), 168000.0);
  EXPECT_GE(cvm["ratio"].get<double>(), 900.0);
  EXPECT_LE(cvm["ratio"].get<double>(), 1000.0);
  EXPECT_EQ(cvm["per_node_instance_cap"], 509);
  EXPECT_EQ(cvm["nodes_needed"], 1);
}

TEST(Density, SeveralCountsAndCsv) {
  DensityConfig c;
  c.counts = {10, 1, 10, 100};
  c.zygote_bytes = 8 * mm::kMiB;
  c.baselines = {sim::VariantProfile::defaults(sim::Variant::CVM)};
  auto r = density(c);
  ASSERT_EQ(r["rows"].size(), 3u);
  std::uint64_t prev = 0;
  for (const auto& row : r["rows"]) {
    std::uint64_t b = row["wallet"]["bytes"];
    EXPECT_GT(b, prev);
    prev = b;
    EXPECT_EQ(row["wallet"]["per_trustlet_bytes"], 60 * 1024);
  }
  auto csv = density_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,variant,bytes,mib,ratio");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  auto cli = run_cli({"density", "--n", "20", "--zygote-bytes", "1048576", "--variant", "CVM,VM", "--format", "csv"});
  ASSERT_EQ(cli.code, 0) << cli.err;
  EXPECT_NE(cli.out.find("20,VM,"), std::string::npos);
}

TEST(Simulate, ClosedFormQueueing) {
  auto path = scratch("two.csv");
  std::ofstream(path) << trace::kTraceHeader << "\n0,a,f,0,1000\n1,a,g,100,500\n";
  auto r = run_cli({"simulate", "--trace", path.string(), "--nodes", "1", "--slots", "1", "--cache", "0",
                    "--variant", "Wallet", "--invocations", scratch("inv.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto stats = trace::parse_stats_json(r.out);
  ASSERT_EQ(stats.size(), 1u);
  // First: cold 2380 + 1000 run, done at 3380. Second waits 3280 then boots cold.
  std::ifstream inv(scratch("inv.csv"));
  std::string header, first, second;
  std::getline(inv, header);
  std::getline(inv, first);
  std::getline(inv, second);
  EXPECT_EQ(second, "Wallet,1,0,cold,100,3380,3280,2380,5660,500,12.32");
  EXPECT_EQ(stats[0].p99_delay_ms, 5660);
  EXPECT_NE(r.err.find("p50 delay"), std::string::npos);
}

TEST(Simulate, GeneratedTraceIsSeedStable) {
  auto cfg = scratch("sim.json");
  write_json(cfg, {{"generator", {{"n_functions", 50}, {"n_apps", 5}, {"duration_minutes", 0.5}, {"arrival_rate_per_s", 20}}},
                   {"sim", {{"nodes", 2}, {"slots", 4}, {"cache_size", 4}}}});
  auto a = run_cli({"simulate", "--config", cfg.string(), "--seed", "3", "--format", "csv"});
  auto b = run_cli({"simulate", "--config", cfg.string(), "--seed", "3", "--format", "csv"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 4);  // header + CVM, VM, Wallet

  auto sw = run_cli({"simulate", "--config", cfg.string(), "--sweep", "nodes=1,2,4"});
  ASSERT_EQ(sw.code, 0) << sw.err;
  auto j = nlohmann::json::parse(sw.out);
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[2]["nodes"], 4);
  EXPECT_EQ(j[0]["stats"].size(), 3u);
  // More nodes never hurt the p99 of a variant on this light trace.
  EXPECT_LE(j[2]["stats"][2]["p99_delay_ms"].get<double>(), j[0]["stats"][2]["p99_delay_ms"].get<double>());
}

TEST(Simulate, SweepParsing) {
  auto a = parse_sweep("cache=0,8,32");
  EXPECT_EQ(a.key, "cache");
  EXPECT_EQ(a.values, (std::vector<std::uint64_t>{0, 8, 32}));
  for (auto bad : {"nodes", "color=1", "nodes=1,x", "nodes="}) {
    try {
      parse_sweep(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::config_invalid);
    }
  }
}

TEST(GenTrace, WritesLoadableCsv) {
  auto out = scratch("gen.csv");
  auto r = run_cli({"gen-trace", "--minutes", "0.2", "--rate", "50", "--seed", "4", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto t = trace::load_trace(out);
  trace::GeneratorSpec g;
  g.duration_minutes = 0.2;
  g.arrival_rate_per_s = 50;
  g.seed = 4;
  auto want = trace::generate_trace(g);
  ASSERT_EQ(t.size(), want.size());
  EXPECT_EQ(t.back().arrival_ms, want.back().arrival_ms);
}

TEST(AttestDemo, Verdicts) {
  auto r = attest_demo({});
  EXPECT_TRUE(r["honest_verdicts"].get<bool>());
  EXPECT_TRUE(r["tampered_rejected"].get<bool>());
  std::map<std::string, nlohmann::json> by_phase;
  for (const auto& s : r["steps"]) by_phase[s["phase"].get<std::string>()] = s;
  EXPECT_TRUE(by_phase["handshake"]["verdict"].get<bool>());
  EXPECT_TRUE(by_phase["cold"]["verdict"].get<bool>());
  EXPECT_TRUE(by_phase["warm"]["verdict"].get<bool>());
  EXPECT_EQ(by_phase["warm"]["bytes_hashed"], by_phase["warm"]["expected_bytes_hashed"]);
  EXPECT_EQ(by_phase["replayed_nonce"]["error"], "StaleNonce");
  EXPECT_FALSE(by_phase["tampered_input"]["verdict"].get<bool>());
  // The cold phase hashes the whole zygote image; the warm one does not.
  EXPECT_GT(by_phase["cold"]["bytes_hashed"].get<std::uint64_t>(), 4 * mm::kMiB);
  auto cli = run_cli({"attest-demo", "--seed", "2"});
  ASSERT_EQ(cli.code, 0) << cli.err;
}

TEST(Cli, UsageAndConfigErrors) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"nope"}).code, 2);
  EXPECT_EQ(run_cli({"simulate", "--nodes", "x"}).code, 2);
  EXPECT_EQ(run_cli({"simulate", "--format", "xml"}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  auto cfg = scratch("bad.json");
  std::ofstream(cfg) << "{\"bogus\": 1}";
  EXPECT_EQ(run_cli({"chain", "--config", cfg.string()}).code, static_cast<int>(ErrorCode::config_invalid));
  std::ofstream(cfg) << "{not json";
  EXPECT_EQ(run_cli({"emulate", "--config", cfg.string()}).code, static_cast<int>(ErrorCode::config_invalid));
  auto empty = scratch("empty.csv");
  std::ofstream(empty) << trace::kTraceHeader << "\n";
  EXPECT_EQ(run_cli({"simulate", "--trace", empty.string()}).code, static_cast<int>(ErrorCode::empty_trace));
}

TEST(Cli, PolicyJsonRoundTrip) {
  attest::ProviderPolicy p;
  p.allowed_zygotes.insert(digest_of(sized_zygote(4096)));
  libos::FunctionSpec a{"a", {libos::PipelineOp::identity()}, 0}, b{"b", {libos::PipelineOp::sha512()}, 0};
  p.allowed_functions = {digest_of(a), digest_of(b)};
  p.chains = {{digest_of(a), digest_of(b)}};
  auto back = policy_from_json(policy_to_json(p));
  EXPECT_EQ(back.allowed_zygotes, p.allowed_zygotes);
  EXPECT_EQ(back.allowed_functions, p.allowed_functions);
  EXPECT_EQ(back.chains, p.chains);
  EXPECT_THROW(policy_from_json({{"allowed_zygotes", {"abc"}}}), Error);
}

TEST(ConvertTrace, MapsUpstreamColumns) {
  auto upstream = scratch("upstream.csv");
  auto map = scratch("map.json");
  auto out = scratch("converted.csv");
  {
    std::ofstream f(upstream);
    f << "app,func,end_timestamp,duration\nA,f1,10.5,0.5\nB,f2,3.0,1.0\n";
    std::ofstream g(map);
    g << R"({"app": "app", "function": "func", "time": "end_timestamp", "time_is_end": true,
             "duration": "duration", "time_unit_ms": 1000, "duration_unit_ms": 1000})";
  }
  auto r = run_cli({"convert-trace", "--input", upstream.string(), "--map", map.string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto t = trace::load_trace(out);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].function_id, "f2");
  EXPECT_EQ(t[1].arrival_ms, 8000.0);
  {
    std::ofstream g(map);
    g << R"({"app": "app"})";
  }
  EXPECT_EQ(run_cli({"convert-trace", "--input", upstream.string(), "--map", map.string()}).code, 10);
  EXPECT_EQ(run_cli({"convert-trace", "--input", upstream.string()}).code, 2);
}
