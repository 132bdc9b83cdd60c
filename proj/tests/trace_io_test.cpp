#include "wallet/trace_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "wallet/error.hpp"

using namespace wallet;
using namespace wallet::trace;

namespace {

std::vector<TraceEvent> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::invalid_state;
}

std::string header() { return std::string(kTraceHeader) + "\n"; }

bool same(const TraceEvent& a, const TraceEvent& b) {
  return a.invocation_id == b.invocation_id && a.app_id == b.app_id && a.function_id == b.function_id &&
         a.arrival_ms == b.arrival_ms && a.duration_ms == b.duration_ms;
}

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("wallet_trace_io_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

SimStats stats(std::string variant, double p50) {
  SimStats s;
  s.variant = std::move(variant);
  s.p50_delay_ms = p50;
  s.p99_delay_ms = p50 * 3.25;
  s.p50_slowdown = 1.0 / 3.0;
  s.p99_slowdown = 12345.678;
  s.cold = 7;
  s.lukewarm = 2;
  s.warm = 91;
  s.makespan_ms = 1e6 + 0.1;
  return s;
}

}  // namespace

TEST(Load, ThreeRowsSorted) {
  auto t = parse(header() + "2,a,f,30,5\n0,a,g,10,1.5\n1,b,h,20,2\n");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0].invocation_id, 0u);
  EXPECT_EQ(t[1].invocation_id, 1u);
  EXPECT_EQ(t[2].invocation_id, 2u);
  EXPECT_EQ(t[0].function_id, "g");
  EXPECT_DOUBLE_EQ(t[0].duration_ms, 1.5);
}

TEST(Load, Errors) {
  EXPECT_EQ(code_of([] { parse(header() + "1,a,f,0,5\n1,a,f,1,5\n"); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { parse(header() + "1,a,f,0,-5\n"); }), ErrorCode::invariant_error);
  EXPECT_EQ(code_of([] { parse(header() + "1,a,f,0,0\n"); }), ErrorCode::invariant_error);
  EXPECT_EQ(code_of([] { parse(header() + "1,a,f,-1,3\n"); }), ErrorCode::invariant_error);
  EXPECT_EQ(code_of([] { parse("id,app\n1,a\n"); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { parse(""); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { parse(header() + "1,a,f,x,3\n"); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { parse(header() + "1,,f,0,3\n"); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { load_trace(tmp("does_not_exist.csv")); }), ErrorCode::io_error);
}

TEST(Load, ErrorCarriesLineNumber) {
  try {
    parse(header() + "0,a,f,0,1\n1,a,f,0,1\n\n3,a,f,0,1,9\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
  }
}

TEST(Load, CrlfAndBlankLines) {
  auto t = parse(std::string(kTraceHeader) + "\r\n0,a,f,1,2\r\n\r\n1,a,f,0,2\r\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].invocation_id, 1u);
}

TEST(Load, UnsortedInputSortsLikeReferenceSort) {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 50; ++round) {
    std::vector<TraceEvent> rows;
    std::size_t n = 1 + rng() % 60;
    for (std::size_t i = 0; i < n; ++i) {
      rows.push_back({i, "a" + std::to_string(rng() % 3), "f" + std::to_string(rng() % 5),
                      static_cast<double>(rng() % 10), static_cast<double>(1 + rng() % 9)});
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    std::ostringstream o;
    write_trace(rows, o);
    auto got = parse(o.str());

    // Insertion sort by (arrival, id) as the reference.
    auto want = rows;
    for (std::size_t i = 1; i < want.size(); ++i) {
      for (std::size_t j = i; j > 0; --j) {
        const auto& x = want[j - 1];
        const auto& y = want[j];
        bool swap = y.arrival_ms < x.arrival_ms || (y.arrival_ms == x.arrival_ms && y.invocation_id < x.invocation_id);
        if (!swap) break;
        std::swap(want[j - 1], want[j]);
      }
    }
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_TRUE(same(got[i], want[i])) << round << ":" << i;
  }
}

TEST(Generate, RoundTripThroughFile) {
  GeneratorSpec g;
  g.duration_minutes = 2;
  g.arrival_rate_per_s = 40;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    g.seed = seed;
    auto t = generate_trace(g);
    auto path = tmp("roundtrip.csv");
    save_trace(t, path);
    auto back = load_trace(path);
    ASSERT_EQ(back.size(), t.size());
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_TRUE(same(back[i], t[i])) << seed << ":" << i;
    std::filesystem::remove(path);
  }
}

TEST(Generate, DeterministicUnderSeed) {
  GeneratorSpec g;
  g.duration_minutes = 1;
  auto a = generate_trace(g), b = generate_trace(g);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same(a[i], b[i]));
  g.seed = 2;
  auto c = generate_trace(g);
  EXPECT_FALSE(c.size() == a.size() && same(c[0], a[0]));
}

TEST(Generate, SingleFunction) {
  GeneratorSpec g;
  g.n_functions = 1;
  g.n_apps = 1;
  g.duration_minutes = 1;
  auto t = generate_trace(g);
  ASSERT_FALSE(t.empty());
  for (const auto& e : t) {
    EXPECT_EQ(e.function_id, "f0");
    EXPECT_GE(e.duration_ms, 1.0);
  }
}

TEST(Generate, ShapeOfPopularityAndDurations) {
  GeneratorSpec g;
  g.n_functions = 100;
  g.n_apps = 10;
  g.duration_minutes = 5;
  g.arrival_rate_per_s = 200;
  auto t = generate_trace(g);
  std::map<std::string, std::size_t> count;
  for (const auto& e : t) {
    ++count[e.function_id];
    auto k = std::stoul(e.function_id.substr(1));
    EXPECT_EQ(e.app_id, "a" + std::to_string(k % 10));
  }
  double h = 0;
  for (int k = 1; k <= 100; ++k) h += 1.0 / k;
  double n = static_cast<double>(t.size());
  // Zipf(1): rank 1 takes 1/H_100 of traffic, rank 2 half of that.
  EXPECT_NEAR(static_cast<double>(count["f0"]) / n, 1.0 / h, 0.01);
  EXPECT_NEAR(static_cast<double>(count["f1"]) / n, 0.5 / h, 0.01);
  std::vector<double> logs;
  for (const auto& e : t) logs.push_back(std::log(e.duration_ms));
  std::nth_element(logs.begin(), logs.begin() + logs.size() / 2, logs.end());
  EXPECT_NEAR(logs[logs.size() / 2], g.duration_mu, 0.05);
}

TEST(Generate, FullScaleCountWithinOnePercent) {
  GeneratorSpec g;
  g.duration_minutes = 30;
  g.arrival_rate_per_s = 2278;
  auto t = generate_trace(g);
  double expected = 2278.0 * 1800.0;
  EXPECT_NEAR(static_cast<double>(t.size()), expected, 0.01 * expected);
  EXPECT_NEAR(static_cast<double>(t.size()), 4.1e6, 0.01 * 4.1e6);
  for (std::size_t i = 1; i < t.size(); ++i) ASSERT_LE(t[i - 1].arrival_ms, t[i].arrival_ms);
}

TEST(Generate, SpecValidationAndJson) {
  GeneratorSpec g;
  g.n_functions = 0;
  EXPECT_EQ(code_of([&] { g.validate(); }), ErrorCode::config_invalid);
  g = {};
  g.duration_sigma = -1;
  EXPECT_EQ(code_of([&] { g.validate(); }), ErrorCode::config_invalid);
  g = {};
  g.seed = 77;
  g.duration_mu = 4.5;
  auto back = GeneratorSpec::from_json(g.to_json());
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.duration_mu, 4.5);
  EXPECT_EQ(code_of([] { GeneratorSpec::from_json({{"bogus", 1}}); }), ErrorCode::config_invalid);
}

TEST(Stats, BitStableAndHeaderOnly) {
  std::vector<SimStats> s{stats("CVM", 830709.25), stats("Wallet", 0.5)};
  for (auto f : {Format::csv, Format::json}) {
    auto a = tmp("stats_a"), b = tmp("stats_b");
    write_stats(s, a, f);
    write_stats(s, b, f);
    EXPECT_EQ(slurp(a), slurp(b));
    std::filesystem::remove(a);
    std::filesystem::remove(b);
  }
  EXPECT_EQ(render_stats({}, Format::csv), std::string(kStatsColumns) + "\n");
  auto csv = render_stats(s, Format::csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kStatsColumns);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Stats, JsonRoundTrip) {
  std::vector<SimStats> s{stats("CVM", 830709.25), stats("VM", 31431.0), stats("Wallet", 0.1 + 0.2)};
  auto back = parse_stats_json(render_stats(s, Format::json));
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].variant, s[i].variant);
    EXPECT_EQ(back[i].p50_delay_ms, s[i].p50_delay_ms);
    EXPECT_EQ(back[i].p99_delay_ms, s[i].p99_delay_ms);
    EXPECT_EQ(back[i].p50_slowdown, s[i].p50_slowdown);
    EXPECT_EQ(back[i].p99_slowdown, s[i].p99_slowdown);
    EXPECT_EQ(back[i].cold, s[i].cold);
    EXPECT_EQ(back[i].lukewarm, s[i].lukewarm);
    EXPECT_EQ(back[i].warm, s[i].warm);
    EXPECT_EQ(back[i].makespan_ms, s[i].makespan_ms);
  }
  EXPECT_EQ(code_of([] { parse_stats_json("[{\"variant\":1}]"); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { write_stats({}, "/nonexistent_dir/x.csv", Format::csv); }), ErrorCode::io_error);
}

TEST(Stats, FormatNumberRoundTrips) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 2000; ++i) {
    double v = std::uniform_real_distribution<double>(-1e9, 1e9)(rng) / static_cast<double>(1 + rng() % 1000);
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(format_number(0.5), "0.5");
  EXPECT_EQ(format_number(2380), "2380");
  EXPECT_EQ(code_of([] { format_from_name("xml"); }), ErrorCode::config_invalid);
}

// ---- converter ----

namespace {

std::vector<TraceEvent> convert(const std::string& text, const ColumnMap& m) {
  std::istringstream in(text);
  return convert_trace(in, m);
}

ColumnMap end_seconds_map() {
  ColumnMap m;
  m.app = "app";
  m.function = "func";
  m.time = "end_timestamp";
  m.time_is_end = true;
  m.duration = "duration";
  m.time_unit_ms = 1000;
  m.duration_unit_ms = 1000;
  return m;
}

}  // namespace

TEST(Convert, EndTimestampsInSeconds) {
  auto t = convert("app,func,end_timestamp,duration\nA,f1,10.5,0.5\nB,f2,3.0,1.0\nA,f1,12,0\n", end_seconds_map());
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0].invocation_id, 1u);
  EXPECT_EQ(t[0].arrival_ms, 0.0);
  EXPECT_EQ(t[0].duration_ms, 1000.0);
  EXPECT_EQ(t[1].invocation_id, 0u);
  EXPECT_EQ(t[1].arrival_ms, 8000.0);
  EXPECT_EQ(t[1].duration_ms, 500.0);
  EXPECT_EQ(t[2].arrival_ms, 10000.0);
  EXPECT_EQ(t[2].duration_ms, 1.0);  // zero raised to the floor
  check_trace(t);
}

TEST(Convert, ExtraColumnsAndIdColumn) {
  ColumnMap m;
  m.app = "owner_app";
  m.function = "fn";
  m.time = "start";
  m.duration = "ms";
  m.id = "call";
  m.rebase = false;
  auto t = convert("trigger,ms,fn,call,start,owner_app\r\nhttp,20,g,7,5,X\r\n\r\ntimer,30,h,3,5,Y\r\n", m);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].invocation_id, 3u);
  EXPECT_EQ(t[0].app_id, "Y");
  EXPECT_EQ(t[1].function_id, "g");
  EXPECT_EQ(t[1].arrival_ms, 5.0);
}

TEST(Convert, Errors) {
  auto m = end_seconds_map();
  EXPECT_EQ(code_of([&] { convert("app,func,duration\nA,f,1\n", m); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([&] { convert("app,func,end_timestamp,duration\nA,f,1\n", m); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([&] { convert("app,func,end_timestamp,duration\nA,f,x,1\n", m); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([&] { convert("app,func,end_timestamp,duration\nA,f,5,-1\n", m); }), ErrorCode::invariant_error);
  EXPECT_EQ(code_of([&] { convert("", m); }), ErrorCode::parse_error);
  auto no_rebase = m;
  no_rebase.rebase = false;
  EXPECT_EQ(code_of([&] { convert("app,func,end_timestamp,duration\nA,f,1,2\n", no_rebase); }),
            ErrorCode::invariant_error);
  auto bad = m;
  bad.duration.clear();
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::config_invalid);
  EXPECT_EQ(code_of([&] { ColumnMap::from_json({{"app", "a"}, {"colour", "x"}}); }), ErrorCode::config_invalid);
  EXPECT_EQ(code_of([&] { convert_trace_file(tmp("absent_upstream.csv"), m); }), ErrorCode::io_error);
  auto j = m.to_json();
  EXPECT_EQ(ColumnMap::from_json(j).to_json(), j);
}

TEST(Convert, IdentityMapReproducesWrittenTraces) {
  ColumnMap m;
  m.app = "app_id";
  m.function = "function_id";
  m.time = "arrival_ms";
  m.duration = "duration_ms";
  m.id = "invocation_id";
  m.rebase = false;
  m.min_duration_ms = 1e-9;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GeneratorSpec g;
    g.duration_minutes = 0.5;
    g.arrival_rate_per_s = 40;
    g.seed = seed;
    auto t = generate_trace(g);
    std::ostringstream o;
    write_trace(t, o);
    auto back = convert(o.str(), m);
    ASSERT_EQ(back.size(), t.size());
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_TRUE(same(back[i], t[i])) << seed << " row " << i;
  }
}
