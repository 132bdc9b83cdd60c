#include "wallet/libos.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "wallet/crypto.hpp"

namespace wallet::libos {

namespace {

constexpr std::array<std::uint8_t, 4> kZygoteMagic{'W', 'Z', 'Y', 'G'};
constexpr std::uint32_t kZygoteVersion = 1;

Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  auto size = in.tellg();
  in.seekg(0);
  Bytes out(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(out.data()), size);
  if (!in) fail(ErrorCode::io_error, "short read on " + path.string());
  return out;
}

void write_file_bytes(const std::filesystem::path& path, ByteView bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io_error, "write failed on " + path.string());
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::identity: return "identity";
    case OpKind::sha512: return "sha512";
    case OpKind::uppercase: return "uppercase";
    case OpKind::lowercase: return "lowercase";
    case OpKind::append: return "append";
    case OpKind::prepend: return "prepend";
    case OpKind::constant: return "const";
    case OpKind::read_file: return "read_file";
    case OpKind::sleep: return "sleep";
  }
  return "?";
}

OpKind op_from_name(std::string_view name) {
  for (std::uint8_t t = 0; t <= static_cast<std::uint8_t>(OpKind::sleep); ++t) {
    if (op_name(static_cast<OpKind>(t)) == name) return static_cast<OpKind>(t);
  }
  fail(ErrorCode::parse_error, "unknown pipeline op '" + std::string(name) + "'");
}

std::uint64_t PipelineOp::sleep_ms() const {
  std::uint64_t ms = 0;
  auto s = to_string(arg);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), ms);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    fail(ErrorCode::parse_error, "sleep argument must be decimal milliseconds");
  }
  return ms;
}

// ---- FunctionSpec ----

Bytes FunctionSpec::canonical_bytes() const {
  ByteWriter w;
  w.prefixed(std::string_view(name)).u64(exec_time_ms).u32(static_cast<std::uint32_t>(steps.size()));
  for (const auto& op : steps) w.u8(static_cast<std::uint8_t>(op.kind)).prefixed(op.arg);
  return w.take();
}

FunctionSpec FunctionSpec::from_canonical(ByteView bytes) {
  ByteReader r(bytes);
  FunctionSpec f;
  f.name = r.prefixed_string();
  f.exec_time_ms = r.u64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(OpKind::sleep)) fail(ErrorCode::parse_error, "unknown op tag");
    auto arg = r.prefixed();
    f.steps.push_back({static_cast<OpKind>(tag), Bytes(arg.begin(), arg.end())});
  }
  r.expect_done();
  return f;
}

nlohmann::json FunctionSpec::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& op : steps) {
    nlohmann::json s{{"op", op_name(op.kind)}};
    if (!op.arg.empty()) s["arg"] = to_base64(op.arg);
    steps_json.push_back(s);
  }
  return {{"name", name}, {"exec_time_ms", exec_time_ms}, {"steps", steps_json}};
}

FunctionSpec FunctionSpec::from_json(const nlohmann::json& j) {
  try {
    FunctionSpec f;
    f.name = j.at("name").get<std::string>();
    const auto& t = j.at("exec_time_ms");
    if (!t.is_number() || t.get<double>() < 0) fail(ErrorCode::parse_error, "exec_time_ms must be non-negative");
    f.exec_time_ms = t.get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
      PipelineOp op;
      op.kind = op_from_name(s.at("op").get<std::string>());
      if (s.contains("arg")) op.arg = from_base64(s["arg"].get<std::string>());
      if (op.kind == OpKind::sleep) (void)op.sleep_ms();
      f.steps.push_back(std::move(op));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("function: ") + e.what());
  }
}

FunctionSpec FunctionSpec::load(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void FunctionSpec::save(const std::filesystem::path& path) const {
  auto text = to_json().dump(2) + "\n";
  write_file_bytes(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- ZygoteImage ----

ZygoteImage::ZygoteImage(std::string runtime_id, std::uint64_t init_cost_ms, std::vector<File> embedded,
                         std::vector<ManifestEntry> manifest)
    : runtime_id_(std::move(runtime_id)), init_cost_ms_(init_cost_ms), manifest_(std::move(manifest)) {
  std::set<std::string> paths;
  for (const auto& f : embedded) {
    if (!paths.insert(f.path).second) fail(ErrorCode::invalid_argument, "duplicate embedded path " + f.path);
  }
  std::set<std::string> mpaths;
  for (const auto& m : manifest_) {
    if (paths.count(m.path)) fail(ErrorCode::invalid_argument, "path " + m.path + " is both embedded and external");
    if (!mpaths.insert(m.path).second) fail(ErrorCode::invalid_argument, "duplicate manifest path " + m.path);
  }
  std::size_t total = 4 + 4 + 4 + runtime_id_.size() + 8 + 4 + 4;
  for (const auto& f : embedded) total += 8 + f.path.size() + f.bytes.size();
  for (const auto& m : manifest_) total += 4 + m.path.size() + kDigestSize;

  ByteWriter w;
  w.reserve(total);
  w.raw(kZygoteMagic).u32(kZygoteVersion).prefixed(std::string_view(runtime_id_)).u64(init_cost_ms_);
  w.u32(static_cast<std::uint32_t>(embedded.size()));
  for (auto& f : embedded) {
    w.prefixed(std::string_view(f.path)).prefixed(f.bytes);
    Bytes().swap(f.bytes);
  }
  w.u32(static_cast<std::uint32_t>(manifest_.size()));
  for (const auto& m : manifest_) w.prefixed(std::string_view(m.path)).raw(m.digest);
  canonical_ = std::make_shared<const Bytes>(w.take());
  index();
}

void ZygoteImage::index() {
  ByteReader r(*canonical_);
  r.raw(4);
  r.u32();
  r.prefixed();
  r.u64();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string path = r.prefixed_string();
    std::uint32_t len = r.u32();
    files_[path] = {r.offset(), len};
    r.raw(len);
  }
}

ZygoteImage ZygoteImage::parse(ByteView canonical) {
  ByteReader r(canonical);
  auto magic = r.fixed<4>();
  if (magic != kZygoteMagic) fail(ErrorCode::parse_error, "not a zygote image (bad magic)");
  if (r.u32() != kZygoteVersion) fail(ErrorCode::parse_error, "unsupported zygote image version");
  ZygoteImage img;
  img.runtime_id_ = r.prefixed_string();
  img.init_cost_ms_ = r.u64();
  std::set<std::string> paths;
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string path = r.prefixed_string();
    r.prefixed();
    if (!paths.insert(path).second) fail(ErrorCode::parse_error, "duplicate embedded path " + path);
  }
  std::uint32_t m = r.u32();
  for (std::uint32_t i = 0; i < m; ++i) {
    ManifestEntry e{r.prefixed_string(), r.fixed<kDigestSize>()};
    if (paths.count(e.path)) fail(ErrorCode::parse_error, "path " + e.path + " is both embedded and external");
    img.manifest_.push_back(std::move(e));
  }
  r.expect_done();
  img.canonical_ = std::make_shared<const Bytes>(canonical.begin(), canonical.end());
  img.index();
  return img;
}

ZygoteImage ZygoteImage::load(const std::filesystem::path& path) { return parse(read_file_bytes(path)); }

void ZygoteImage::save(const std::filesystem::path& path) const { write_file_bytes(path, *canonical_); }

std::vector<std::string> ZygoteImage::embedded_paths() const {
  std::vector<std::string> out;
  for (const auto& [p, range] : files_) out.push_back(p);
  return out;
}

std::optional<ByteView> ZygoteImage::embedded(std::string_view path) const {
  auto it = files_.find(path);
  if (it == files_.end()) return std::nullopt;
  return ByteView(*canonical_).subspan(it->second.first, it->second.second);
}

// ---- NestedFs ----

NestedFs::NestedFs(std::shared_ptr<const ZygoteImage> image) : image_(std::move(image)) {}

NestedFs::Source NestedFs::classify(std::string_view path) const {
  if (image_->embedded(path)) return Source::embedded;
  if (expected(path)) return Source::external;
  return Source::missing;
}

std::optional<ByteView> NestedFs::embedded(std::string_view path) const { return image_->embedded(path); }

std::optional<Digest> NestedFs::expected(std::string_view path) const {
  for (const auto& m : image_->manifest()) {
    if (m.path == path) return m.digest;
  }
  return std::nullopt;
}

Bytes NestedFs::verify(std::string_view path, const UnverifiedBytes& bytes) const {
  auto want = expected(path);
  if (!want) fail(ErrorCode::not_found, "external path " + std::string(path) + " is not in the manifest");
  if (crypto::sha512(bytes.raw_) != *want) {
    fail(ErrorCode::integrity_error, "measurement of " + std::string(path) + " does not match the manifest");
  }
  return bytes.raw_;
}

// ---- ops ----

Bytes apply_op(const PipelineOp& op, Bytes value) {
  switch (op.kind) {
    case OpKind::identity:
      return value;
    case OpKind::sha512: {
      auto d = crypto::sha512(value);
      return Bytes(d.begin(), d.end());
    }
    case OpKind::uppercase:
      for (auto& b : value) {
        if (b >= 'a' && b <= 'z') b = static_cast<std::uint8_t>(b - 'a' + 'A');
      }
      return value;
    case OpKind::lowercase:
      for (auto& b : value) {
        if (b >= 'A' && b <= 'Z') b = static_cast<std::uint8_t>(b - 'A' + 'a');
      }
      return value;
    case OpKind::append:
      value.insert(value.end(), op.arg.begin(), op.arg.end());
      return value;
    case OpKind::prepend:
      value.insert(value.begin(), op.arg.begin(), op.arg.end());
      return value;
    case OpKind::constant:
      return op.arg;
    case OpKind::sleep:
      return value;
    case OpKind::read_file:
      break;
  }
  fail(ErrorCode::invalid_state, "read_file needs the filesystem");
}

std::string_view service_name(std::uint32_t leaf) {
  switch (static_cast<Service>(leaf)) {
    case Service::mem_alloc: return "mem_alloc";
    case Service::file_read: return "file_read";
    case Service::obj_create: return "obj_create";
    case Service::obj_get: return "obj_get";
    case Service::obj_get_input: return "obj_get_input";
    case Service::obj_set_output: return "obj_set_output";
    case Service::exit: return "exit";
  }
  return "unknown";
}

// ---- PipelineRunner ----

PipelineRunner::PipelineRunner(std::shared_ptr<const FunctionSpec> fn, std::shared_ptr<const NestedFs> fs)
    : fn_(std::move(fn)), fs_(std::move(fs)) {}

Micros PipelineRunner::take_compute() {
  Micros c = compute_;
  compute_ = Micros(0);
  return c;
}

void PipelineRunner::deliver(const UnverifiedBytes& bytes) {
  if (!pending_) fail(ErrorCode::invalid_state, "no file read is pending");
  delivered_ = fs_->verify(*pending_, bytes);
}

PipelineRunner::Status PipelineRunner::run(TrustletContext& ctx) {
  if (phase_ == Phase::done) fail(ErrorCode::invalid_state, "pipeline already exited");
  if (pending_ && !delivered_) fail(ErrorCode::invalid_state, "resumed before the pending file was delivered");

  if (phase_ == Phase::fetch_input) {
    auto r = ctx.trap({static_cast<std::uint32_t>(Service::obj_get_input), {}, {}});
    value_ = ctx.load(r.regs[2], r.regs[1]);
    phase_ = Phase::steps;
  }

  while (phase_ == Phase::steps && ip_ < fn_->steps.size()) {
    const PipelineOp& op = fn_->steps[ip_];
    if (op.kind == OpKind::read_file) {
      std::string path = to_string(op.arg);
      if (delivered_) {
        value_ = std::move(*delivered_);
        delivered_.reset();
        pending_.reset();
      } else {
        switch (fs_->classify(path)) {
          case NestedFs::Source::embedded: {
            auto b = *fs_->embedded(path);
            value_.assign(b.begin(), b.end());
            break;
          }
          case NestedFs::Source::external: {
            pending_ = path;
            auto r = ctx.trap({static_cast<std::uint32_t>(Service::file_read), {}, path});
            if (r.suspended) return Status::suspended;
            fail(ErrorCode::invalid_state, "file_read returned without suspending");
          }
          case NestedFs::Source::missing:
            fail(ErrorCode::not_found, "no such file " + path);
        }
      }
    } else if (op.kind == OpKind::sleep) {
      compute_ += std::chrono::milliseconds(op.sleep_ms());
    } else {
      value_ = apply_op(op, std::move(value_));
    }
    ++ip_;
  }

  if (phase_ == Phase::steps) {
    compute_ += std::chrono::milliseconds(fn_->exec_time_ms);
    std::uint64_t out_id = 0;
    if (!value_.empty()) {
      auto r = ctx.trap({static_cast<std::uint32_t>(Service::obj_create), {value_.size(), 0, 0}, {}});
      out_id = r.regs[0];
      ctx.store(r.regs[1], value_);
    }
    ctx.trap({static_cast<std::uint32_t>(Service::obj_set_output), {out_id, 0, 0}, {}});
    phase_ = Phase::emit;
  }

  ctx.trap({static_cast<std::uint32_t>(Service::exit), {}, {}});
  phase_ = Phase::done;
  return Status::exited;
}

Micros runtime_init(ProcState state, bool& preloaded, const ZygoteImage& image) {
  if (state != ProcState::initialized || preloaded) {
    fail(ErrorCode::invalid_state, std::string("runtime init not allowed in state ") + state_name(state) +
                                       (preloaded ? " (already initialized)" : ""));
  }
  preloaded = true;
  return std::chrono::milliseconds(image.init_cost_ms());
}

}  // namespace wallet::libos
