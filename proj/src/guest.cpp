#include "wallet/guest.hpp"

namespace wallet {

Bytes GuestBroker::forward(const std::string& channel, Bytes bytes) {
  if (message_tamper_) message_tamper_(channel, bytes);
  record(channel, bytes);
  return bytes;
}

void GuestBroker::record(const std::string& channel, ByteView bytes) {
  tap_.push_back({channel, Bytes(bytes.begin(), bytes.end())});
}

std::optional<Bytes> GuestBroker::read_file(const std::string& path) {
  record("file_request", ByteView(reinterpret_cast<const std::uint8_t*>(path.data()), path.size()));
  auto it = files_.find(path);
  if (it == files_.end()) return std::nullopt;
  Bytes b = it->second;
  if (file_tamper_) file_tamper_(path, b);
  record("file", b);
  return b;
}

bool GuestBroker::tap_contains(ByteView needle) const {
  for (const auto& r : tap_) {
    if (contains(r.bytes, needle)) return true;
  }
  return false;
}

std::uint64_t GuestBroker::tap_bytes() const {
  std::uint64_t n = 0;
  for (const auto& r : tap_) n += r.bytes.size();
  return n;
}

}  // namespace wallet
