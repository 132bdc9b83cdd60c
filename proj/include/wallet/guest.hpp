#pragma once

// The untrusted guest OS as seen from the monitor: it forwards messages, serves
// external files, and can tamper with both. Every byte it handles lands in the tap.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wallet/bytes.hpp"

namespace wallet {

class GuestBroker {
 public:
  struct TapRecord {
    std::string channel;
    Bytes bytes;
  };
  using MessageTamper = std::function<void(const std::string& channel, Bytes& bytes)>;
  using FileTamper = std::function<void(const std::string& path, Bytes& bytes)>;

  // Passes a message through the guest.
  Bytes forward(const std::string& channel, Bytes bytes);
  void record(const std::string& channel, ByteView bytes);

  void put_file(const std::string& path, Bytes bytes) { files_[path] = std::move(bytes); }
  void remove_file(const std::string& path) { files_.erase(path); }
  std::optional<Bytes> read_file(const std::string& path);

  void set_message_tamper(MessageTamper t) { message_tamper_ = std::move(t); }
  void set_file_tamper(FileTamper t) { file_tamper_ = std::move(t); }

  const std::vector<TapRecord>& tap() const { return tap_; }
  bool tap_contains(ByteView needle) const;
  std::uint64_t tap_bytes() const;
  void clear_tap() { tap_.clear(); }

 private:
  std::map<std::string, Bytes> files_;
  std::vector<TapRecord> tap_;
  MessageTamper message_tamper_;
  FileTamper file_tamper_;
};

}  // namespace wallet
