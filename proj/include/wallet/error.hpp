#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wallet {

// Numeric values double as CLI exit codes.
enum class ErrorCode : std::uint8_t {
  config_invalid = 10,
  out_of_memory = 11,
  out_of_host_memory = 12,
  permission_denied = 13,
  double_map = 14,
  not_sealed = 15,
  policy_violation = 16,
  unknown_handle = 17,
  decrypt_failed = 18,
  trustlet_busy = 19,
  function_error = 20,
  no_session = 21,
  auth_failed = 22,
  unknown_service = 23,
  quota_exceeded = 24,
  unknown_object = 25,
  already_attached = 26,
  no_input = 27,
  not_writer = 28,
  not_co_located = 29,
  no_route = 30,
  stale_nonce = 31,
  verif_failed = 32,
  no_policy_key = 33,
  not_found = 34,
  integrity_error = 35,
  empty_trace = 36,
  parse_error = 37,
  invariant_error = 38,
  io_error = 39,
  aborted = 40,
  invalid_argument = 41,
  invalid_state = 42,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline int exit_code(ErrorCode code) { return static_cast<int>(code); }

}  // namespace wallet
