#include "wallet/error.hpp"

namespace wallet {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::config_invalid: return "ConfigInvalid";
    case ErrorCode::out_of_memory: return "OutOfMemory";
    case ErrorCode::out_of_host_memory: return "OutOfHostMemory";
    case ErrorCode::permission_denied: return "PermissionDenied";
    case ErrorCode::double_map: return "DoubleMap";
    case ErrorCode::not_sealed: return "NotSealed";
    case ErrorCode::policy_violation: return "PolicyViolation";
    case ErrorCode::unknown_handle: return "UnknownHandle";
    case ErrorCode::decrypt_failed: return "DecryptFailed";
    case ErrorCode::trustlet_busy: return "TrustletBusy";
    case ErrorCode::function_error: return "FunctionError";
    case ErrorCode::no_session: return "NoSession";
    case ErrorCode::auth_failed: return "AuthFailed";
    case ErrorCode::unknown_service: return "UnknownService";
    case ErrorCode::quota_exceeded: return "QuotaExceeded";
    case ErrorCode::unknown_object: return "UnknownObject";
    case ErrorCode::already_attached: return "AlreadyAttached";
    case ErrorCode::no_input: return "NoInput";
    case ErrorCode::not_writer: return "NotWriter";
    case ErrorCode::not_co_located: return "NotCoLocated";
    case ErrorCode::no_route: return "NoRoute";
    case ErrorCode::stale_nonce: return "StaleNonce";
    case ErrorCode::verif_failed: return "VerifFailed";
    case ErrorCode::no_policy_key: return "NoPolicyKey";
    case ErrorCode::not_found: return "NotFound";
    case ErrorCode::integrity_error: return "IntegrityError";
    case ErrorCode::empty_trace: return "EmptyTrace";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::invariant_error: return "InvariantError";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::aborted: return "Aborted";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::invalid_state: return "InvalidState";
  }
  return "Unknown";
}

}  // namespace wallet
