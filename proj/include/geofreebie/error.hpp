#pragma once

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <string_view>

namespace geofreebie {

// Stable machine-readable error codes. The names are part of the HTTP API
// and the admin CLI output; do not rename.
enum class ErrorCode {
  ValidationFailed,
  InvalidPosition,
  InvalidDetail,
  UnknownLocale,
  WeakPassword,
  MissingReason,
  BadWindow,
  Unauthenticated,
  BadCredentials,
  ProviderVerificationFailed,
  AccountRejected,
  NotAuthorized,
  NotModerator,
  NotApproved,
  ConsentIncomplete,
  TrialClosed,
  UnknownUser,
  UnknownOffer,
  UnknownTask,
  NotFound,
  NotPending,
  NotOpen,
  SelfBlock,
  DuplicateEmail,
  DuplicateReview,
  TaskNotPending,
  ReviewerMismatch,
  NoContactMethod,
  NoViewerPosition,
  NoUsers,
  EmptyGroup,
  OutOfRange,
  InvalidTransition,
  KeyParityViolation,
  ParseError,
  VersionConflict,
  Conflict,
  RateLimited,
  PayloadTooLarge,
  UnsupportedMediaType,
  StoreCorrupt,
  Internal,
};

std::string_view to_string(ErrorCode code);

// HTTP status used when the error crosses the API boundary.
int http_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        nlohmann::json details = nullptr)
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

  nlohmann::json to_json() const {
    nlohmann::json body = {{"code", std::string(to_string(code_))},
                           {"message", what()}};
    if (!details_.is_null()) body["details"] = details_;
    return body;
  }

 private:
  ErrorCode code_;
  nlohmann::json details_;
};

}  // namespace geofreebie
