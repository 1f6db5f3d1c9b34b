#include "geofreebie/error.hpp"

namespace geofreebie {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::InvalidPosition: return "InvalidPosition";
    case ErrorCode::InvalidDetail: return "InvalidDetail";
    case ErrorCode::UnknownLocale: return "UnknownLocale";
    case ErrorCode::WeakPassword: return "WeakPassword";
    case ErrorCode::MissingReason: return "MissingReason";
    case ErrorCode::BadWindow: return "BadWindow";
    case ErrorCode::Unauthenticated: return "Unauthenticated";
    case ErrorCode::BadCredentials: return "BadCredentials";
    case ErrorCode::ProviderVerificationFailed: return "ProviderVerificationFailed";
    case ErrorCode::AccountRejected: return "AccountRejected";
    case ErrorCode::NotAuthorized: return "NotAuthorized";
    case ErrorCode::NotModerator: return "NotModerator";
    case ErrorCode::NotApproved: return "NotApproved";
    case ErrorCode::ConsentIncomplete: return "ConsentIncomplete";
    case ErrorCode::TrialClosed: return "TrialClosed";
    case ErrorCode::UnknownUser: return "UnknownUser";
    case ErrorCode::UnknownOffer: return "UnknownOffer";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::NotPending: return "NotPending";
    case ErrorCode::NotOpen: return "NotOpen";
    case ErrorCode::SelfBlock: return "SelfBlock";
    case ErrorCode::DuplicateEmail: return "DuplicateEmail";
    case ErrorCode::DuplicateReview: return "DuplicateReview";
    case ErrorCode::TaskNotPending: return "TaskNotPending";
    case ErrorCode::ReviewerMismatch: return "ReviewerMismatch";
    case ErrorCode::NoContactMethod: return "NoContactMethod";
    case ErrorCode::NoViewerPosition: return "NoViewerPosition";
    case ErrorCode::NoUsers: return "NoUsers";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::KeyParityViolation: return "KeyParityViolation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::VersionConflict: return "VersionConflict";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::UnsupportedMediaType: return "UnsupportedMediaType";
    case ErrorCode::StoreCorrupt: return "StoreCorrupt";
    case ErrorCode::Internal: return "Internal";
  }
  return "Internal";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationFailed:
    case ErrorCode::InvalidPosition:
    case ErrorCode::InvalidDetail:
    case ErrorCode::UnknownLocale:
    case ErrorCode::WeakPassword:
    case ErrorCode::MissingReason:
    case ErrorCode::BadWindow:
    case ErrorCode::SelfBlock:
    case ErrorCode::NoContactMethod:
    case ErrorCode::NoViewerPosition:
    case ErrorCode::NoUsers:
    case ErrorCode::EmptyGroup:
    case ErrorCode::OutOfRange:
    case ErrorCode::KeyParityViolation:
    case ErrorCode::ParseError:
      return 400;
    case ErrorCode::Unauthenticated:
    case ErrorCode::BadCredentials:
    case ErrorCode::ProviderVerificationFailed:
      return 401;
    case ErrorCode::AccountRejected:
    case ErrorCode::NotAuthorized:
    case ErrorCode::NotModerator:
    case ErrorCode::NotApproved:
    case ErrorCode::ConsentIncomplete:
    case ErrorCode::TrialClosed:
    case ErrorCode::ReviewerMismatch:
      return 403;
    case ErrorCode::UnknownUser:
    case ErrorCode::UnknownOffer:
    case ErrorCode::UnknownTask:
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::NotPending:
    case ErrorCode::NotOpen:
    case ErrorCode::DuplicateEmail:
    case ErrorCode::DuplicateReview:
    case ErrorCode::TaskNotPending:
    case ErrorCode::InvalidTransition:
    case ErrorCode::VersionConflict:
    case ErrorCode::Conflict:
      return 409;
    case ErrorCode::PayloadTooLarge: return 413;
    case ErrorCode::UnsupportedMediaType: return 415;
    case ErrorCode::RateLimited: return 429;
    case ErrorCode::StoreCorrupt:
    case ErrorCode::Internal:
      return 500;
  }
  return 500;
}

}  // namespace geofreebie
