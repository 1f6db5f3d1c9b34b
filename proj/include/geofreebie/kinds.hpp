#pragma once

// Entity kinds used in the store. Also the directory names under entities/.
namespace geofreebie::kinds {

inline constexpr const char* kUser = "user";
inline constexpr const char* kAccount = "account";
inline constexpr const char* kCredential = "credential";
inline constexpr const char* kProviderLink = "provider_link";
inline constexpr const char* kOffer = "offer";
inline constexpr const char* kSession = "session";
inline constexpr const char* kReviewTask = "review_task";
inline constexpr const char* kReview = "review";
inline constexpr const char* kSurvey = "survey";
inline constexpr const char* kNotification = "notification";
inline constexpr const char* kTrial = "trial";
inline constexpr const char* kModeration = "moderation_entry";
inline constexpr const char* kReport = "report";
inline constexpr const char* kIdempotency = "idempotency";

}  // namespace geofreebie::kinds
