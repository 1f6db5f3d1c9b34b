#pragma once

#include "geofreebie/error.hpp"
#include "geofreebie/time.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace geofreebie {

using UserId = std::string;
using OfferId = std::string;

inline constexpr Duration kMaxClockSkew = std::chrono::minutes{5};
inline constexpr std::size_t kMaxTitleLength = 120;

struct GeoPosition {
  double lat = 0.0;
  double lon = 0.0;
  Timestamp recorded_at{};

  friend bool operator==(const GeoPosition&, const GeoPosition&) = default;
};

// Range check plus the clock-skew rule: recorded_at may lead `now` by at most
// kMaxClockSkew. Throws InvalidPosition.
void validate_position(const GeoPosition& p, Timestamp now);
bool in_range(double lat, double lon);

// ---------------------------------------------------------------------------
// Contact channels

enum class Channel { Email, Facebook, Phone, Whatsapp };
inline constexpr std::array<Channel, 4> kChannels = {
    Channel::Email, Channel::Facebook, Channel::Phone, Channel::Whatsapp};

std::string_view to_string(Channel c);
std::optional<Channel> parse_channel(std::string_view s);

struct ContactDetail {
  bool enabled = false;
  std::string detail;

  friend bool operator==(const ContactDetail&, const ContactDetail&) = default;
};

struct ContactMethods {
  ContactDetail email;
  ContactDetail facebook;
  ContactDetail phone;
  ContactDetail whatsapp;

  const ContactDetail& get(Channel c) const;
  ContactDetail& get(Channel c);
  bool any_enabled() const;

  friend bool operator==(const ContactMethods&, const ContactMethods&) = default;
};

// Validates every enabled channel and rewrites details into canonical form
// (phone numbers to "+<digits>", facebook URLs to bare handles). Disabled
// channels keep their detail untouched. Throws InvalidDetail naming the
// channel.
ContactMethods normalize_contact_methods(const ContactMethods& cm);

bool is_valid_email(std::string_view email);
// "+49 251 83-12345", "0049..." -> "+4925183 12345" without separators.
// Returns nullopt when the result is not 7..15 digits after '+'.
std::optional<std::string> normalize_phone(std::string_view raw);

struct ContactLink {
  Channel channel;
  std::string label;
  std::string uri;

  friend bool operator==(const ContactLink&, const ContactLink&) = default;
};

// One link per enabled channel in the fixed order email, facebook, phone,
// whatsapp. Throws InvalidDetail on a malformed enabled channel.
std::vector<ContactLink> build_contact_links(const ContactMethods& cm);

// ---------------------------------------------------------------------------
// Users

enum class ApprovalStatus { Pending, Approved, Rejected };
enum class RejectionReason { OutsideRegion, InsufficientInfo, DuplicateIdentity, Other };
enum class UserGroup { ForcedMigrant, LocalFreecycler, Moderator, Unspecified };

std::string_view to_string(ApprovalStatus s);
std::string_view to_string(RejectionReason r);
std::string_view to_string(UserGroup g);
std::optional<ApprovalStatus> parse_approval_status(std::string_view s);
// Accepts both "outside_region" and "outside-region".
std::optional<RejectionReason> parse_rejection_reason(std::string_view s);
std::optional<UserGroup> parse_user_group(std::string_view s);

struct ApprovalState {
  ApprovalStatus status = ApprovalStatus::Pending;
  std::optional<RejectionReason> reason;
  std::optional<Timestamp> decided_at;
  std::optional<UserId> decided_by;

  friend bool operator==(const ApprovalState&, const ApprovalState&) = default;
};

struct ConsentState {
  bool study_consent = false;
  bool location_logging_consent = false;
  std::optional<Timestamp> consented_at;
  std::string locale_shown;
  bool demographics_done = false;
  bool lsns_done = false;

  friend bool operator==(const ConsentState&, const ConsentState&) = default;
};

struct UserProfile {
  UserId user_id;
  std::string display_name;
  std::optional<std::string> picture_ref;
  ContactMethods contact_methods;
  std::string locale = "en";
  std::optional<GeoPosition> home_position;
  std::optional<GeoPosition> last_position;
  ApprovalState approval;
  long long completed_deliveries = 0;
  std::set<UserId> blocked_ids;
  ConsentState consent;
  UserGroup user_group = UserGroup::Unspecified;
  Timestamp created_at{};

  bool is_moderator() const { return user_group == UserGroup::Moderator; }

  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

enum class NotificationKind { WelcomeEmail, ApprovalPendingNotice, RejectionNotice };
std::string_view to_string(NotificationKind k);
std::optional<NotificationKind> parse_notification_kind(std::string_view s);

enum class ApprovalDecision { Approve, Reject };

struct ApprovalOutcome {
  UserProfile user;
  std::vector<NotificationKind> notifications;
};

// Pending -> Approved | Rejected, exactly once. Approve emits WelcomeEmail,
// Reject emits RejectionNotice. Throws NotPending or MissingReason.
ApprovalOutcome transition_approval(const UserProfile& user, ApprovalDecision decision,
                                    std::optional<RejectionReason> reason,
                                    const UserId& moderator, Timestamp now);

// ---------------------------------------------------------------------------
// Offers

enum class OfferStatus { Open, Completed, Withdrawn, Removed };
std::string_view to_string(OfferStatus s);
std::optional<OfferStatus> parse_offer_status(std::string_view s);
bool is_terminal(OfferStatus s);

struct Offer {
  OfferId offer_id;
  UserId owner_id;
  std::string title;
  std::optional<std::string> description;
  std::optional<std::string> photo_ref;
  GeoPosition pickup_position;
  OfferStatus status = OfferStatus::Open;
  Timestamp created_at{};
  std::optional<Timestamp> completed_at;
  std::optional<UserId> collector_id;
  std::optional<UserId> removed_by;

  friend bool operator==(const Offer&, const Offer&) = default;
};

// Throws ValidationFailed for an empty or over-long title, InvalidPosition for
// the pickup position.
void validate_new_offer(const Offer& offer, Timestamp now);

struct Actor {
  UserId user_id;
  bool moderator = false;
};

struct CompleteEvent {
  std::optional<UserId> collector_id;
};
struct WithdrawEvent {};
struct RemoveEvent {};
using OfferEvent = std::variant<CompleteEvent, WithdrawEvent, RemoveEvent>;

struct OfferOutcome {
  Offer offer;
  // Added to the owner's completed_deliveries by the caller.
  long long owner_star_delta = 0;
  // Users that receive a PendingReview task (owner first).
  std::vector<UserId> review_for;
};

// Open -> Completed | Withdrawn | Removed. Complete and Withdraw are owner-only,
// Remove is moderator-only. Throws NotOpen, NotAuthorized or ValidationFailed
// (collector equal to owner).
OfferOutcome transition_offer(const Offer& offer, const OfferEvent& event,
                              const Actor& actor, Timestamp now);

long long derive_star_count(const UserId& user_id, std::span<const Offer> offers);

// ---------------------------------------------------------------------------
// Blocking and visibility

// Idempotent. Throws SelfBlock or UnknownUser.
UserProfile block_user(const UserProfile& actor, const UserId& target, bool target_exists);

// Owner always sees their own offers. Anyone else sees an Open offer when the
// owner is available and neither side has blocked the other.
bool is_visible(const Offer& offer, const UserProfile& owner, const UserProfile& viewer,
                bool owner_available);

// ---------------------------------------------------------------------------
// JSON mapping (storage and API share it)

void to_json(nlohmann::json& j, const GeoPosition& p);
void from_json(const nlohmann::json& j, GeoPosition& p);
void to_json(nlohmann::json& j, const ContactMethods& c);
void from_json(const nlohmann::json& j, ContactMethods& c);
void to_json(nlohmann::json& j, const ContactLink& l);
void to_json(nlohmann::json& j, const ApprovalState& a);
void from_json(const nlohmann::json& j, ApprovalState& a);
void to_json(nlohmann::json& j, const ConsentState& c);
void from_json(const nlohmann::json& j, ConsentState& c);
void to_json(nlohmann::json& j, const UserProfile& u);
void from_json(const nlohmann::json& j, UserProfile& u);
void to_json(nlohmann::json& j, const Offer& o);
void from_json(const nlohmann::json& j, Offer& o);

}  // namespace geofreebie
