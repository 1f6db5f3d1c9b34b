#pragma once

#include "geofreebie/domain.hpp"
#include "geofreebie/store.hpp"

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace geofreebie::telemetry {

enum class Action {
  Signup,
  Login,
  Logout,
  UpdateProfile,
  UpdateSettings,
  UpdateLocation,
  CreateOffer,
  CompleteOffer,
  WithdrawOffer,
  ReportOffer,
  ViewMap,
  ViewList,
  Refresh,
  SubmitReview,
  DismissReview,
  BlockUser,
  ChangeLocale,
  GiveConsent,
  SubmitSurvey,
  ApproveUser,
  RejectUser,
  RemoveOffer,
  PromoteUser,
  UploadPhoto,
};

std::string_view to_string(Action a);
std::optional<Action> parse_action(std::string_view s);
const std::vector<Action>& all_actions();

struct TelemetryEvent {
  std::uint64_t event_id = 0;
  UserId user_id;
  Action action = Action::Login;
  std::optional<std::string> entity_id;
  Timestamp at{};
  std::optional<GeoPosition> position;

  friend bool operator==(const TelemetryEvent&, const TelemetryEvent&) = default;
};

struct EventDraft {
  UserId user_id;
  Action action = Action::Login;
  std::optional<std::string> entity_id;
  Timestamp at{};
  std::optional<GeoPosition> position;
};

// Returns the user's consent at log time, or nullopt for an unknown user.
using ConsentLookup = std::function<std::optional<ConsentState>(const UserId&)>;

void to_json(nlohmann::json& j, const TelemetryEvent& e);
void from_json(const nlohmann::json& j, TelemetryEvent& e);

// Append-only event log over the store's sequenced log. No update or delete.
class EventLog {
 public:
  explicit EventLog(store::Store& store) : store_(store) {}

  // Strips the position unless location logging consent is set at this
  // moment. Throws UnknownUser.
  TelemetryEvent log_event(EventDraft draft, const ConsentLookup& consent);

  std::vector<TelemetryEvent> read(std::uint64_t from_seq = 0) const;

 private:
  store::Store& store_;
};

// Decodes the store's log into events; event_id is the log sequence number.
std::vector<TelemetryEvent> read_events(const store::Store& store, std::uint64_t from_seq = 0);

struct Window {
  Timestamp start = Timestamp::min();
  Timestamp end = Timestamp::max();
};

struct TallyReport {
  std::map<Action, long long> by_action;
  std::map<UserId, long long> by_user;
  std::map<std::pair<Action, UserId>, long long> by_action_user;
  Window window;
  long long total = 0;

  friend bool operator==(const TallyReport& a, const TallyReport& b) {
    return a.by_action == b.by_action && a.by_user == b.by_user &&
           a.by_action_user == b.by_action_user && a.total == b.total;
  }
};

// Events with start <= at <= end. Throws BadWindow when start > end.
TallyReport tally(std::span<const TelemetryEvent> events, const Window& window = {});
nlohmann::json to_json(const TallyReport& t);

struct PostingRate {
  double posts_per_user = 0.0;
  double users_per_post = std::numeric_limits<double>::infinity();
  std::string rendered;
};

// Throws NoUsers when user_count is zero.
PostingRate posting_rate(long long offer_creations, long long user_count);
// "1 post per 118 users" when exact, "≈1 post per 6 users" when rounded.
std::string render_posting_rate(long long offer_creations, long long user_count);

// value = numerator / denominator rounded half-up to one decimal, returned in
// tenths. Integer arithmetic, so 17.25 rounds to 17.3 exactly.
long long round_half_up_tenths(long long numerator, long long denominator);
std::string format_tenths(long long tenths);

struct GroupedScore {
  UserGroup group;
  int score = 0;
};

struct GroupMean {
  long long tenths = 0;
  long long n = 0;
  double value() const { return static_cast<double>(tenths) / 10.0; }
};

// Per-group arithmetic mean, one decimal, half-up. Groups without responses
// are absent.
std::map<UserGroup, GroupMean> lsns_group_stats(std::span<const GroupedScore> responses);
// Throws EmptyGroup.
const GroupMean& group_mean(const std::map<UserGroup, GroupMean>& stats, UserGroup group);

}  // namespace geofreebie::telemetry
