#include "geofreebie/telemetry.hpp"

#include "geofreebie/json_util.hpp"

#include <cmath>
#include <cstdlib>

namespace geofreebie::telemetry {

using nlohmann::json;

namespace {

constexpr std::pair<Action, const char*> kActionNames[] = {
    {Action::Signup, "signup"},
    {Action::Login, "login"},
    {Action::Logout, "logout"},
    {Action::UpdateProfile, "update_profile"},
    {Action::UpdateSettings, "update_settings"},
    {Action::UpdateLocation, "update_location"},
    {Action::CreateOffer, "create_offer"},
    {Action::CompleteOffer, "complete_offer"},
    {Action::WithdrawOffer, "withdraw_offer"},
    {Action::ReportOffer, "report_offer"},
    {Action::ViewMap, "view_map"},
    {Action::ViewList, "view_list"},
    {Action::Refresh, "refresh"},
    {Action::SubmitReview, "submit_review"},
    {Action::DismissReview, "dismiss_review"},
    {Action::BlockUser, "block_user"},
    {Action::ChangeLocale, "change_locale"},
    {Action::GiveConsent, "give_consent"},
    {Action::SubmitSurvey, "submit_survey"},
    {Action::ApproveUser, "approve_user"},
    {Action::RejectUser, "reject_user"},
    {Action::RemoveOffer, "remove_offer"},
    {Action::PromoteUser, "promote_user"},
    {Action::UploadPhoto, "upload_photo"},
};

}  // namespace

std::string_view to_string(Action a) {
  for (const auto& [action, name] : kActionNames)
    if (action == a) return name;
  return "login";
}

std::optional<Action> parse_action(std::string_view s) {
  for (const auto& [action, name] : kActionNames)
    if (s == name) return action;
  return std::nullopt;
}

const std::vector<Action>& all_actions() {
  static const std::vector<Action> actions = [] {
    std::vector<Action> v;
    for (const auto& [action, _] : kActionNames) v.push_back(action);
    return v;
  }();
  return actions;
}

void to_json(json& j, const TelemetryEvent& e) {
  j = json{{"event_id", e.event_id},
           {"user_id", e.user_id},
           {"action", std::string(to_string(e.action))},
           {"entity_id", jsonu::opt(e.entity_id)},
           {"at", jsonu::ts(e.at)},
           {"position", jsonu::opt(e.position)}};
}

void from_json(const json& j, TelemetryEvent& e) {
  e.event_id = j.value("event_id", std::uint64_t{0});
  e.user_id = j.at("user_id").get<std::string>();
  auto action = parse_action(j.at("action").get<std::string>());
  if (!action) throw Error(ErrorCode::ParseError, "unknown telemetry action");
  e.action = *action;
  e.entity_id = jsonu::get_opt<std::string>(j, "entity_id");
  e.at = jsonu::ts(j.at("at"));
  e.position = jsonu::get_opt<GeoPosition>(j, "position");
}

TelemetryEvent EventLog::log_event(EventDraft draft, const ConsentLookup& consent) {
  const auto state = consent(draft.user_id);
  if (!state) throw Error(ErrorCode::UnknownUser, "telemetry for unknown user", {{"user_id", draft.user_id}});
  if (!state->location_logging_consent) draft.position.reset();

  TelemetryEvent e{0, std::move(draft.user_id), draft.action, std::move(draft.entity_id), draft.at,
                   std::move(draft.position)};
  // The sequence number is assigned by the store's sequencer; the stored
  // payload omits it and it is re-attached on read.
  json payload = e;
  payload.erase("event_id");
  e.event_id = store_.append_log(payload.dump());
  return e;
}

std::vector<TelemetryEvent> EventLog::read(std::uint64_t from_seq) const {
  return read_events(store_, from_seq);
}

std::vector<TelemetryEvent> read_events(const store::Store& store, std::uint64_t from_seq) {
  std::vector<TelemetryEvent> out;
  for (const auto& entry : store.read_log(from_seq)) {
    auto e = json::parse(entry.payload).get<TelemetryEvent>();
    e.event_id = entry.seq;
    out.push_back(std::move(e));
  }
  return out;
}

TallyReport tally(std::span<const TelemetryEvent> events, const Window& window) {
  if (window.start > window.end)
    throw Error(ErrorCode::BadWindow, "window start is after its end");
  TallyReport r;
  r.window = window;
  for (const auto& e : events) {
    if (e.at < window.start || e.at > window.end) continue;
    ++r.by_action[e.action];
    ++r.by_user[e.user_id];
    ++r.by_action_user[{e.action, e.user_id}];
    ++r.total;
  }
  return r;
}

json to_json(const TallyReport& t) {
  json by_action = json::object();
  for (const auto& [a, n] : t.by_action) by_action[std::string(to_string(a))] = n;
  json by_user = json::object();
  for (const auto& [u, n] : t.by_user) by_user[u] = n;
  json by_action_user = json::object();
  for (const auto& [key, n] : t.by_action_user)
    by_action_user[std::string(to_string(key.first))][key.second] = n;
  json window = json::object();
  if (t.window.start != Timestamp::min()) window["start"] = format_timestamp(t.window.start);
  if (t.window.end != Timestamp::max()) window["end"] = format_timestamp(t.window.end);
  return {{"total", t.total},
          {"by_action", by_action},
          {"by_user", by_user},
          {"by_action_user", by_action_user},
          {"window", window}};
}

long long round_half_up_tenths(long long numerator, long long denominator) {
  if (denominator <= 0) throw Error(ErrorCode::ValidationFailed, "denominator must be positive");
  // floor((10 * num / den) + 1/2) = floor((20 * num + den) / (2 * den))
  const long long n = 20 * numerator + denominator;
  const long long d = 2 * denominator;
  long long q = n / d;
  if ((n % d != 0) && ((n < 0) != (d < 0))) --q;
  return q;
}

std::string format_tenths(long long tenths) {
  const bool neg = tenths < 0;
  const long long a = std::llabs(tenths);
  return (neg ? "-" : "") + std::to_string(a / 10) + "." + std::to_string(a % 10);
}

std::string render_posting_rate(long long posts, long long users) {
  if (users <= 0) throw Error(ErrorCode::NoUsers, "posting rate needs at least one user");
  if (posts == 0) return "no posts";
  if (users >= posts) {
    // N = round(users / posts), half-up, in integers.
    const long long n = (2 * users + posts) / (2 * posts);
    const bool exact = users % posts == 0;
    return std::string(exact ? "" : "≈") + "1 post per " + std::to_string(n) +
           (n == 1 ? " user" : " users");
  }
  const long long n = (2 * posts + users) / (2 * users);
  const bool exact = posts % users == 0;
  return std::string(exact ? "" : "≈") + std::to_string(n) + " posts per user";
}

PostingRate posting_rate(long long offer_creations, long long user_count) {
  if (user_count <= 0) throw Error(ErrorCode::NoUsers, "posting rate needs at least one user");
  PostingRate r;
  r.posts_per_user = static_cast<double>(offer_creations) / static_cast<double>(user_count);
  r.users_per_post = offer_creations == 0
                         ? std::numeric_limits<double>::infinity()
                         : static_cast<double>(user_count) / static_cast<double>(offer_creations);
  r.rendered = render_posting_rate(offer_creations, user_count);
  return r;
}

std::map<UserGroup, GroupMean> lsns_group_stats(std::span<const GroupedScore> responses) {
  std::map<UserGroup, std::pair<long long, long long>> sums;
  for (const auto& r : responses) {
    auto& [sum, n] = sums[r.group];
    sum += r.score;
    ++n;
  }
  std::map<UserGroup, GroupMean> out;
  for (const auto& [group, sn] : sums)
    out[group] = GroupMean{round_half_up_tenths(sn.first, sn.second), sn.second};
  return out;
}

const GroupMean& group_mean(const std::map<UserGroup, GroupMean>& stats, UserGroup group) {
  auto it = stats.find(group);
  if (it == stats.end())
    throw Error(ErrorCode::EmptyGroup, "no LSNS responses for group " + std::string(to_string(group)),
                {{"group", std::string(to_string(group))}});
  return it->second;
}

}  // namespace geofreebie::telemetry
