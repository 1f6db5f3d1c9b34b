#include "geofreebie/study.hpp"

#include "geofreebie/json_util.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace geofreebie::study {

using nlohmann::json;

ConsentState record_consent(const UserProfile& user, bool study_consent,
                            bool location_logging_consent, const std::string& locale_shown,
                            Timestamp now) {
  if (user.approval.status != ApprovalStatus::Approved)
    throw Error(ErrorCode::NotApproved, "consent can only be recorded for approved users");
  ConsentState c = user.consent;
  c.study_consent = study_consent;
  c.location_logging_consent = study_consent && location_logging_consent;
  c.consented_at = now;
  c.locale_shown = locale_shown;
  return c;
}

std::string_view to_string(GateStep s) {
  switch (s) {
    case GateStep::Consent: return "consent";
    case GateStep::Demographics: return "demographics";
    case GateStep::Lsns: return "lsns";
  }
  return "consent";
}

GateVerdict gate_access(const ConsentState& consent) {
  GateVerdict v;
  if (!consent.study_consent) v.missing.push_back(GateStep::Consent);
  if (!consent.demographics_done) v.missing.push_back(GateStep::Demographics);
  if (!consent.lsns_done) v.missing.push_back(GateStep::Lsns);
  v.full = v.missing.empty();
  return v;
}

// ---------------------------------------------------------------------------

int score_lsns6(const Lsns6Response& r) {
  return std::accumulate(r.items().begin(), r.items().end(), 0);
}

double score_sus(const SusResponse& r) {
  int total = 0;
  for (std::size_t i = 0; i < SusResponse::kItems; ++i) {
    // i is 0-based: even index = odd-numbered item.
    total += (i % 2 == 0) ? r[i] - 1 : 5 - r[i];
  }
  return total * 2.5;
}

const GradeTables& default_grade_tables() {
  static const GradeTables tables{
      {{0.0, "worst imaginable"},
       {20.3, "awful"},
       {35.7, "poor"},
       {50.9, "ok"},
       {71.4, "good"},
       {85.5, "excellent"},
       {90.9, "best imaginable"}},
      {{0.0, "F"},
       {51.7, "D"},
       {62.7, "C-"},
       {65.0, "C"},
       {71.1, "C+"},
       {72.6, "B-"},
       {74.1, "B"},
       {77.2, "B+"},
       {78.9, "A-"},
       {80.8, "A"},
       {84.1, "A+"}},
  };
  return tables;
}

namespace {

const std::string& band_for(double score, const std::vector<GradeBand>& bands) {
  if (bands.empty()) throw Error(ErrorCode::ValidationFailed, "empty grade table");
  const GradeBand* hit = &bands.front();
  for (const auto& b : bands)
    if (score >= b.lower) hit = &b;
  return hit->label;
}

}  // namespace

SusGrade sus_grade(double score, const GradeTables& tables) {
  if (!(score >= 0.0 && score <= 100.0))
    throw Error(ErrorCode::OutOfRange, "SUS score outside [0, 100]", {{"score", score}});
  return {band_for(score, tables.adjectives), band_for(score, tables.letters)};
}

std::string_view to_string(UsefulnessDimension d) {
  switch (d) {
    case UsefulnessDimension::IncreasedContact: return "increased_contact";
    case UsefulnessDimension::ContactWithStrangers: return "contact_with_strangers";
    case UsefulnessDimension::Solidarity: return "solidarity";
    case UsefulnessDimension::Reliability: return "reliability";
    case UsefulnessDimension::Trust: return "trust";
    case UsefulnessDimension::Community: return "community";
    case UsefulnessDimension::NewFriendships: return "new_friendships";
    case UsefulnessDimension::NetworkSize: return "network_size";
    case UsefulnessDimension::ReducedIsolation: return "reduced_isolation";
  }
  return "increased_contact";
}

std::optional<UsefulnessDimension> parse_usefulness_dimension(std::string_view s) {
  for (auto d : kUsefulnessDimensions)
    if (to_string(d) == s) return d;
  return std::nullopt;
}

UsefulnessResponse UsefulnessResponse::from(const std::map<UsefulnessDimension, int>& answers) {
  if (answers.size() != kUsefulnessDimensions.size())
    throw Error(ErrorCode::ValidationFailed, "all nine usefulness dimensions are required",
                {{"answered", answers.size()}});
  UsefulnessResponse r;
  for (const auto& [dim, value] : answers) {
    if (value < 1 || value > 5)
      throw Error(ErrorCode::OutOfRange, "usefulness answer outside [1, 5]",
                  {{"dimension", std::string(to_string(dim))}, {"value", value}});
    r.answers_[static_cast<std::size_t>(dim)] = value;
  }
  return r;
}

UsefulnessResponse UsefulnessResponse::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ValidationFailed, "usefulness answers must be an object");
  std::map<UsefulnessDimension, int> answers;
  for (const auto& [key, value] : j.items()) {
    auto dim = parse_usefulness_dimension(key);
    if (!dim) throw Error(ErrorCode::ValidationFailed, "unknown usefulness dimension: " + key);
    if (!value.is_number_integer())
      throw Error(ErrorCode::ValidationFailed, "usefulness answers must be integers");
    answers[*dim] = value.get<int>();
  }
  return from(answers);
}

UsefulnessResponse UsefulnessResponse::uniform(int value) {
  std::map<UsefulnessDimension, int> answers;
  for (auto d : kUsefulnessDimensions) answers[d] = value;
  return from(answers);
}

json UsefulnessResponse::to_json() const {
  json j = json::object();
  for (auto d : kUsefulnessDimensions) j[std::string(study::to_string(d))] = (*this)[d];
  return j;
}

double median(std::vector<int> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyGroup, "median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

UsefulnessAggregate aggregate_usefulness(std::span<const GroupedUsefulness> responses) {
  std::map<UserGroup, std::map<UsefulnessDimension, std::vector<int>>> samples;
  for (const auto& r : responses)
    for (auto d : kUsefulnessDimensions) samples[r.group][d].push_back(r.response[d]);

  UsefulnessAggregate out;
  for (const auto& [group, dims] : samples) {
    for (const auto& [dim, values] : dims) {
      DimensionStats s;
      s.n = static_cast<int>(values.size());
      for (int v : values) {
        if (v >= 4)
          ++s.agree;
        else if (v == 3)
          ++s.neutral;
        else
          ++s.disagree;
      }
      s.median = median(values);
      out[group][dim] = s;
    }
  }
  return out;
}

const std::map<UsefulnessDimension, DimensionStats>& group_stats(const UsefulnessAggregate& agg,
                                                                 UserGroup group) {
  auto it = agg.find(group);
  if (it == agg.end())
    throw Error(ErrorCode::EmptyGroup, "no responses for group " + std::string(to_string(group)),
                {{"group", std::string(to_string(group))}});
  return it->second;
}

// ---------------------------------------------------------------------------

const InstrumentDef& InstrumentSet::at(const std::string& id) const {
  auto it = instruments.find(id);
  if (it == instruments.end()) throw Error(ErrorCode::NotFound, "unknown instrument " + id);
  return it->second;
}

namespace {

std::vector<GradeBand> parse_bands(const json& j) {
  std::vector<GradeBand> bands;
  for (const auto& b : j) bands.push_back({b.at("lower").get<double>(), b.at("label").get<std::string>()});
  if (bands.empty() || bands.front().lower != 0.0)
    throw Error(ErrorCode::ParseError, "grade table must start at 0");
  for (std::size_t i = 1; i < bands.size(); ++i)
    if (bands[i].lower <= bands[i - 1].lower)
      throw Error(ErrorCode::ParseError, "grade table lower bounds must ascend");
  return bands;
}

}  // namespace

InstrumentSet parse_instruments(const json& j) {
  InstrumentSet set;
  try {
    for (const auto& def : j.at("instruments")) {
      InstrumentDef d;
      d.id = def.at("id").get<std::string>();
      d.item_keys = def.at("items").get<std::vector<std::string>>();
      d.anchor_keys = def.value("anchors", std::vector<std::string>{});
      d.scale_min = def.at("scale").at("min").get<int>();
      d.scale_max = def.at("scale").at("max").get<int>();
      if (d.item_keys.empty() || d.scale_min > d.scale_max)
        throw Error(ErrorCode::ParseError, "instrument " + d.id + " is malformed");
      if (!d.anchor_keys.empty() &&
          d.anchor_keys.size() != static_cast<std::size_t>(d.scale_max - d.scale_min + 1))
        throw Error(ErrorCode::ParseError, "instrument " + d.id + " anchor count mismatch");
      set.instruments.emplace(d.id, std::move(d));
    }
    if (auto g = j.find("sus_grades"); g != j.end()) {
      set.grades.adjectives = parse_bands(g->at("adjectives"));
      set.grades.letters = parse_bands(g->at("letters"));
    }
    set.lsns_isolation_cutoff = j.value("lsns_isolation_cutoff", 12);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("instrument file: ") + e.what());
  }
  return set;
}

InstrumentSet load_instruments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open instrument file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, "instrument file " + path.string() + ": " + e.what());
  }
  return parse_instruments(j);
}

// ---------------------------------------------------------------------------

Demographics parse_demographics(const json& j) {
  Demographics d;
  d.gender = jsonu::require<std::string>(j, "gender");
  d.age = jsonu::require<int>(j, "age");
  d.country_of_origin = jsonu::require<std::string>(j, "country_of_origin");
  const auto group = parse_user_group(jsonu::require<std::string>(j, "user_group"));
  if (!group || *group == UserGroup::Moderator)
    throw Error(ErrorCode::ValidationFailed, "user_group must be forced_migrant, local_freecycler or unspecified",
                {{"field", "user_group"}});
  d.user_group = *group;
  if (d.age < 14 || d.age > 120)
    throw Error(ErrorCode::ValidationFailed, "age out of range", {{"field", "age"}});
  return d;
}

json demographics_to_json(const Demographics& d) {
  return {{"gender", d.gender},
          {"age", d.age},
          {"country_of_origin", d.country_of_origin},
          {"user_group", std::string(to_string(d.user_group))}};
}

// ---------------------------------------------------------------------------

std::string_view to_string(PlaceCategory p) {
  switch (p) {
    case PlaceCategory::MyHome: return "my_home";
    case PlaceCategory::TheirHome: return "their_home";
    case PlaceCategory::PublicPlace: return "public_place";
    case PlaceCategory::Other: return "other";
  }
  return "other";
}

std::string_view to_string(ContactChannelUsed c) {
  switch (c) {
    case ContactChannelUsed::Email: return "email";
    case ContactChannelUsed::Facebook: return "facebook";
    case ContactChannelUsed::Phone: return "phone";
    case ContactChannelUsed::Whatsapp: return "whatsapp";
    case ContactChannelUsed::Other: return "other";
  }
  return "other";
}

std::optional<PlaceCategory> parse_place_category(std::string_view s) {
  for (auto v : {PlaceCategory::MyHome, PlaceCategory::TheirHome, PlaceCategory::PublicPlace,
                 PlaceCategory::Other})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<ContactChannelUsed> parse_contact_channel_used(std::string_view s) {
  for (auto v : {ContactChannelUsed::Email, ContactChannelUsed::Facebook, ContactChannelUsed::Phone,
                 ContactChannelUsed::Whatsapp, ContactChannelUsed::Other})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::Pending: return "pending";
    case TaskState::Done: return "done";
    case TaskState::Dismissed: return "dismissed";
  }
  return "pending";
}

std::optional<TaskState> parse_task_state(std::string_view s) {
  for (auto v : {TaskState::Pending, TaskState::Done, TaskState::Dismissed})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::string review_task_id(const OfferId& offer_id, const UserId& user_id) {
  return "rt." + offer_id + "." + user_id;
}

std::vector<PendingReviewTask> create_pending_review(
    const Offer& completed, Timestamp now,
    const std::function<bool(const std::string& task_id)>& exists) {
  if (completed.status != OfferStatus::Completed)
    throw Error(ErrorCode::ValidationFailed, "review tasks require a completed offer");
  std::vector<UserId> participants{completed.owner_id};
  if (completed.collector_id) participants.push_back(*completed.collector_id);
  std::vector<PendingReviewTask> tasks;
  for (const auto& user : participants) {
    auto id = review_task_id(completed.offer_id, user);
    if (exists && exists(id)) continue;
    tasks.push_back({std::move(id), user, completed.offer_id, now, TaskState::Pending});
  }
  return tasks;
}

SubmittedReview submit_review(const PendingReviewTask& task, HandOverReview review,
                              bool review_already_exists, Timestamp now) {
  if (review.reviewer_id != task.user_id || review.offer_id != task.offer_id)
    throw Error(ErrorCode::ReviewerMismatch, "review does not belong to this task");
  if (review_already_exists || task.state == TaskState::Done)
    throw Error(ErrorCode::DuplicateReview, "a review for this hand-over already exists");
  if (task.state != TaskState::Pending)
    throw Error(ErrorCode::TaskNotPending, "review task is no longer pending",
                {{"state", std::string(to_string(task.state))}});
  for (auto [name, value] : {std::pair{"satisfaction", review.satisfaction},
                             std::pair{"likely_repeat", review.likely_repeat}}) {
    if (value < 1 || value > 5)
      throw Error(ErrorCode::ValidationFailed, std::string(name) + " must be in [1, 5]",
                  {{"field", name}});
  }
  review.submitted_at = now;
  PendingReviewTask done = task;
  done.state = TaskState::Done;
  return {std::move(review), std::move(done)};
}

PendingReviewTask dismiss_review(const PendingReviewTask& task, const UserId& user) {
  if (task.user_id != user) throw Error(ErrorCode::ReviewerMismatch, "task belongs to another user");
  if (task.state != TaskState::Pending)
    throw Error(ErrorCode::TaskNotPending, "review task is no longer pending",
                {{"state", std::string(to_string(task.state))}});
  PendingReviewTask out = task;
  out.state = TaskState::Dismissed;
  return out;
}

void to_json(json& j, const HandOverReview& r) {
  j = json{{"offer_id", r.offer_id},
           {"reviewer_id", r.reviewer_id},
           {"counterparty_id", jsonu::opt(r.counterparty_id)},
           {"place", r.place},
           {"place_category",
            r.place_category ? json(std::string(to_string(*r.place_category))) : json(nullptr)},
           {"contact_channel", std::string(to_string(r.contact_channel))},
           {"satisfaction", r.satisfaction},
           {"likely_repeat", r.likely_repeat},
           {"submitted_at", jsonu::ts(r.submitted_at)}};
}

void from_json(const json& j, HandOverReview& r) {
  r.offer_id = j.at("offer_id").get<std::string>();
  r.reviewer_id = j.at("reviewer_id").get<std::string>();
  r.counterparty_id = jsonu::get_opt<std::string>(j, "counterparty_id");
  r.place = j.value("place", std::string{});
  r.place_category.reset();
  if (auto p = jsonu::get_opt<std::string>(j, "place_category")) r.place_category = parse_place_category(*p);
  r.contact_channel = parse_contact_channel_used(j.value("contact_channel", std::string("other")))
                          .value_or(ContactChannelUsed::Other);
  r.satisfaction = j.at("satisfaction").get<int>();
  r.likely_repeat = j.at("likely_repeat").get<int>();
  r.submitted_at = jsonu::ts(j.at("submitted_at"));
}

void to_json(json& j, const PendingReviewTask& t) {
  j = json{{"task_id", t.task_id},
           {"user_id", t.user_id},
           {"offer_id", t.offer_id},
           {"created_at", jsonu::ts(t.created_at)},
           {"state", std::string(to_string(t.state))}};
}

void from_json(const json& j, PendingReviewTask& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.user_id = j.at("user_id").get<std::string>();
  t.offer_id = j.at("offer_id").get<std::string>();
  t.created_at = jsonu::ts(j.at("created_at"));
  t.state = parse_task_state(j.at("state").get<std::string>()).value_or(TaskState::Pending);
}

}  // namespace geofreebie::study
