#pragma once

#include "geofreebie/domain.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace geofreebie::study {

// ---------------------------------------------------------------------------
// Consent and access gate

// Stores both flags with a timestamp. Location logging cannot outlive study
// consent, so (false, true) is stored as (false, false). Survey completion
// flags are carried over. Throws NotApproved.
ConsentState record_consent(const UserProfile& user, bool study_consent,
                            bool location_logging_consent, const std::string& locale_shown,
                            Timestamp now);

enum class GateStep { Consent, Demographics, Lsns };
std::string_view to_string(GateStep s);

struct GateVerdict {
  bool full = false;
  // Missing steps, always in the order consent, demographics, lsns.
  std::vector<GateStep> missing;

  friend bool operator==(const GateVerdict&, const GateVerdict&) = default;
};

GateVerdict gate_access(const ConsentState& consent);
inline GateVerdict gate_access(const UserProfile& user) { return gate_access(user.consent); }

// ---------------------------------------------------------------------------
// Instruments

// Fixed-length Likert-style response. Construction validates length and
// per-item bounds (throws ValidationFailed / OutOfRange), so a value of this
// type is always scorable.
template <std::size_t N, int Min, int Max>
class LikertResponse {
 public:
  static constexpr std::size_t kItems = N;
  static constexpr int kMin = Min;
  static constexpr int kMax = Max;

  static LikertResponse from(std::span<const int> items) {
    if (items.size() != N) {
      throw Error(ErrorCode::ValidationFailed,
                  "expected " + std::to_string(N) + " items, got " + std::to_string(items.size()),
                  {{"expected", N}, {"actual", items.size()}});
    }
    LikertResponse r;
    for (std::size_t i = 0; i < N; ++i) {
      if (items[i] < Min || items[i] > Max) {
        throw Error(ErrorCode::OutOfRange,
                    "item " + std::to_string(i + 1) + " outside [" + std::to_string(Min) + ", " +
                        std::to_string(Max) + "]",
                    {{"item", i + 1}, {"value", items[i]}});
      }
      r.items_[i] = items[i];
    }
    return r;
  }
  static LikertResponse from(std::initializer_list<int> items) {
    return from(std::span<const int>(items.begin(), items.size()));
  }

  const std::array<int, N>& items() const { return items_; }
  int operator[](std::size_t i) const { return items_[i]; }

 private:
  LikertResponse() = default;
  std::array<int, N> items_{};
};

// LSNS-6: six items scored 0..5 by anchor index.
using Lsns6Response = LikertResponse<6, 0, 5>;
// SUS: ten items on a 1..5 agreement scale.
using SusResponse = LikertResponse<10, 1, 5>;

int score_lsns6(const Lsns6Response& r);

// Standard SUS: odd items contribute (item - 1), even items (5 - item), sum
// scaled by 2.5. Items are 1-indexed in that description.
double score_sus(const SusResponse& r);

struct GradeBand {
  double lower = 0.0;  // inclusive lower bound
  std::string label;
};

struct GradeTables {
  std::vector<GradeBand> adjectives;  // ascending lower bounds, first at 0
  std::vector<GradeBand> letters;
};

// Bangor adjective ratings (band starts at the adjective's mean score) and the
// Sauro-Lewis curved grading scale.
const GradeTables& default_grade_tables();

struct SusGrade {
  std::string adjective;
  std::string letter;

  friend bool operator==(const SusGrade&, const SusGrade&) = default;
};

// Throws OutOfRange outside [0, 100].
SusGrade sus_grade(double score, const GradeTables& tables = default_grade_tables());

enum class UsefulnessDimension {
  IncreasedContact,
  ContactWithStrangers,
  Solidarity,
  Reliability,
  Trust,
  Community,
  NewFriendships,
  NetworkSize,
  ReducedIsolation,
};
inline constexpr std::array<UsefulnessDimension, 9> kUsefulnessDimensions = {
    UsefulnessDimension::IncreasedContact, UsefulnessDimension::ContactWithStrangers,
    UsefulnessDimension::Solidarity,       UsefulnessDimension::Reliability,
    UsefulnessDimension::Trust,            UsefulnessDimension::Community,
    UsefulnessDimension::NewFriendships,   UsefulnessDimension::NetworkSize,
    UsefulnessDimension::ReducedIsolation};

std::string_view to_string(UsefulnessDimension d);
std::optional<UsefulnessDimension> parse_usefulness_dimension(std::string_view s);

class UsefulnessResponse {
 public:
  // All nine dimensions exactly once, each in [1, 5].
  static UsefulnessResponse from(const std::map<UsefulnessDimension, int>& answers);
  static UsefulnessResponse from_json(const nlohmann::json& j);
  static UsefulnessResponse uniform(int value);

  int operator[](UsefulnessDimension d) const {
    return answers_[static_cast<std::size_t>(d)];
  }
  nlohmann::json to_json() const;

 private:
  std::array<int, 9> answers_{};
};

struct GroupedUsefulness {
  UserGroup group;
  UsefulnessResponse response;
};

struct DimensionStats {
  double median = 0.0;
  int agree = 0;     // >= 4
  int neutral = 0;   // == 3
  int disagree = 0;  // <= 2
  int n = 0;

  friend bool operator==(const DimensionStats&, const DimensionStats&) = default;
};

using UsefulnessAggregate =
    std::map<UserGroup, std::map<UsefulnessDimension, DimensionStats>>;

// Groups without responses are absent from the result.
UsefulnessAggregate aggregate_usefulness(std::span<const GroupedUsefulness> responses);

// Throws EmptyGroup when `group` has no responses.
const std::map<UsefulnessDimension, DimensionStats>& group_stats(const UsefulnessAggregate& agg,
                                                                 UserGroup group);

// Median of an unsorted sample; even sizes average the two central values.
double median(std::vector<int> values);

// Instrument definition file: instrument id, item keys into the localization
// bundle, response scale bounds.
struct InstrumentDef {
  std::string id;
  std::vector<std::string> item_keys;
  std::vector<std::string> anchor_keys;
  int scale_min = 1;
  int scale_max = 5;
};

struct InstrumentSet {
  std::map<std::string, InstrumentDef> instruments;
  GradeTables grades = default_grade_tables();
  // Reported in export metadata only; never applied to scoring.
  int lsns_isolation_cutoff = 12;

  const InstrumentDef& at(const std::string& id) const;
};

InstrumentSet parse_instruments(const nlohmann::json& j);
InstrumentSet load_instruments(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Demographics

struct Demographics {
  std::string gender;
  int age = 0;
  std::string country_of_origin;
  UserGroup user_group = UserGroup::Unspecified;
};

// Throws ValidationFailed.
Demographics parse_demographics(const nlohmann::json& j);
nlohmann::json demographics_to_json(const Demographics& d);

// ---------------------------------------------------------------------------
// Hand-over reviews

enum class PlaceCategory { MyHome, TheirHome, PublicPlace, Other };
enum class ContactChannelUsed { Email, Facebook, Phone, Whatsapp, Other };
std::string_view to_string(PlaceCategory p);
std::string_view to_string(ContactChannelUsed c);
std::optional<PlaceCategory> parse_place_category(std::string_view s);
std::optional<ContactChannelUsed> parse_contact_channel_used(std::string_view s);

struct HandOverReview {
  OfferId offer_id;
  UserId reviewer_id;
  std::optional<UserId> counterparty_id;
  std::string place;
  std::optional<PlaceCategory> place_category;
  ContactChannelUsed contact_channel = ContactChannelUsed::Other;
  int satisfaction = 3;
  int likely_repeat = 3;
  Timestamp submitted_at{};
};

enum class TaskState { Pending, Done, Dismissed };
std::string_view to_string(TaskState s);
std::optional<TaskState> parse_task_state(std::string_view s);

struct PendingReviewTask {
  std::string task_id;
  UserId user_id;
  OfferId offer_id;
  Timestamp created_at{};
  TaskState state = TaskState::Pending;

  friend bool operator==(const PendingReviewTask&, const PendingReviewTask&) = default;
};

// Deterministic per (offer, user); duplicate completion events map to the same
// task id, which is what makes task creation idempotent.
std::string review_task_id(const OfferId& offer_id, const UserId& user_id);

// One Pending task for the owner plus one for the collector when known,
// skipping any whose id `exists` already reports. Throws ValidationFailed if
// the offer is not Completed.
std::vector<PendingReviewTask> create_pending_review(
    const Offer& completed, Timestamp now,
    const std::function<bool(const std::string& task_id)>& exists = {});

struct SubmittedReview {
  HandOverReview review;
  PendingReviewTask task;
};

// Throws ReviewerMismatch, DuplicateReview, TaskNotPending or ValidationFailed.
SubmittedReview submit_review(const PendingReviewTask& task, HandOverReview review,
                              bool review_already_exists, Timestamp now);

// Throws ReviewerMismatch or TaskNotPending.
PendingReviewTask dismiss_review(const PendingReviewTask& task, const UserId& user);

void to_json(nlohmann::json& j, const HandOverReview& r);
void from_json(const nlohmann::json& j, HandOverReview& r);
void to_json(nlohmann::json& j, const PendingReviewTask& t);
void from_json(const nlohmann::json& j, PendingReviewTask& t);

}  // namespace geofreebie::study
