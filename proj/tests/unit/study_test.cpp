#include "geofreebie/crypto.hpp"
#include "geofreebie/study.hpp"

#include "harness.hpp"
#include "oracles.hpp"

#include <fstream>
#include <random>
#include <sstream>

using namespace geofreebie;
using namespace geofreebie::study;

namespace {

UserProfile approved_user() {
  UserProfile u;
  u.user_id = "u1";
  u.approval.status = ApprovalStatus::Approved;
  return u;
}

SusResponse sus_of(const std::vector<int>& v) { return SusResponse::from(std::span<const int>(v)); }

std::vector<int> random_items(std::mt19937_64& rng, std::size_t n, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<int> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Consent

TEST(Consent, RecordsBothFlags) {
  const auto c = record_consent(approved_user(), true, true, "de", gt::t0());
  EXPECT_TRUE(c.study_consent);
  EXPECT_TRUE(c.location_logging_consent);
  EXPECT_EQ(c.consented_at, gt::t0());
  EXPECT_EQ(c.locale_shown, "de");
}

TEST(Consent, LocationLoggingIsSeparate) {
  const auto c = record_consent(approved_user(), true, false, "en", gt::t0());
  EXPECT_TRUE(c.study_consent);
  EXPECT_FALSE(c.location_logging_consent);
}

TEST(Consent, LocationWithoutStudyIsDropped) {
  const auto c = record_consent(approved_user(), false, true, "en", gt::t0());
  EXPECT_FALSE(c.study_consent);
  EXPECT_FALSE(c.location_logging_consent);
}

TEST(Consent, RequiresApproval) {
  UserProfile pending;
  EXPECT_CODE(record_consent(pending, true, true, "en", gt::t0()), ErrorCode::NotApproved);
}

TEST(Consent, KeepsSurveyFlags) {
  auto u = approved_user();
  u.consent.demographics_done = true;
  const auto c = record_consent(u, true, false, "en", gt::t0());
  EXPECT_TRUE(c.demographics_done);
  EXPECT_FALSE(c.lsns_done);
}

TEST(Gate, ExhaustiveEnumeration) {
  for (int bits = 0; bits < 8; ++bits) {
    ConsentState c;
    c.study_consent = bits & 1;
    c.demographics_done = bits & 2;
    c.lsns_done = bits & 4;
    const auto v = gate_access(c);
    std::vector<GateStep> expected;
    if (!c.study_consent) expected.push_back(GateStep::Consent);
    if (!c.demographics_done) expected.push_back(GateStep::Demographics);
    if (!c.lsns_done) expected.push_back(GateStep::Lsns);
    EXPECT_EQ(v.missing, expected) << bits;
    EXPECT_EQ(v.full, bits == 7) << bits;
  }
}

TEST(Gate, ConsentOnly) {
  ConsentState c;
  c.study_consent = true;
  EXPECT_EQ(gate_access(c).missing, (std::vector{GateStep::Demographics, GateStep::Lsns}));
  EXPECT_EQ(gate_access(ConsentState{}).missing,
            (std::vector{GateStep::Consent, GateStep::Demographics, GateStep::Lsns}));
}

// ---------------------------------------------------------------------------
// LSNS-6

TEST(Lsns, Fixtures) {
  EXPECT_EQ(score_lsns6(Lsns6Response::from({0, 0, 0, 0, 0, 0})), 0);
  EXPECT_EQ(score_lsns6(Lsns6Response::from({5, 5, 5, 5, 5, 5})), 30);
  EXPECT_EQ(score_lsns6(Lsns6Response::from({3, 2, 4, 1, 5, 0})), 15);
}

TEST(Lsns, RejectsMalformed) {
  EXPECT_CODE(Lsns6Response::from({1, 2, 3, 4, 5}), ErrorCode::ValidationFailed);
  EXPECT_CODE(Lsns6Response::from({1, 2, 3, 4, 5, 0, 1}), ErrorCode::ValidationFailed);
  EXPECT_CODE(Lsns6Response::from({1, 2, 3, 4, 5, 6}), ErrorCode::OutOfRange);
  EXPECT_CODE(Lsns6Response::from({-1, 2, 3, 4, 5, 0}), ErrorCode::OutOfRange);
}

TEST(Lsns, BoundedProperty) {
  std::mt19937_64 rng(606);
  for (int i = 0; i < 10000; ++i) {
    const auto items = random_items(rng, 6, 0, 5);
    const int s = score_lsns6(Lsns6Response::from(std::span<const int>(items)));
    int sum = 0;
    for (int x : items) sum += x;
    EXPECT_EQ(s, sum);
    EXPECT_GE(s, 0);
    EXPECT_LE(s, 30);
  }
}

// ---------------------------------------------------------------------------
// SUS

TEST(Sus, Fixtures) {
  EXPECT_DOUBLE_EQ(score_sus(sus_of({5, 1, 5, 1, 5, 1, 5, 1, 5, 1})), 100.0);
  EXPECT_DOUBLE_EQ(score_sus(sus_of({3, 3, 3, 3, 3, 3, 3, 3, 3, 3})), 50.0);
  EXPECT_DOUBLE_EQ(score_sus(sus_of({4, 2, 4, 2, 4, 2, 4, 2, 4, 2})), 75.0);
  EXPECT_DOUBLE_EQ(score_sus(sus_of({1, 5, 1, 5, 1, 5, 1, 5, 1, 5})), 0.0);
}

TEST(Sus, RejectsMalformed) {
  EXPECT_CODE(SusResponse::from({3, 3, 3}), ErrorCode::ValidationFailed);
  EXPECT_CODE(SusResponse::from({3, 3, 3, 3, 3, 3, 3, 3, 3, 0}), ErrorCode::OutOfRange);
  EXPECT_CODE(SusResponse::from({6, 3, 3, 3, 3, 3, 3, 3, 3, 3}), ErrorCode::OutOfRange);
}

TEST(Sus, MatchesOracleAndBounds) {
  std::mt19937_64 rng(1010);
  for (int i = 0; i < 10000; ++i) {
    const auto items = random_items(rng, 10, 1, 5);
    const double s = score_sus(sus_of(items));
    EXPECT_NEAR(s, oracle::sus(items), 1e-9);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 100.0);
  }
}

TEST(Sus, OddItemLinearity) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 5000; ++i) {
    auto items = random_items(rng, 10, 1, 5);
    const std::size_t k = 2 * (rng() % 5);  // zero-based index of an odd-numbered item
    if (items[k] == 5) items[k] = 4;
    const double before = score_sus(sus_of(items));
    ++items[k];
    EXPECT_DOUBLE_EQ(score_sus(sus_of(items)) - before, 2.5);
  }
}

TEST(SusGrade, PinnedPoint) {
  EXPECT_EQ(sus_grade(82.6), (SusGrade{"good", "A"}));
}

TEST(SusGrade, FloorAndCeiling) {
  const auto& t = default_grade_tables();
  EXPECT_EQ(sus_grade(0.0), (SusGrade{t.adjectives.front().label, t.letters.front().label}));
  EXPECT_EQ(sus_grade(100.0), (SusGrade{t.adjectives.back().label, t.letters.back().label}));
  EXPECT_CODE(sus_grade(-0.1), ErrorCode::OutOfRange);
  EXPECT_CODE(sus_grade(100.1), ErrorCode::OutOfRange);
}

TEST(SusGrade, MonotoneOverScores) {
  const auto& t = default_grade_tables();
  auto rank = [](const std::vector<GradeBand>& bands, const std::string& label) {
    for (std::size_t i = 0; i < bands.size(); ++i)
      if (bands[i].label == label) return static_cast<int>(i);
    return -1;
  };
  int last_adj = 0, last_letter = 0;
  for (int tenths = 0; tenths <= 1000; ++tenths) {
    const auto g = sus_grade(tenths / 10.0);
    const int a = rank(t.adjectives, g.adjective), l = rank(t.letters, g.letter);
    ASSERT_GE(a, 0);
    ASSERT_GE(l, 0);
    EXPECT_GE(a, last_adj);
    EXPECT_GE(l, last_letter);
    last_adj = a;
    last_letter = l;
  }
}

TEST(SusGrade, CustomTables) {
  GradeTables t{{{0.0, "low"}, {50.0, "high"}}, {{0.0, "B"}, {90.0, "A"}}};
  EXPECT_EQ(sus_grade(49.9, t), (SusGrade{"low", "B"}));
  EXPECT_EQ(sus_grade(50.0, t), (SusGrade{"high", "B"}));
  EXPECT_EQ(sus_grade(95.0, t), (SusGrade{"high", "A"}));
}

// ---------------------------------------------------------------------------
// Usefulness

TEST(Usefulness, SingleUniformResponse) {
  const std::vector<GroupedUsefulness> rs{{UserGroup::LocalFreecycler, UsefulnessResponse::uniform(3)}};
  const auto agg = aggregate_usefulness(rs);
  const auto& g = group_stats(agg, UserGroup::LocalFreecycler);
  ASSERT_EQ(g.size(), 9u);
  for (const auto& [dim, s] : g) {
    EXPECT_DOUBLE_EQ(s.median, 3.0);
    EXPECT_EQ(s.neutral, 1);
    EXPECT_EQ(s.agree + s.disagree, 0);
  }
  EXPECT_CODE(group_stats(agg, UserGroup::ForcedMigrant), ErrorCode::EmptyGroup);
}

TEST(Usefulness, OppositeGroups) {
  auto with_isolation = [](int v) {
    std::map<UsefulnessDimension, int> m;
    for (auto d : kUsefulnessDimensions) m[d] = 3;
    m[UsefulnessDimension::ReducedIsolation] = v;
    return UsefulnessResponse::from(m);
  };
  const std::vector<GroupedUsefulness> rs{{UserGroup::ForcedMigrant, with_isolation(4)},
                                          {UserGroup::ForcedMigrant, with_isolation(5)},
                                          {UserGroup::LocalFreecycler, with_isolation(2)},
                                          {UserGroup::LocalFreecycler, with_isolation(2)}};
  const auto agg = aggregate_usefulness(rs);
  const auto a = group_stats(agg, UserGroup::ForcedMigrant).at(UsefulnessDimension::ReducedIsolation);
  const auto b = group_stats(agg, UserGroup::LocalFreecycler).at(UsefulnessDimension::ReducedIsolation);
  EXPECT_DOUBLE_EQ(a.median, 4.5);
  EXPECT_DOUBLE_EQ(b.median, 2.0);
  EXPECT_EQ(a.agree, 2);
  EXPECT_EQ(b.disagree, 2);
}

TEST(Usefulness, MixedFixtureAgainstBruteForce) {
  // 6 hand-written responses, 4 forced migrants and 2 local freecyclers.
  const std::vector<std::pair<UserGroup, std::vector<int>>> fixture{
      {UserGroup::ForcedMigrant, {5, 4, 4, 3, 4, 5, 2, 3, 5}},
      {UserGroup::ForcedMigrant, {4, 4, 5, 3, 3, 4, 1, 2, 4}},
      {UserGroup::ForcedMigrant, {3, 5, 4, 4, 4, 4, 2, 2, 5}},
      {UserGroup::ForcedMigrant, {4, 3, 3, 2, 5, 5, 3, 1, 4}},
      {UserGroup::LocalFreecycler, {2, 4, 3, 4, 4, 3, 1, 2, 2}},
      {UserGroup::LocalFreecycler, {3, 5, 4, 4, 3, 4, 2, 1, 1}},
  };
  std::vector<GroupedUsefulness> rs;
  for (const auto& [g, v] : fixture) {
    std::map<UsefulnessDimension, int> m;
    for (std::size_t i = 0; i < 9; ++i) m[kUsefulnessDimensions[i]] = v[i];
    rs.push_back({g, UsefulnessResponse::from(m)});
  }
  const auto agg = aggregate_usefulness(rs);
  for (auto group : {UserGroup::ForcedMigrant, UserGroup::LocalFreecycler}) {
    const auto& stats = group_stats(agg, group);
    for (std::size_t i = 0; i < 9; ++i) {
      std::vector<int> col;
      int agree = 0, neutral = 0, disagree = 0;
      for (const auto& [g, v] : fixture) {
        if (g != group) continue;
        col.push_back(v[i]);
        (v[i] >= 4 ? agree : v[i] == 3 ? neutral : disagree)++;
      }
      const auto& s = stats.at(kUsefulnessDimensions[i]);
      EXPECT_DOUBLE_EQ(s.median, oracle::median(col));
      EXPECT_EQ(s.agree, agree);
      EXPECT_EQ(s.neutral, neutral);
      EXPECT_EQ(s.disagree, disagree);
      EXPECT_EQ(s.n, static_cast<int>(col.size()));
    }
  }
}

TEST(Usefulness, CountsSumToGroupSizeProperty) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<GroupedUsefulness> rs;
    std::map<UserGroup, int> sizes;
    const int n = 1 + static_cast<int>(rng() % 25);
    for (int i = 0; i < n; ++i) {
      const auto g = rng() % 2 ? UserGroup::ForcedMigrant : UserGroup::LocalFreecycler;
      std::map<UsefulnessDimension, int> m;
      for (auto d : kUsefulnessDimensions) m[d] = 1 + static_cast<int>(rng() % 5);
      rs.push_back({g, UsefulnessResponse::from(m)});
      ++sizes[g];
    }
    const auto agg = aggregate_usefulness(rs);
    EXPECT_EQ(agg.size(), sizes.size());
    for (const auto& [g, dims] : agg)
      for (const auto& [d, s] : dims) {
        EXPECT_EQ(s.agree + s.neutral + s.disagree, sizes[g]);
        EXPECT_EQ(s.n, sizes[g]);
      }
  }
}

TEST(Usefulness, ResponseValidation) {
  std::map<UsefulnessDimension, int> m;
  for (auto d : kUsefulnessDimensions) m[d] = 3;
  m.erase(UsefulnessDimension::Trust);
  EXPECT_CODE(UsefulnessResponse::from(m), ErrorCode::ValidationFailed);
  m[UsefulnessDimension::Trust] = 6;
  EXPECT_CODE(UsefulnessResponse::from(m), ErrorCode::OutOfRange);
  auto j = UsefulnessResponse::uniform(4).to_json();
  EXPECT_EQ(j.size(), 9u);
  EXPECT_EQ(UsefulnessResponse::from_json(j)[UsefulnessDimension::NetworkSize], 4);
  j["sense_of_humour"] = 3;
  EXPECT_CODE(UsefulnessResponse::from_json(j), ErrorCode::ValidationFailed);
}

TEST(Median, EvenAndOdd) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_DOUBLE_EQ(median({5}), 5.0);
}

// ---------------------------------------------------------------------------
// Reviews

namespace {

Offer completed_offer(std::optional<UserId> collector) {
  Offer o;
  o.offer_id = "o1";
  o.owner_id = "owner";
  o.title = "Lamp";
  o.status = OfferStatus::Completed;
  o.collector_id = std::move(collector);
  return o;
}

HandOverReview review_by(const UserId& user) {
  HandOverReview r;
  r.offer_id = "o1";
  r.reviewer_id = user;
  r.place = "Prinzipalmarkt";
  r.place_category = PlaceCategory::PublicPlace;
  r.contact_channel = ContactChannelUsed::Whatsapp;
  r.satisfaction = 5;
  r.likely_repeat = 4;
  return r;
}

}  // namespace

TEST(Reviews, TaskCreation) {
  const auto two = create_pending_review(completed_offer("collector"), gt::t0());
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].user_id, "owner");
  EXPECT_EQ(two[1].user_id, "collector");
  EXPECT_EQ(two[0].state, TaskState::Pending);
  EXPECT_EQ(create_pending_review(completed_offer(std::nullopt), gt::t0()).size(), 1u);

  std::set<std::string> existing;
  for (const auto& t : two) existing.insert(t.task_id);
  const auto replay = create_pending_review(completed_offer("collector"), gt::t0(),
                                            [&](const std::string& id) { return existing.contains(id); });
  EXPECT_TRUE(replay.empty());

  auto open = completed_offer(std::nullopt);
  open.status = OfferStatus::Open;
  EXPECT_CODE(create_pending_review(open, gt::t0()), ErrorCode::ValidationFailed);
}

TEST(Reviews, TaskIdsAreDeterministic) {
  EXPECT_EQ(review_task_id("o1", "u1"), review_task_id("o1", "u1"));
  EXPECT_NE(review_task_id("o1", "u1"), review_task_id("o1", "u2"));
  EXPECT_NE(review_task_id("o1", "u1"), review_task_id("o2", "u1"));
}

TEST(Reviews, SubmitAndDuplicates) {
  const auto task = create_pending_review(completed_offer("collector"), gt::t0()).front();
  const auto later = gt::t0() + std::chrono::hours(1);
  const auto out = submit_review(task, review_by("owner"), false, later);
  EXPECT_EQ(out.task.state, TaskState::Done);
  EXPECT_EQ(out.review.submitted_at, later);
  EXPECT_EQ(out.review.offer_id, out.task.offer_id);
  EXPECT_EQ(out.review.reviewer_id, out.task.user_id);
  EXPECT_CODE(submit_review(out.task, review_by("owner"), true, later), ErrorCode::DuplicateReview);
  EXPECT_CODE(submit_review(task, review_by("owner"), true, later), ErrorCode::DuplicateReview);
  EXPECT_CODE(submit_review(task, review_by("stranger"), false, later), ErrorCode::ReviewerMismatch);
  auto bad = review_by("owner");
  bad.satisfaction = 0;
  EXPECT_CODE(submit_review(task, bad, false, later), ErrorCode::ValidationFailed);
}

TEST(Reviews, Dismissal) {
  const auto task = create_pending_review(completed_offer(std::nullopt), gt::t0()).front();
  const auto dismissed = dismiss_review(task, "owner");
  EXPECT_EQ(dismissed.state, TaskState::Dismissed);
  EXPECT_CODE(dismiss_review(dismissed, "owner"), ErrorCode::TaskNotPending);
  EXPECT_CODE(dismiss_review(task, "other"), ErrorCode::ReviewerMismatch);
  EXPECT_CODE(submit_review(dismissed, review_by("owner"), false, gt::t0()), ErrorCode::TaskNotPending);
}

TEST(Reviews, JsonRoundTrip) {
  auto r = review_by("owner");
  r.counterparty_id = "collector";
  r.submitted_at = gt::t0();
  const auto back = nlohmann::json(r).get<HandOverReview>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(r));
  const auto task = create_pending_review(completed_offer("c"), gt::t0()).front();
  EXPECT_EQ(nlohmann::json(task).get<PendingReviewTask>(), task);
}

// ---------------------------------------------------------------------------
// Instruments and demographics

TEST(Instruments, ShippedDefinitionsArePinned) {
  const auto path = gt::source_path("data/instruments.json");
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(crypto::sha256_hex(ss.str()), "947746ddcf05dd482ab7d7c078423fc700d424c62235af36aad2e8a9a27c4793");

  const auto set = load_instruments(path);
  EXPECT_EQ(set.at("lsns6").item_keys.size(), 6u);
  EXPECT_EQ(set.at("lsns6").scale_min, 0);
  EXPECT_EQ(set.at("lsns6").scale_max, 5);
  EXPECT_EQ(set.at("sus").item_keys.size(), 10u);
  EXPECT_EQ(set.at("usefulness").item_keys.size(), 9u);
  EXPECT_EQ(set.lsns_isolation_cutoff, 12);
  EXPECT_EQ(sus_grade(82.6, set.grades), (SusGrade{"good", "A"}));
  EXPECT_CODE(set.at("phq9"), ErrorCode::NotFound);
}

TEST(Demographics, Parsing) {
  const auto d = parse_demographics(
      {{"gender", "m"}, {"age", 34}, {"country_of_origin", "SY"}, {"user_group", "forced_migrant"}});
  EXPECT_EQ(d.age, 34);
  EXPECT_EQ(d.user_group, UserGroup::ForcedMigrant);
  EXPECT_CODE(parse_demographics({{"gender", "m"}, {"age", -3}, {"country_of_origin", "SY"}}),
              ErrorCode::ValidationFailed);
  EXPECT_CODE(parse_demographics({{"age", 20}, {"user_group", "astronaut"}}), ErrorCode::ValidationFailed);
}
