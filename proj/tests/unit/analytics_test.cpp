#include "geofreebie/analytics.hpp"
#include "geofreebie/crypto.hpp"

#include "harness.hpp"

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

using namespace geofreebie;
using namespace geofreebie::analytics;
using gt::json;

namespace {

const std::string kKey = "golden-export-key-0001";

std::string slurp(const gt::fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

study::InstrumentSet instruments() { return study::load_instruments(gt::source_path("data/instruments.json")); }

Timestamp at(int minutes) { return gt::t0() + std::chrono::minutes(minutes); }

void put(store::Store& s, const char* kind, const std::string& id, const json& payload, Timestamp when) {
  s.put_if_version(kind, id, 0, payload.dump(), when);
}

// A small fixed trial written straight into the store, so ids and times are
// stable.
void seed_fixture(store::Store& s) {
  UserProfile a;
  a.user_id = "user-amal";
  a.display_name = "Amal";
  a.locale = "ar";
  a.user_group = UserGroup::ForcedMigrant;
  a.approval = {ApprovalStatus::Approved, std::nullopt, at(10), "moderator-1"};
  a.consent.study_consent = a.consent.location_logging_consent = true;
  a.consent.demographics_done = a.consent.lsns_done = true;
  a.created_at = at(0);
  a.completed_deliveries = 1;
  put(s, kinds::kUser, a.user_id, a, at(10));

  UserProfile b;
  b.user_id = "user-bernd";
  b.display_name = "Bernd";
  b.locale = "de";
  b.user_group = UserGroup::LocalFreecycler;
  b.approval = {ApprovalStatus::Approved, std::nullopt, at(11), "moderator-1"};
  b.consent.study_consent = true;
  b.consent.demographics_done = b.consent.lsns_done = true;
  b.created_at = at(1);
  put(s, kinds::kUser, b.user_id, b, at(11));

  UserProfile c;
  c.user_id = "user-carla";
  c.display_name = "Carla";
  c.approval = {ApprovalStatus::Rejected, RejectionReason::OutsideRegion, at(12), "moderator-1"};
  c.created_at = at(2);
  put(s, kinds::kUser, c.user_id, c, at(12));

  Offer o;
  o.offer_id = "offer-1";
  o.owner_id = a.user_id;
  o.title = "Kinderwagen \"fast neu\"\nmit Regenschutz";
  o.description = "ß and ش stay UTF-8";
  o.pickup_position = {51.9626, 7.6256, at(20)};
  o.created_at = at(20);
  o.status = OfferStatus::Completed;
  o.completed_at = at(90);
  o.collector_id = b.user_id;
  put(s, kinds::kOffer, o.offer_id, o, at(90));

  Offer o2;
  o2.offer_id = "offer-2";
  o2.owner_id = b.user_id;
  o2.title = "Bücherregal";
  o2.pickup_position = {51.95, 7.61, at(30)};
  o2.created_at = at(30);
  put(s, kinds::kOffer, o2.offer_id, o2, at(30));

  study::HandOverReview r;
  r.offer_id = o.offer_id;
  r.reviewer_id = a.user_id;
  r.counterparty_id = b.user_id;
  r.place = "vor dem Dom";
  r.place_category = study::PlaceCategory::PublicPlace;
  r.contact_channel = study::ContactChannelUsed::Whatsapp;
  r.satisfaction = 5;
  r.likely_repeat = 4;
  r.submitted_at = at(100);
  put(s, kinds::kReview, o.offer_id + "." + a.user_id, r, at(100));

  SurveyRecord lsns{a.user_id, "lsns6", json::array({3, 2, 4, 1, 5, 0}), 15.0, at(15)};
  put(s, kinds::kSurvey, survey_record_id(a.user_id, "lsns6"), lsns, at(15));
  SurveyRecord sus{b.user_id, "sus", json::array({4, 2, 4, 2, 4, 2, 4, 2, 4, 2}), 75.0, at(120)};
  put(s, kinds::kSurvey, survey_record_id(b.user_id, "sus"), sus, at(120));

  telemetry::EventLog log(s);
  const telemetry::ConsentLookup consent = [&](const UserId& id) -> std::optional<ConsentState> {
    if (id == a.user_id) return a.consent;
    if (id == b.user_id) return b.consent;
    return std::nullopt;
  };
  const GeoPosition here{51.9626, 7.6256, at(20)};
  log.log_event({a.user_id, telemetry::Action::CreateOffer, o.offer_id, at(20), here}, consent);
  log.log_event({b.user_id, telemetry::Action::ViewMap, std::nullopt, at(25), here}, consent);
  log.log_event({b.user_id, telemetry::Action::CreateOffer, o2.offer_id, at(30), here}, consent);
  log.log_event({a.user_id, telemetry::Action::CompleteOffer, o.offer_id, at(90), std::nullopt}, consent);
  log.log_event({a.user_id, telemetry::Action::SubmitReview, o.offer_id, at(100), std::nullopt}, consent);
}

}  // namespace

TEST(Export, MatchesGoldenFiles) {
  gt::TempDir dir;
  store::Store s(dir / "s", store::Options{false});
  seed_fixture(s);
  const auto archive = export_dataset(s, kKey, instruments());
  const auto golden = gt::source_path("tests/golden/export");
  if (std::getenv("GEOFREEBIE_UPDATE_GOLDEN")) write_archive(archive, golden, golden / "pseudonyms.map.jsonl");

  ASSERT_EQ(archive.files.size(), 6u);
  for (const auto& [name, content] : archive.files) EXPECT_EQ(content, slurp(golden / name)) << name;
  EXPECT_EQ(archive.pseudonym_map, slurp(golden / "pseudonyms.map.jsonl"));
}

TEST(Export, GoldenFilesHaveExpectedShape) {
  const auto golden = gt::source_path("tests/golden/export");
  const auto telemetry = slurp(golden / "telemetry.jsonl");
  // Bernd never consented to location logging.
  std::istringstream lines(telemetry);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    ++n;
    if (j.at("user") == pseudonymize("user-bernd", kKey)) EXPECT_TRUE(j.at("position").is_null());
    EXPECT_EQ(line.find("user-"), std::string::npos);
  }
  EXPECT_EQ(n, 5);
  const auto offers = slurp(golden / "offers.jsonl");
  EXPECT_NE(offers.find(R"(Kinderwagen \"fast neu\"\nmit Regenschutz)"), std::string::npos);
  EXPECT_NE(offers.find("Bücherregal"), std::string::npos);
  EXPECT_EQ(offers.find("user-"), std::string::npos);
  const auto manifest = json::parse(slurp(golden / "manifest.json"));
  EXPECT_EQ(manifest.at("counts").at("users"), 3);
  EXPECT_EQ(manifest.at("lsns_isolation_cutoff"), 12);
}

TEST(Export, ReExportIsByteIdentical) {
  gt::TempDir dir;
  store::Store s(dir / "s", store::Options{false});
  seed_fixture(s);
  const auto first = export_dataset(s, kKey, instruments());
  write_archive(first, dir / "out", dir / "map.jsonl");
  const auto second = export_dataset(s, kKey, instruments());
  EXPECT_EQ(first.files, second.files);
  EXPECT_EQ(first.pseudonym_map, second.pseudonym_map);
  for (const auto& [name, content] : first.files) EXPECT_EQ(slurp(dir / "out" / name), content);
  EXPECT_FALSE(gt::fs::exists(dir / "out/map.jsonl"));
  EXPECT_EQ(slurp(dir / "map.jsonl"), first.pseudonym_map);

  // Reopening the store must not change the export either.
  store::Store reopened(dir / "s2", store::Options{false});
  s.export_snapshot(dir / "snap");
  reopened.import_snapshot(dir / "snap");
  EXPECT_EQ(export_dataset(reopened, kKey, instruments()).files, first.files);
}

TEST(Export, KeyChangesPseudonyms) {
  EXPECT_NE(pseudonymize("user-amal", "k1"), pseudonymize("user-amal", "k2"));
  EXPECT_EQ(pseudonymize("user-amal", "k1"), pseudonymize("user-amal", "k1"));
  const auto p = pseudonymize("user-amal", "k1");
  EXPECT_EQ(p.size(), 17u);
  EXPECT_EQ(p[0], 'p');
  gt::TempDir dir;
  store::Store s(dir / "s", store::Options{false});
  EXPECT_CODE(export_dataset(s, "", instruments()), ErrorCode::ValidationFailed);
}

TEST(Export, EmptyStore) {
  gt::TempDir dir;
  store::Store s(dir / "s", store::Options{false});
  const auto archive = export_dataset(s, kKey, instruments());
  ASSERT_EQ(archive.files.size(), 6u);
  for (const char* stream : kStreams) EXPECT_EQ(archive.files.at(std::string(stream) + ".jsonl"), "");
  const auto manifest = json::parse(archive.files.at("manifest.json"));
  for (const char* stream : kStreams) EXPECT_EQ(manifest.at("counts").at(stream), 0);
  EXPECT_TRUE(manifest.at("exported_at").is_null());
  const auto back = import_dataset(archive.files);
  EXPECT_TRUE(back.telemetry.empty());
}

TEST(Export, TallyRoundTripProperty) {
  std::mt19937_64 rng(2024);
  const auto& actions = telemetry::all_actions();
  for (int trial = 0; trial < 20; ++trial) {
    gt::TempDir dir;
    store::Store s(dir / "s", store::Options{false});
    telemetry::EventLog log(s);
    ConsentState consent;
    consent.location_logging_consent = consent.study_consent = rng() % 2;
    const telemetry::ConsentLookup lookup = [&](const UserId&) { return std::optional(consent); };
    const int n = static_cast<int>(rng() % 200);
    for (int i = 0; i < n; ++i)
      log.log_event({"u" + std::to_string(rng() % 9), actions[rng() % actions.size()],
                     rng() % 2 ? std::optional<std::string>("o" + std::to_string(rng() % 5)) : std::nullopt,
                     at(static_cast<int>(rng() % 5000)), GeoPosition{51.9, 7.6, at(0)}},
                    lookup);
    const auto archive = export_dataset(s, kKey, instruments());
    write_archive(archive, dir / "out", dir / "map");
    const auto back = import_dataset(dir / "out");

    auto original = telemetry::read_events(s);
    for (auto& e : original) {
      e.user_id = pseudonymize(e.user_id, kKey);
      if (e.entity_id) e.entity_id = pseudonymize(*e.entity_id, kKey);
    }
    const telemetry::Window w{at(1000), at(4000)};
    EXPECT_EQ(telemetry::tally(back.telemetry, w), telemetry::tally(original, w));
    EXPECT_EQ(telemetry::tally(back.telemetry), telemetry::tally(original));
    ASSERT_EQ(back.telemetry.size(), original.size());
    for (std::size_t i = 0; i < original.size(); ++i) EXPECT_EQ(back.telemetry[i], original[i]);
  }
}

TEST(Import, RejectsDamagedArchives) {
  gt::TempDir dir;
  store::Store s(dir / "s", store::Options{false});
  seed_fixture(s);
  const auto archive = export_dataset(s, kKey, instruments());
  auto missing = archive.files;
  missing.erase("reviews.jsonl");
  EXPECT_CODE(import_dataset(missing), ErrorCode::ParseError);
  auto truncated = archive.files;
  truncated["users.jsonl"] = truncated["users.jsonl"].substr(0, truncated["users.jsonl"].find('\n') + 1);
  EXPECT_CODE(import_dataset(truncated), ErrorCode::ParseError);
  auto garbled = archive.files;
  garbled["manifest.json"] = "{";
  EXPECT_CODE(import_dataset(garbled), ErrorCode::ParseError);
}

TEST(Stats, FixtureNumbers) {
  gt::TempDir dir;
  store::Store s(dir / "s", store::Options{false});
  seed_fixture(s);
  const auto st = compute_stats(s, {}, instruments());
  EXPECT_EQ(st.at("users").at("total"), 3);
  EXPECT_EQ(st.at("users").at("approved"), 2);
  EXPECT_EQ(st.at("users").at("rejected"), 1);
  EXPECT_EQ(st.at("users").at("rejections_by_reason").at("outside_region"), 1);
  EXPECT_EQ(st.at("offers").at("created"), 2);
  EXPECT_EQ(st.at("offers").at("completed"), 1);
  EXPECT_EQ(st.at("reviews").at("submitted"), 1);
  EXPECT_EQ(st.at("posting_rate").at("rendered"), "1 post per 1 user");
  EXPECT_EQ(st.at("lsns").at("forced_migrant").at("mean"), 15.0);
  EXPECT_EQ(st.at("sus").at("n"), 1);
  EXPECT_EQ(st.at("sus").at("mean_text"), "75.0");
  EXPECT_EQ(st.at("tally").at("total"), 5);
}
