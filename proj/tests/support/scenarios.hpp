#pragma once

// Service-level scenarios shared by the unit and acceptance suites.

#include "harness.hpp"

#include <functional>
#include <random>
#include <sstream>

namespace scenarios {

using namespace gt;

inline void force_consent(Harness& h, const std::string& user_id, const ConsentState& c) {
  const auto rec = h.store.get(kinds::kUser, user_id);
  auto u = json::parse(rec->payload).get<UserProfile>();
  u.consent = c;
  h.store.put_if_version(kinds::kUser, user_id, rec->version, json(u).dump(), h.clock.now());
}

struct MatrixResult {
  int combinations = 0;
  int checks = 0;
  int mismatches = 0;
  std::vector<std::string> endpoints;
  std::string first_mismatch;
};

// Every consent-state combination against every gated operation. A call
// matches when it fails with ConsentIncomplete carrying the gate verdict
// exactly, or when the gate is satisfied and it succeeds.
inline MatrixResult consent_matrix(Harness& h) {
  MatrixResult res;
  auto other = h.active("matrix-other@example.org");
  const auto other_offer = h.post(other.second, "Other's lamp");

  struct Subject {
    std::string id, token;
    std::string to_complete, to_withdraw;
    std::vector<std::string> tasks;
  };
  std::vector<Subject> subjects;
  for (int bits = 0; bits < 8; ++bits) {
    auto [id, token] = h.active("matrix" + std::to_string(bits) + "@example.org");
    Subject s{id, token, h.post(token, "complete me"), h.post(token, "withdraw me"), {}};
    for (int k = 0; k < 2; ++k) {
      const auto done = h.post(token, "reviewed " + std::to_string(k));
      const auto out = h.svc.complete_offer(token, done, {{"collector_id", other.first}}, std::nullopt);
      for (const auto& t : out.at("review_tasks"))
        if (t.at("user_id") == id) s.tasks.push_back(t.at("task_id"));
    }
    subjects.push_back(std::move(s));
  }

  for (int bits = 0; bits < 8; ++bits) {
    auto& s = subjects[static_cast<std::size_t>(bits)];
    ConsentState c;
    c.study_consent = bits & 1;
    c.location_logging_consent = c.study_consent;
    c.demographics_done = bits & 2;
    c.lsns_done = bits & 4;
    force_consent(h, s.id, c);
    const auto verdict = study::gate_access(c);
    json expected_missing = json::array();
    for (auto step : verdict.missing) expected_missing.push_back(std::string(study::to_string(step)));
    ++res.combinations;

    const std::vector<std::uint8_t> png{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A, 0, 0};
    const std::vector<std::pair<std::string, std::function<void()>>> full_gate{
        {"PATCH /users/me", [&] { h.svc.update_settings(s.token, {{"display_name", "Renamed"}}); }},
        {"PATCH /users/me/location", [&] { h.svc.update_location(s.token, {{"lat", 51.96}, {"lon", 7.62}}); }},
        {"POST /users/{id}/block", [&] { h.svc.block(s.token, other.first); }},
        {"GET /offers", [&] { h.svc.list_offers(s.token, {}); }},
        {"POST /offers", [&] { h.post(s.token, "new offer"); }},
        {"POST /offers/{id}/complete", [&] { h.svc.complete_offer(s.token, s.to_complete, json::object(), std::nullopt); }},
        {"POST /offers/{id}/withdraw", [&] { h.svc.withdraw_offer(s.token, s.to_withdraw); }},
        {"POST /offers/{id}/report", [&] { h.svc.report_offer(s.token, other_offer, {{"reason", "spam"}}); }},
        {"POST /blobs", [&] { h.svc.put_blob(s.token, "image/png", png); }},
        {"GET /reviews/pending", [&] { h.svc.pending_reviews(s.token); }},
        {"POST /reviews",
         [&] {
           h.svc.submit_review(s.token, {{"task_id", s.tasks.at(0)}, {"contact_channel", "email"},
                                         {"satisfaction", 4}, {"likely_repeat", 4}, {"place", "Aasee"}});
         }},
        {"POST /reviews/{task}/dismiss", [&] { h.svc.dismiss_review(s.token, s.tasks.at(1)); }},
        {"POST /study/sus", [&] { h.svc.submit_sus(s.token, {{"items", {4, 2, 4, 2, 4, 2, 4, 2, 4, 2}}}); }},
        {"POST /study/usefulness",
         [&] { h.svc.submit_usefulness(s.token, study::UsefulnessResponse::uniform(4).to_json()); }},
    };
    // Entry surveys are the gate's own steps: they need consent, nothing else.
    const std::vector<std::pair<std::string, std::function<void()>>> consent_gate{
        {"POST /study/demographics",
         [&] {
           h.svc.submit_demographics(s.token, {{"gender", "x"}, {"age", 40}, {"country_of_origin", "DE"},
                                               {"user_group", "local_freecycler"}});
         }},
        {"POST /study/lsns", [&] { h.svc.submit_lsns(s.token, {{"items", {1, 2, 3, 4, 5, 0}}}); }},
    };

    auto check = [&](const std::string& name, const std::function<void()>& call, bool allowed,
                     const json& missing) {
      if (bits == 0) res.endpoints.push_back(name);
      ++res.checks;
      std::string outcome;
      bool ok = false;
      try {
        call();
        ok = allowed;
        outcome = "succeeded";
      } catch (const Error& e) {
        outcome = std::string(to_string(e.code())) + " " + e.details().dump();
        ok = !allowed && e.code() == ErrorCode::ConsentIncomplete && e.details().at("full") == false &&
             e.details().at("missing") == missing;
      }
      if (!ok) {
        ++res.mismatches;
        if (res.first_mismatch.empty()) {
          std::ostringstream os;
          os << name << " with consent bits " << bits << ": " << outcome;
          res.first_mismatch = os.str();
        }
      }
    };
    for (const auto& [name, call] : full_gate) check(name, call, verdict.full, expected_missing);
    for (const auto& [name, call] : consent_gate)
      check(name, call, c.study_consent, expected_missing);
  }
  return res;
}

struct FuzzResult {
  int calls = 0;
  int succeeded = 0;
  int events = 0;
  int positional_events = 0;
  int leaks = 0;  // events holding a position although location logging was off
};

// Random mix of position-bearing requests and consent changes. Each new event
// is checked against the consent the user had when it was written.
inline FuzzResult position_fuzz(Harness& h, std::uint64_t seed, int steps) {
  std::mt19937_64 rng(seed);
  struct Actor {
    std::string id, token;
  };
  std::vector<Actor> actors;
  for (int i = 0; i < 6; ++i) {
    auto [id, token] = h.active("fuzz" + std::to_string(i) + "@example.org");
    actors.push_back({id, token});
  }
  FuzzResult res;
  std::uint64_t seen = h.store.last_seq();
  std::map<std::string, bool> consent_of;
  for (const auto& a : actors) consent_of[a.id] = true;
  auto lat = [&] { return 51.85 + (rng() % 2000) / 10000.0; };
  auto lon = [&] { return 7.48 + (rng() % 2800) / 10000.0; };

  for (int step = 0; step < steps; ++step) {
    auto& a = actors[rng() % actors.size()];
    ++res.calls;
    try {
      switch (rng() % 6) {
        case 0: {
          const bool study = rng() % 5 != 0, location = rng() % 2;
          h.svc.record_consent(a.token, {{"study_consent", study}, {"location_logging_consent", location}});
          consent_of[a.id] = study && location;
          break;
        }
        case 1: h.svc.update_location(a.token, {{"lat", lat()}, {"lon", lon()}}); break;
        case 2: {
          Service::ListQuery q;
          q.lat = lat();
          q.lon = lon();
          q.view = rng() % 2 ? "map" : "list";
          q.refresh = rng() % 4 == 0;
          h.svc.list_offers(a.token, q);
          break;
        }
        case 3: h.svc.list_offers(a.token, {}); break;
        case 4: h.post(a.token, "fuzz item", lat(), lon()); break;
        default:
          h.svc.update_settings(a.token, {{"home_position", {{"lat", lat()}, {"lon", lon()}}}});
          break;
      }
      ++res.succeeded;
    } catch (const Error&) {
    }
    h.clock.advance(std::chrono::seconds(1 + rng() % 30));
    for (const auto& e : telemetry::read_events(h.store, seen + 1)) {
      ++res.events;
      seen = e.event_id;
      if (!e.position) continue;
      ++res.positional_events;
      if (!consent_of[e.user_id]) ++res.leaks;
    }
  }
  return res;
}

}  // namespace scenarios
