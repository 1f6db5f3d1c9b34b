#include "geofreebie/service.hpp"

#include "geofreebie/analytics.hpp"
#include "geofreebie/json_util.hpp"
#include "geofreebie/kinds.hpp"

#include <algorithm>
#include <cctype>
#include <thread>

namespace geofreebie {

using nlohmann::json;
using telemetry::Action;

namespace {

constexpr const char* kOperatorId = "operator";

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Heuristic identity key for duplicate detection: lowercased, "+tag" dropped,
// and for Gmail addresses dots removed.
std::string identity_email_key(const std::string& email) {
  std::string e = lower(email);
  const auto at = e.find('@');
  if (at == std::string::npos) return e;
  std::string local = e.substr(0, at);
  std::string domain = e.substr(at + 1);
  if (auto plus = local.find('+'); plus != std::string::npos) local.resize(plus);
  if (domain == "googlemail.com") domain = "gmail.com";
  if (domain == "gmail.com") std::erase(local, '.');
  return local + "@" + domain;
}

ErrorCode not_found_code(const char* kind) {
  const std::string k(kind);
  if (k == kinds::kUser) return ErrorCode::UnknownUser;
  if (k == kinds::kOffer) return ErrorCode::UnknownOffer;
  if (k == kinds::kReviewTask) return ErrorCode::UnknownTask;
  return ErrorCode::NotFound;
}

std::string session_key(const std::string& token) { return crypto::blake2b_hex(token, 32); }

json gate_json(const study::GateVerdict& v) {
  json missing = json::array();
  for (auto s : v.missing) missing.push_back(std::string(study::to_string(s)));
  return {{"full", v.full}, {"missing", missing}};
}

[[noreturn]] void consent_incomplete(const study::GateVerdict& v) {
  throw Error(ErrorCode::ConsentIncomplete, "consent and entry surveys must be completed first",
              gate_json(v));
}

GeoPosition position_from(const json& j, Timestamp now) {
  GeoPosition p;
  p.lat = jsonu::require<double>(j, "lat");
  p.lon = jsonu::require<double>(j, "lon");
  p.recorded_at = now;
  if (auto t = j.find("recorded_at"); t != j.end() && !t->is_null()) {
    auto parsed = t->is_string() ? parse_timestamp(t->get<std::string>()) : std::nullopt;
    if (!parsed)
      throw Error(ErrorCode::InvalidPosition, "malformed recorded_at", {{"field", "recorded_at"}});
    p.recorded_at = *parsed;
  }
  validate_position(p, now);
  return p;
}

bool is_image(const std::string& content_type, std::span<const std::uint8_t> b) {
  auto starts = [&](std::initializer_list<std::uint8_t> magic, std::size_t offset = 0) {
    if (b.size() < offset + magic.size()) return false;
    return std::equal(magic.begin(), magic.end(), b.begin() + static_cast<std::ptrdiff_t>(offset));
  };
  if (content_type == "image/png") return starts({0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A});
  if (content_type == "image/jpeg") return starts({0xFF, 0xD8, 0xFF});
  if (content_type == "image/gif") return starts({'G', 'I', 'F', '8'});
  if (content_type == "image/webp") return starts({'R', 'I', 'F', 'F'}) && starts({'W', 'E', 'B', 'P'}, 8);
  return false;
}

}  // namespace

std::string_view to_string(TrialState s) {
  switch (s) {
    case TrialState::Scheduled: return "scheduled";
    case TrialState::Open: return "open";
    case TrialState::Closed: return "closed";
  }
  return "scheduled";
}

Service::Service(store::Store& store, l10n::Catalog catalog, study::InstrumentSet instruments,
                 ServiceConfig config, const IdentityProvider& identity, Clock clock,
                 std::string admin_token)
    : store_(store),
      catalog_(std::move(catalog)),
      instruments_(std::move(instruments)),
      config_(std::move(config)),
      identity_(identity),
      clock_(std::move(clock)),
      admin_token_(std::move(admin_token)),
      events_(store) {
  geo::validate(config_.geofence);
  // Verified against unknown emails so both login failure paths cost the same.
  dummy_hash_ = crypto::hash_password(crypto::random_token(), config_.hash_cost);
}

// ---------------------------------------------------------------------------
// Storage helpers

template <class T, class F>
T Service::mutate(const char* kind, const std::string& id, F&& fn) {
  for (int attempt = 0; attempt <= config_.max_write_retries; ++attempt) {
    auto rec = store_.get(kind, id);
    if (!rec) throw Error(not_found_code(kind), std::string("no such ") + kind, {{"id", id}});
    T value = json::parse(rec->payload).get<T>();
    fn(value);
    try {
      store_.put_if_version(kind, id, rec->version, json(value).dump(), now());
      return value;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VersionConflict) throw;
      std::this_thread::yield();
    }
  }
  throw Error(ErrorCode::Conflict, std::string("too many concurrent writes to ") + kind + "/" + id);
}

template <class T>
void Service::create(const char* kind, const std::string& id, const T& value) {
  store_.put_if_version(kind, id, 0, json(value).dump(), now());
}

UserProfile Service::load_user(const UserId& id) const {
  auto rec = store_.get(kinds::kUser, id);
  if (!rec) throw Error(ErrorCode::UnknownUser, "no such user", {{"user_id", id}});
  return json::parse(rec->payload).get<UserProfile>();
}

Offer Service::load_offer(const OfferId& id) const {
  auto rec = store_.get(kinds::kOffer, id);
  if (!rec) throw Error(ErrorCode::UnknownOffer, "no such offer", {{"offer_id", id}});
  return json::parse(rec->payload).get<Offer>();
}

std::optional<UserProfile> Service::find_user(const UserId& id) const {
  auto rec = store_.get(kinds::kUser, id);
  if (!rec) return std::nullopt;
  return json::parse(rec->payload).get<UserProfile>();
}

std::optional<Offer> Service::find_offer(const OfferId& id) const {
  auto rec = store_.get(kinds::kOffer, id);
  if (!rec) return std::nullopt;
  return json::parse(rec->payload).get<Offer>();
}

void Service::log(const UserId& user, Action action, std::optional<std::string> entity,
                  std::optional<GeoPosition> position) {
  events_.log_event({user, action, std::move(entity), now(), std::move(position)},
                    [this](const UserId& id) -> std::optional<ConsentState> {
                      if (id == kOperatorId) return ConsentState{};
                      auto u = find_user(id);
                      if (!u) return std::nullopt;
                      return u->consent;
                    });
}

std::string Service::account_email(const UserId& user) const {
  auto rec = store_.get(kinds::kAccount, user);
  if (!rec) return {};
  return json::parse(rec->payload).value("email", std::string{});
}

void Service::queue_notification(NotificationKind kind, const UserProfile& user) {
  const auto& strings = catalog_.get(user.locale).bundle->strings;
  auto text = [&](const std::string& key) {
    auto it = strings.find(key);
    std::string s = it == strings.end() ? key : it->second;
    for (auto pos = s.find("{name}"); pos != std::string::npos; pos = s.find("{name}", pos + user.display_name.size()))
      s.replace(pos, 6, user.display_name);
    return s;
  };
  std::string stem = "email.welcome";
  if (kind == NotificationKind::ApprovalPendingNotice) stem = "email.pending";
  if (kind == NotificationKind::RejectionNotice) stem = "email.rejected";
  NotificationTask task;
  task.task_id = "n" + crypto::random_id(8);
  task.kind = kind;
  task.recipient = user.user_id;
  task.address = account_email(user.user_id);
  task.payload = {{"locale", user.locale},
                  {"display_name", user.display_name},
                  {"subject", text(stem + ".subject")},
                  {"body", text(stem + ".body")}};
  task.created_at = now();
  create(kinds::kNotification, task.task_id, task);
}

json Service::public_profile(const UserProfile& u) const {
  return {{"user_id", u.user_id},
          {"display_name", u.display_name},
          {"picture_ref", jsonu::opt(u.picture_ref)},
          {"star", u.completed_deliveries}};
}

// ---------------------------------------------------------------------------
// Guards

void Service::check_rate_limit(const std::string& token) {
  const long long minute = to_unix_ms(now()) / 60'000;
  std::lock_guard lock(rate_mu_);
  auto& [window, count] = rate_[session_key(token)];
  if (window != minute) {
    window = minute;
    count = 0;
  }
  if (++count > config_.requests_per_minute)
    throw Error(ErrorCode::RateLimited, "request ceiling reached for this session");
}

UserProfile Service::authenticate(const std::string& token) {
  if (token.empty()) throw Error(ErrorCode::Unauthenticated, "missing session token");
  auto rec = store_.get(kinds::kSession, session_key(token));
  if (!rec) throw Error(ErrorCode::Unauthenticated, "unknown session");
  const json s = json::parse(rec->payload);
  if (s.value("revoked", false) || jsonu::ts(s.at("expires_at")) <= now())
    throw Error(ErrorCode::Unauthenticated, "session expired");
  check_rate_limit(token);
  return load_user(s.at("user_id").get<std::string>());
}

Principal Service::principal(const std::optional<std::string>& bearer,
                             const std::optional<std::string>& admin_token) {
  if (admin_token) {
    if (admin_token_.empty() || !crypto::constant_time_equal(*admin_token, admin_token_))
      throw Error(ErrorCode::Unauthenticated, "invalid admin token");
    return {kOperatorId, true, true};
  }
  const auto user = authenticate(bearer.value_or(""));
  return {user.user_id, user.is_moderator(), false};
}

UserProfile Service::require_gate(const UserProfile& user) {
  const auto verdict = study::gate_access(user);
  if (!verdict.full) consent_incomplete(verdict);
  if (user.approval.status != ApprovalStatus::Approved)
    throw Error(ErrorCode::NotApproved, "account is not approved");
  return user;
}

TrialWindow Service::trial() const {
  TrialWindow w;
  auto rec = store_.get(kinds::kTrial, "current");
  if (!rec) return w;
  const json j = json::parse(rec->payload);
  const auto s = j.at("state").get<std::string>();
  w.state = s == "open" ? TrialState::Open : s == "closed" ? TrialState::Closed : TrialState::Scheduled;
  w.opens_at = jsonu::get_opt_ts(j, "opens_at");
  w.closes_at = jsonu::get_opt_ts(j, "closes_at");
  if (w.state == TrialState::Open && w.closes_at && now() > *w.closes_at) w.state = TrialState::Closed;
  return w;
}

void Service::require_trial_not_closed() {
  if (trial().state == TrialState::Closed)
    throw Error(ErrorCode::TrialClosed, "the trial has ended");
}

void Service::require_moderator(const Principal& p) {
  if (!p.moderator && !p.admin) throw Error(ErrorCode::NotModerator, "moderator role required");
}

void Service::require_admin(const Principal& p) {
  if (!p.admin) throw Error(ErrorCode::NotAuthorized, "operator token required");
}

// ---------------------------------------------------------------------------
// Authentication

json Service::signup(const json& body) {
  require_trial_not_closed();
  const auto method = jsonu::require<std::string>(body, "method");
  const auto locale = jsonu::optional_field<std::string>(body, "locale").value_or("en");
  if (!catalog_.has(locale)) throw Error(ErrorCode::UnknownLocale, "unknown locale " + locale);

  std::string email, display_name, password_hash;
  std::optional<ProviderIdentity> provider_identity;
  if (method == "email_password") {
    email = jsonu::require<std::string>(body, "email");
    display_name = jsonu::require<std::string>(body, "display_name");
    const auto password = jsonu::require<std::string>(body, "password");
    if (!is_valid_email(email))
      throw Error(ErrorCode::ValidationFailed, "malformed email address", {{"field", "email"}});
    if (password.size() < config_.min_password_length)
      throw Error(ErrorCode::WeakPassword, "password must have at least 10 characters",
                  {{"min_length", config_.min_password_length}});
    password_hash = crypto::hash_password(password, config_.hash_cost);
  } else if (method == "identity_provider") {
    const auto provider = jsonu::require<std::string>(body, "provider");
    provider_identity = identity_.verify(provider, jsonu::require<std::string>(body, "token"));
    if (!provider_identity)
      throw Error(ErrorCode::ProviderVerificationFailed, "identity provider token did not verify");
    email = provider_identity->email;
    display_name = provider_identity->display_name;
    if (!is_valid_email(email))
      throw Error(ErrorCode::ValidationFailed, "provider returned a malformed email", {{"field", "email"}});
  } else {
    throw Error(ErrorCode::ValidationFailed, "method must be email_password or identity_provider",
                {{"field", "method"}});
  }
  if (display_name.empty())
    throw Error(ErrorCode::ValidationFailed, "display_name must not be empty", {{"field", "display_name"}});

  const std::string email_key = lower(email);
  if (store_.get(kinds::kCredential, email_key))
    throw Error(ErrorCode::DuplicateEmail, "email already registered");

  // Duplicate-identity heuristic, before this account exists.
  json annotations = json::array();
  const std::string id_key = identity_email_key(email);
  for (const auto& rec : store_.scan(kinds::kAccount)) {
    const json acct = json::parse(rec.payload);
    if (identity_email_key(acct.value("email", std::string{})) == id_key)
      annotations.push_back({{"signal", "same_normalized_email"}, {"user_id", acct.at("user_id")}});
  }
  if (provider_identity) {
    const std::string prefix = provider_identity->provider + ":" + provider_identity->subject + ":";
    for (const auto& rec : store_.scan(kinds::kProviderLink, [&](const store::Record& r) {
           return r.id.starts_with(prefix);
         })) {
      annotations.push_back({{"signal", "same_provider_subject"},
                             {"user_id", json::parse(rec.payload).at("user_id")}});
    }
  }

  UserProfile user;
  user.user_id = "u" + crypto::random_id(6);
  user.display_name = display_name;
  user.locale = locale;
  user.created_at = now();
  user.consent.locale_shown = locale;

  // The credential record is the uniqueness point for the email address.
  try {
    store_.put_if_version(kinds::kCredential, email_key, 0,
                          json{{"user_id", user.user_id},
                               {"password_hash", password_hash.empty() ? json(nullptr) : json(password_hash)}}
                              .dump(),
                          now());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::VersionConflict)
      throw Error(ErrorCode::DuplicateEmail, "email already registered");
    throw;
  }
  create(kinds::kUser, user.user_id, user);
  store_.put_if_version(kinds::kAccount, user.user_id, 0,
                        json{{"user_id", user.user_id},
                             {"email", email_key},
                             {"auth_method", method},
                             {"provider", provider_identity ? json(provider_identity->provider) : json(nullptr)}}
                            .dump(),
                        now());
  if (provider_identity) {
    store_.put_if_version(kinds::kProviderLink,
                          provider_identity->provider + ":" + provider_identity->subject + ":" + email_key, 0,
                          json{{"user_id", user.user_id}}.dump(), now());
  }
  store_.put_if_version(kinds::kModeration, user.user_id, 0,
                        json{{"user_id", user.user_id},
                             {"annotations", annotations},
                             {"created_at", jsonu::ts(now())}}
                            .dump(),
                        now());
  queue_notification(NotificationKind::ApprovalPendingNotice, user);
  log(user.user_id, Action::Signup, user.user_id);

  return {{"user", user},
          {"state", "await_approval"},
          {"message_key", "signup.await_approval"},
          {"duplicate_identity_suspected", !annotations.empty()}};
}

json Service::login(const json& body) {
  const auto method = jsonu::require<std::string>(body, "method");
  UserId user_id;
  std::string auth_method = method;
  if (method == "email_password") {
    const auto email = lower(jsonu::require<std::string>(body, "email"));
    const auto password = jsonu::require<std::string>(body, "password");
    auto rec = store_.get(kinds::kCredential, email);
    std::string encoded = dummy_hash_;
    std::optional<UserId> candidate;
    if (rec) {
      const json c = json::parse(rec->payload);
      if (c.at("password_hash").is_string()) {
        encoded = c.at("password_hash").get<std::string>();
        candidate = c.at("user_id").get<std::string>();
      }
    }
    // Always run the (constant-time) verification, even for unknown emails.
    const bool ok = crypto::verify_password(encoded, password);
    if (!ok || !candidate) throw Error(ErrorCode::BadCredentials, "email or password is wrong");
    user_id = *candidate;
  } else if (method == "identity_provider") {
    const auto provider = jsonu::require<std::string>(body, "provider");
    auto identity = identity_.verify(provider, jsonu::require<std::string>(body, "token"));
    if (!identity) throw Error(ErrorCode::ProviderVerificationFailed, "identity provider token did not verify");
    auto link = store_.get(kinds::kProviderLink,
                           identity->provider + ":" + identity->subject + ":" + lower(identity->email));
    if (!link) throw Error(ErrorCode::BadCredentials, "no account for this identity");
    user_id = json::parse(link->payload).at("user_id").get<std::string>();
    auth_method = "identity_provider(" + provider + ")";
  } else {
    throw Error(ErrorCode::ValidationFailed, "method must be email_password or identity_provider",
                {{"field", "method"}});
  }

  const UserProfile user = load_user(user_id);
  if (user.approval.status == ApprovalStatus::Rejected) {
    throw Error(ErrorCode::AccountRejected, "account was rejected",
                {{"reason", user.approval.reason ? json(std::string(to_string(*user.approval.reason)))
                                                 : json(nullptr)}});
  }
  const std::string token = crypto::random_token();
  const Timestamp created = now();
  const Timestamp expires = created + config_.session_lifetime;
  store_.put_if_version(kinds::kSession, session_key(token), 0,
                        json{{"user_id", user.user_id},
                             {"created_at", jsonu::ts(created)},
                             {"expires_at", jsonu::ts(expires)},
                             {"auth_method", auth_method}}
                            .dump(),
                        created);
  log(user.user_id, Action::Login);
  return {{"token", token},
          {"user_id", user.user_id},
          {"created_at", jsonu::ts(created)},
          {"expires_at", jsonu::ts(expires)},
          {"auth_method", auth_method},
          {"approval", user.approval},
          {"gate", gate_json(study::gate_access(user))}};
}

void Service::logout(const std::string& token) {
  const auto user = authenticate(token);
  const auto key = session_key(token);
  for (int attempt = 0; attempt <= config_.max_write_retries; ++attempt) {
    auto rec = store_.get(kinds::kSession, key);
    if (!rec) return;
    json s = json::parse(rec->payload);
    s["revoked"] = true;
    try {
      store_.put_if_version(kinds::kSession, key, rec->version, s.dump(), now());
      log(user.user_id, Action::Logout);
      return;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VersionConflict) throw;
    }
  }
  throw Error(ErrorCode::Conflict, "could not revoke session");
}

// ---------------------------------------------------------------------------
// Users

json Service::get_me(const std::string& token) {
  const auto user = authenticate(token);
  json body = user;
  body["gate"] = gate_json(study::gate_access(user));
  body["available"] = geo::derive_availability(user, config_.geofence, now());
  body["contact_links"] = build_contact_links(user.contact_methods);
  return body;
}

json Service::update_settings(const std::string& token, const json& body) {
  const auto user = authenticate(token);
  if (!body.is_object()) throw Error(ErrorCode::ValidationFailed, "body must be an object");
  require_trial_not_closed();
  static const std::set<std::string> allowed{"contact_methods", "locale", "home_position", "display_name",
                                             "picture_ref"};
  for (const auto& [key, _] : body.items())
    if (!allowed.contains(key)) throw Error(ErrorCode::ValidationFailed, "unknown field " + key, {{"field", key}});
  const bool locale_only = body.size() == 1 && body.contains("locale");
  if (!locale_only) require_gate(user);

  std::optional<std::string> locale;
  if (body.contains("locale")) {
    locale = jsonu::require<std::string>(body, "locale");
    if (!catalog_.has(*locale)) throw Error(ErrorCode::UnknownLocale, "unknown locale " + *locale, {{"locale", *locale}});
  }
  std::optional<ContactMethods> contact;
  if (body.contains("contact_methods")) {
    ContactMethods merged = user.contact_methods;
    const auto& cm = body.at("contact_methods");
    if (!cm.is_object()) throw Error(ErrorCode::ValidationFailed, "contact_methods must be an object");
    for (const auto& [key, value] : cm.items()) {
      auto channel = parse_channel(key);
      if (!channel) throw Error(ErrorCode::ValidationFailed, "unknown channel " + key, {{"field", key}});
      auto& d = merged.get(*channel);
      d.enabled = value.value("enabled", d.enabled);
      if (value.contains("detail")) d.detail = value.at("detail").get<std::string>();
    }
    contact = normalize_contact_methods(merged);
  }
  std::optional<std::optional<GeoPosition>> home;
  if (body.contains("home_position")) {
    if (body.at("home_position").is_null())
      home.emplace(std::nullopt);
    else
      home.emplace(position_from(body.at("home_position"), now()));
  }
  std::optional<std::string> display_name = jsonu::optional_field<std::string>(body, "display_name");
  if (display_name && display_name->empty())
    throw Error(ErrorCode::ValidationFailed, "display_name must not be empty", {{"field", "display_name"}});
  std::optional<std::string> picture = jsonu::optional_field<std::string>(body, "picture_ref");
  if (picture && !store_.has_blob(*picture))
    throw Error(ErrorCode::ValidationFailed, "unknown picture_ref", {{"field", "picture_ref"}});

  if (contact && !contact->any_enabled()) {
    const auto open = store_.scan(kinds::kOffer, [&](const store::Record& r) {
      const auto o = json::parse(r.payload).get<Offer>();
      return o.owner_id == user.user_id && o.status == OfferStatus::Open;
    });
    if (!open.empty())
      throw Error(ErrorCode::NoContactMethod, "users with open offers need at least one contact channel");
  }

  const auto updated = mutate<UserProfile>(kinds::kUser, user.user_id, [&](UserProfile& u) {
    if (locale) u.locale = *locale;
    if (contact) u.contact_methods = *contact;
    if (home) u.home_position = *home;
    if (display_name) u.display_name = *display_name;
    if (picture) u.picture_ref = *picture;
  });

  Action action = Action::ChangeLocale;
  if (contact || home)
    action = Action::UpdateSettings;
  else if (display_name || picture)
    action = Action::UpdateProfile;
  log(user.user_id, action, user.user_id);

  json out = updated;
  out["contact_links"] = build_contact_links(updated.contact_methods);
  return out;
}

json Service::update_location(const std::string& token, const json& body) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  const GeoPosition p = position_from(body, now());
  const auto updated =
      mutate<UserProfile>(kinds::kUser, user.user_id, [&](UserProfile& u) { u.last_position = p; });
  const bool available = geo::derive_availability(updated, config_.geofence, now());
  log(user.user_id, Action::UpdateLocation, user.user_id, p);
  return {{"available", available}, {"region_label", config_.geofence.region_label}, {"position", p}};
}

json Service::block(const std::string& token, const UserId& target) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  const bool exists = store_.get(kinds::kUser, target).has_value();
  const auto updated = mutate<UserProfile>(kinds::kUser, user.user_id,
                                           [&](UserProfile& u) { u = block_user(u, target, exists); });
  log(user.user_id, Action::BlockUser, target);
  return {{"blocked_ids", updated.blocked_ids}};
}

// ---------------------------------------------------------------------------
// Offers

json Service::list_offers(const std::string& token, const ListQuery& q) {
  const auto viewer = require_gate(authenticate(token));
  const Timestamp t = now();
  std::optional<GeoPosition> override_pos;
  if (q.lat || q.lon) {
    if (!q.lat || !q.lon)
      throw Error(ErrorCode::InvalidPosition, "both lat and lon are required for a position override");
    override_pos = GeoPosition{*q.lat, *q.lon, t};
    validate_position(*override_pos, t);
  }
  std::optional<GeoPosition> viewer_pos = override_pos;
  if (!viewer_pos) viewer_pos = viewer.last_position;
  if (!viewer_pos) viewer_pos = viewer.home_position;
  if (!viewer_pos) throw Error(ErrorCode::NoViewerPosition, "no stored or supplied viewer position");

  const std::uint64_t stamp = store_.data_version();
  std::map<UserId, std::pair<UserProfile, bool>> owners;  // profile, available
  std::vector<Offer> visible;
  for (const auto& rec : store_.scan(kinds::kOffer)) {
    auto offer = json::parse(rec.payload).get<Offer>();
    if (offer.status != OfferStatus::Open) continue;
    auto it = owners.find(offer.owner_id);
    if (it == owners.end()) {
      auto owner = find_user(offer.owner_id);
      if (!owner) continue;
      const bool available = geo::derive_availability(*owner, config_.geofence, t);
      it = owners.emplace(offer.owner_id, std::pair{std::move(*owner), available}).first;
    }
    if (is_visible(offer, it->second.first, viewer, it->second.second)) visible.push_back(std::move(offer));
  }

  json items = json::array();
  for (const auto& od : geo::offers_with_distance(*viewer_pos, visible)) {
    const auto& [owner, available] = owners.at(od.offer.owner_id);
    json card = public_profile(owner);
    card["available"] = available;
    try {
      card["contact_links"] = build_contact_links(owner.contact_methods);
    } catch (const Error&) {
      card["contact_links"] = json::array();
    }
    json item = od.offer;
    item["distance_km"] = geo::round_distance(od.distance_km);
    item["owner"] = card;
    items.push_back(std::move(item));
  }

  const Action action = q.refresh ? Action::Refresh : q.view == "map" ? Action::ViewMap : Action::ViewList;
  log(viewer.user_id, action, std::nullopt, override_pos);
  return {{"data_version", stamp},
          {"viewer_position", *viewer_pos},
          {"count", items.size()},
          {"offers", items}};
}

json Service::create_offer(const std::string& token, const json& body) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  if (!user.contact_methods.any_enabled())
    throw Error(ErrorCode::NoContactMethod, "enable at least one contact channel before posting");

  Offer offer;
  offer.offer_id = "o" + crypto::random_id(6);
  offer.owner_id = user.user_id;
  offer.title = jsonu::require<std::string>(body, "title");
  offer.description = jsonu::optional_field<std::string>(body, "description");
  offer.photo_ref = jsonu::optional_field<std::string>(body, "photo_ref");
  offer.created_at = now();
  if (auto p = body.find("pickup"); p != body.end() && !p->is_null()) {
    offer.pickup_position = position_from(*p, now());
  } else if (user.last_position) {
    offer.pickup_position = *user.last_position;
  } else {
    throw Error(ErrorCode::ValidationFailed, "pickup position required", {{"field", "pickup"}});
  }
  validate_new_offer(offer, now());
  if (offer.photo_ref && !store_.has_blob(*offer.photo_ref))
    throw Error(ErrorCode::ValidationFailed, "unknown photo_ref", {{"field", "photo_ref"}});
  create(kinds::kOffer, offer.offer_id, offer);
  log(user.user_id, Action::CreateOffer, offer.offer_id);
  return offer;
}

json Service::complete_offer(const std::string& token, const OfferId& offer_id, const json& body,
                             const std::optional<std::string>& idempotency_key) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();

  std::string idem_id;
  if (idempotency_key) {
    if (idempotency_key->empty() || idempotency_key->size() > 128)
      throw Error(ErrorCode::ValidationFailed, "idempotency key must be 1..128 characters");
    idem_id = user.user_id + "." + offer_id + "." + *idempotency_key;
    try {
      store_.put_if_version(kinds::kIdempotency, idem_id, 0, json{{"state", "in_progress"}}.dump(), now());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VersionConflict) throw;
      // Another request owns this key: wait for its stored response.
      for (int i = 0; i < 200; ++i) {
        const json rec = json::parse(store_.get(kinds::kIdempotency, idem_id)->payload);
        if (rec.at("state") == "done") return rec.at("response");
        if (rec.at("state") == "failed") throw Error(ErrorCode::NotOpen, "offer is no longer open");
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      throw Error(ErrorCode::Conflict, "request with this idempotency key still in progress");
    }
  }

  try {
    const auto collector = jsonu::optional_field<std::string>(body.is_object() ? body : json::object(),
                                                              "collector_id");
    if (collector && !store_.get(kinds::kUser, *collector))
      throw Error(ErrorCode::UnknownUser, "no such collector", {{"user_id", *collector}});

    OfferOutcome outcome;
    const Actor actor{user.user_id, user.is_moderator()};
    mutate<Offer>(kinds::kOffer, offer_id, [&](Offer& o) {
      outcome = transition_offer(o, CompleteEvent{collector}, actor, now());
      o = outcome.offer;
    });
    const auto owner = mutate<UserProfile>(kinds::kUser, outcome.offer.owner_id, [&](UserProfile& u) {
      u.completed_deliveries += outcome.owner_star_delta;
    });

    json tasks = json::array();
    for (const auto& task : study::create_pending_review(outcome.offer, now(), [&](const std::string& id) {
           return store_.get(kinds::kReviewTask, id).has_value();
         })) {
      try {
        create(kinds::kReviewTask, task.task_id, task);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::VersionConflict) throw;
        continue;  // created concurrently by a duplicate delivery
      }
      tasks.push_back(task);
    }
    log(user.user_id, Action::CompleteOffer, offer_id);

    json response{{"offer", outcome.offer}, {"star", owner.completed_deliveries}, {"review_tasks", tasks}};
    if (!idem_id.empty()) {
      mutate<json>(kinds::kIdempotency, idem_id, [&](json& rec) {
        rec = {{"state", "done"}, {"response", response}};
      });
    }
    return response;
  } catch (...) {
    if (!idem_id.empty()) {
      try {
        mutate<json>(kinds::kIdempotency, idem_id, [](json& rec) { rec = {{"state", "failed"}}; });
      } catch (...) {
      }
    }
    throw;
  }
}

json Service::withdraw_offer(const std::string& token, const OfferId& offer_id) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  const Actor actor{user.user_id, user.is_moderator()};
  const auto offer = mutate<Offer>(kinds::kOffer, offer_id, [&](Offer& o) {
    o = transition_offer(o, WithdrawEvent{}, actor, now()).offer;
  });
  log(user.user_id, Action::WithdrawOffer, offer_id);
  return offer;
}

json Service::report_offer(const std::string& token, const OfferId& offer_id, const json& body) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  load_offer(offer_id);
  const std::string report_id = "r" + crypto::random_id(6);
  const json report{{"report_id", report_id},
                    {"offer_id", offer_id},
                    {"reporter_id", user.user_id},
                    {"reason", jsonu::optional_field<std::string>(body.is_object() ? body : json::object(), "reason")
                                   .value_or("")},
                    {"created_at", jsonu::ts(now())}};
  store_.put_if_version(kinds::kReport, report_id, 0, report.dump(), now());
  log(user.user_id, Action::ReportOffer, offer_id);
  return report;
}

std::string Service::put_blob(const std::string& token, const std::string& content_type,
                              std::span<const std::uint8_t> bytes) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  if (bytes.size() > config_.max_blob_bytes)
    throw Error(ErrorCode::PayloadTooLarge, "photos are limited to 5 MB");
  if (!is_image(content_type, bytes))
    throw Error(ErrorCode::UnsupportedMediaType, "accepted formats: png, jpeg, gif, webp",
                {{"content_type", content_type}});
  const std::string ref = store_.put_blob(bytes);
  log(user.user_id, Action::UploadPhoto, ref);
  return ref;
}

std::optional<std::vector<std::uint8_t>> Service::get_blob(const std::string& token, const std::string& ref) {
  authenticate(token);
  return store_.get_blob(ref);
}

// ---------------------------------------------------------------------------
// Reviews

json Service::pending_reviews(const std::string& token) {
  const auto user = require_gate(authenticate(token));
  json out = json::array();
  for (const auto& rec : store_.scan(kinds::kReviewTask)) {
    const auto task = json::parse(rec.payload).get<study::PendingReviewTask>();
    if (task.user_id != user.user_id || task.state != study::TaskState::Pending) continue;
    json item = task;
    if (auto offer = find_offer(task.offer_id)) item["offer_title"] = offer->title;
    out.push_back(std::move(item));
  }
  return {{"pending_reviews", out}, {"count", out.size()}};
}

json Service::submit_review(const std::string& token, const json& body) {
  const auto user = require_gate(authenticate(token));
  const auto task_id = jsonu::require<std::string>(body, "task_id");
  auto task_rec = store_.get(kinds::kReviewTask, task_id);
  if (!task_rec) throw Error(ErrorCode::UnknownTask, "no such review task", {{"task_id", task_id}});
  const auto task = json::parse(task_rec->payload).get<study::PendingReviewTask>();

  study::HandOverReview review;
  review.offer_id = task.offer_id;
  review.reviewer_id = user.user_id;
  review.place = jsonu::optional_field<std::string>(body, "place").value_or("");
  if (auto c = jsonu::optional_field<std::string>(body, "place_category")) {
    review.place_category = study::parse_place_category(*c);
    if (!review.place_category)
      throw Error(ErrorCode::ValidationFailed, "unknown place_category", {{"field", "place_category"}});
  }
  const auto channel = study::parse_contact_channel_used(jsonu::require<std::string>(body, "contact_channel"));
  if (!channel) throw Error(ErrorCode::ValidationFailed, "unknown contact_channel", {{"field", "contact_channel"}});
  review.contact_channel = *channel;
  review.satisfaction = jsonu::require<int>(body, "satisfaction");
  review.likely_repeat = jsonu::require<int>(body, "likely_repeat");
  review.counterparty_id = jsonu::optional_field<std::string>(body, "counterparty_id");
  if (!review.counterparty_id) {
    if (auto offer = find_offer(task.offer_id)) {
      if (offer->owner_id == user.user_id)
        review.counterparty_id = offer->collector_id;
      else
        review.counterparty_id = offer->owner_id;
    }
  }

  const std::string review_id = task.offer_id + "." + user.user_id;
  const bool exists = store_.get(kinds::kReview, review_id).has_value();
  auto submitted = study::submit_review(task, std::move(review), exists, now());
  try {
    create(kinds::kReview, review_id, submitted.review);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::VersionConflict)
      throw Error(ErrorCode::DuplicateReview, "a review for this hand-over already exists");
    throw;
  }
  mutate<study::PendingReviewTask>(kinds::kReviewTask, task_id,
                                   [](study::PendingReviewTask& t) { t.state = study::TaskState::Done; });
  log(user.user_id, Action::SubmitReview, task.offer_id);
  return {{"review", submitted.review}, {"task", submitted.task}};
}

json Service::dismiss_review(const std::string& token, const std::string& task_id) {
  const auto user = require_gate(authenticate(token));
  const auto task = mutate<study::PendingReviewTask>(kinds::kReviewTask, task_id, [&](study::PendingReviewTask& t) {
    t = study::dismiss_review(t, user.user_id);
  });
  log(user.user_id, Action::DismissReview, task.offer_id);
  return task;
}

// ---------------------------------------------------------------------------
// Study

json Service::study_gate(const std::string& token) {
  const auto user = authenticate(token);
  json out = gate_json(study::gate_access(user));
  out["approval"] = user.approval;
  out["consent"] = user.consent;
  return out;
}

json Service::record_consent(const std::string& token, const json& body) {
  const auto user = authenticate(token);
  require_trial_not_closed();
  const bool study_consent = jsonu::require<bool>(body, "study_consent");
  const bool location = jsonu::optional_field<bool>(body, "location_logging_consent").value_or(false);
  const auto locale = jsonu::optional_field<std::string>(body, "locale_shown").value_or(user.locale);
  if (!catalog_.has(locale)) throw Error(ErrorCode::UnknownLocale, "unknown locale " + locale);
  const auto updated = mutate<UserProfile>(kinds::kUser, user.user_id, [&](UserProfile& u) {
    u.consent = study::record_consent(u, study_consent, location, locale, now());
  });
  log(user.user_id, Action::GiveConsent, user.user_id);
  json out = updated.consent;
  out["gate"] = gate_json(study::gate_access(updated));
  return out;
}

json Service::store_survey(const UserProfile& user, const std::string& instrument, const json& answers,
                           std::optional<double> score) {
  analytics::SurveyRecord rec{user.user_id, instrument, answers, score, now()};
  const auto id = analytics::survey_record_id(user.user_id, instrument);
  for (int attempt = 0; attempt <= config_.max_write_retries; ++attempt) {
    const auto existing = store_.get(kinds::kSurvey, id);
    try {
      store_.put_if_version(kinds::kSurvey, id, existing ? existing->version : 0, json(rec).dump(), now());
      log(user.user_id, Action::SubmitSurvey, instrument);
      return rec;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VersionConflict) throw;
    }
  }
  throw Error(ErrorCode::Conflict, "concurrent survey submissions");
}

namespace {

void require_study_consent(const UserProfile& user) {
  if (user.approval.status != ApprovalStatus::Approved)
    throw Error(ErrorCode::NotApproved, "account is not approved");
  if (!user.consent.study_consent) {
    study::GateVerdict v = study::gate_access(user);
    throw Error(ErrorCode::ConsentIncomplete, "study consent is required first", gate_json(v));
  }
}

std::vector<int> int_items(const json& body) {
  const auto items = jsonu::require<std::vector<int>>(body, "items");
  return items;
}

}  // namespace

json Service::submit_demographics(const std::string& token, const json& body) {
  const auto user = authenticate(token);
  require_trial_not_closed();
  require_study_consent(user);
  const auto d = study::parse_demographics(body);
  const auto out = store_survey(user, "demographics", study::demographics_to_json(d), std::nullopt);
  mutate<UserProfile>(kinds::kUser, user.user_id, [&](UserProfile& u) {
    u.consent.demographics_done = true;
    if (!u.is_moderator()) u.user_group = d.user_group;
  });
  return out;
}

json Service::submit_lsns(const std::string& token, const json& body) {
  const auto user = authenticate(token);
  require_trial_not_closed();
  require_study_consent(user);
  const auto items = int_items(body);
  const auto response = study::Lsns6Response::from(items);
  const auto out = store_survey(user, "lsns6", items, study::score_lsns6(response));
  mutate<UserProfile>(kinds::kUser, user.user_id, [](UserProfile& u) { u.consent.lsns_done = true; });
  return out;
}

json Service::submit_sus(const std::string& token, const json& body) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  const auto items = int_items(body);
  const double score = study::score_sus(study::SusResponse::from(items));
  json out = store_survey(user, "sus", items, score);
  const auto grade = study::sus_grade(score, instruments_.grades);
  out["grade"] = {{"adjective", grade.adjective}, {"letter", grade.letter}};
  return out;
}

json Service::submit_usefulness(const std::string& token, const json& body) {
  const auto user = require_gate(authenticate(token));
  require_trial_not_closed();
  const auto response = study::UsefulnessResponse::from_json(body.contains("answers") ? body.at("answers") : body);
  return store_survey(user, "usefulness", response.to_json(), std::nullopt);
}

json Service::instrument_definitions() const {
  json out = json::array();
  for (const auto& [id, def] : instruments_.instruments)
    out.push_back({{"id", id},
                   {"items", def.item_keys},
                   {"anchors", def.anchor_keys},
                   {"scale", {{"min", def.scale_min}, {"max", def.scale_max}}}});
  return {{"instruments", out}};
}

// ---------------------------------------------------------------------------
// Public

json Service::localization(const std::string& locale) const {
  return l10n::localization_response(catalog_, locale);
}

json Service::version_stamp() const { return {{"data_version", store_.data_version()}}; }

// ---------------------------------------------------------------------------
// Moderation

json Service::list_pending_users(const Principal& p) {
  require_moderator(p);
  std::vector<UserProfile> pending;
  for (const auto& rec : store_.scan(kinds::kUser)) {
    auto u = json::parse(rec.payload).get<UserProfile>();
    if (u.approval.status == ApprovalStatus::Pending) pending.push_back(std::move(u));
  }
  std::sort(pending.begin(), pending.end(), [](const UserProfile& a, const UserProfile& b) {
    return std::tie(a.created_at, a.user_id) < std::tie(b.created_at, b.user_id);
  });
  json out = json::array();
  for (const auto& u : pending) {
    json entry = {{"user_id", u.user_id},
                  {"display_name", u.display_name},
                  {"locale", u.locale},
                  {"created_at", jsonu::ts(u.created_at)},
                  {"annotations", json::array()}};
    if (auto m = store_.get(kinds::kModeration, u.user_id))
      entry["annotations"] = json::parse(m->payload).value("annotations", json::array());
    out.push_back(std::move(entry));
  }
  return {{"pending", out}, {"count", out.size()}};
}

json Service::approve_user(const Principal& p, const UserId& user_id) {
  require_moderator(p);
  std::vector<NotificationKind> notes;
  const auto user = mutate<UserProfile>(kinds::kUser, user_id, [&](UserProfile& u) {
    auto outcome = transition_approval(u, ApprovalDecision::Approve, std::nullopt, p.user_id, now());
    u = outcome.user;
    notes = outcome.notifications;
  });
  for (auto kind : notes) queue_notification(kind, user);
  log(p.user_id, Action::ApproveUser, user_id);
  json out = user;
  out["notifications"] = json::array();
  for (auto kind : notes) out["notifications"].push_back(std::string(to_string(kind)));
  return out;
}

json Service::reject_user(const Principal& p, const UserId& user_id, const json& body) {
  require_moderator(p);
  std::optional<RejectionReason> reason;
  if (auto r = jsonu::optional_field<std::string>(body.is_object() ? body : json::object(), "reason")) {
    reason = parse_rejection_reason(*r);
    if (!reason)
      throw Error(ErrorCode::ValidationFailed,
                  "reason must be outside_region, insufficient_info, duplicate_identity or other",
                  {{"field", "reason"}});
  }
  std::vector<NotificationKind> notes;
  const auto user = mutate<UserProfile>(kinds::kUser, user_id, [&](UserProfile& u) {
    auto outcome = transition_approval(u, ApprovalDecision::Reject, reason, p.user_id, now());
    u = outcome.user;
    notes = outcome.notifications;
  });
  for (auto kind : notes) queue_notification(kind, user);
  log(p.user_id, Action::RejectUser, user_id);
  json out = user;
  out["notifications"] = json::array();
  for (auto kind : notes) out["notifications"].push_back(std::string(to_string(kind)));
  return out;
}

json Service::remove_offer(const Principal& p, const OfferId& offer_id) {
  require_moderator(p);
  const Actor actor{p.user_id, true};
  const auto offer = mutate<Offer>(kinds::kOffer, offer_id, [&](Offer& o) {
    o = transition_offer(o, RemoveEvent{}, actor, now()).offer;
  });
  log(p.user_id, Action::RemoveOffer, offer_id);
  return offer;
}

json Service::list_reports(const Principal& p) {
  require_moderator(p);
  json out = json::array();
  for (const auto& rec : store_.scan(kinds::kReport)) out.push_back(json::parse(rec.payload));
  std::sort(out.begin(), out.end(), [](const json& a, const json& b) {
    return a.at("created_at").get<std::string>() < b.at("created_at").get<std::string>();
  });
  return {{"reports", out}, {"count", out.size()}};
}

// ---------------------------------------------------------------------------
// Operator

json Service::set_moderator(const Principal& p, const UserId& user_id, bool enabled) {
  require_admin(p);
  const auto user = mutate<UserProfile>(kinds::kUser, user_id, [&](UserProfile& u) {
    if (enabled)
      u.user_group = UserGroup::Moderator;
    else if (u.user_group == UserGroup::Moderator)
      u.user_group = UserGroup::Unspecified;
  });
  log(p.user_id, Action::PromoteUser, user_id);
  return {{"user_id", user.user_id}, {"moderator", user.is_moderator()}};
}

json Service::trial_status(const Principal& p) {
  require_admin(p);
  const auto w = trial();
  json counts{{"users", 0}, {"pending", 0}, {"approved", 0}, {"rejected", 0}, {"offers", 0}, {"open_offers", 0}};
  for (const auto& rec : store_.scan(kinds::kUser)) {
    const auto u = json::parse(rec.payload).get<UserProfile>();
    counts["users"] = counts["users"].get<int>() + 1;
    const std::string s(to_string(u.approval.status));
    counts[s] = counts[s].get<int>() + 1;
  }
  for (const auto& rec : store_.scan(kinds::kOffer)) {
    const auto o = json::parse(rec.payload).get<Offer>();
    counts["offers"] = counts["offers"].get<int>() + 1;
    if (o.status == OfferStatus::Open) counts["open_offers"] = counts["open_offers"].get<int>() + 1;
  }
  return {{"state", std::string(to_string(w.state))},
          {"opens_at", jsonu::opt_ts(w.opens_at)},
          {"closes_at", jsonu::opt_ts(w.closes_at)},
          {"counts", counts}};
}

json Service::trial_open(const Principal& p, Duration length) {
  require_admin(p);
  if (length <= Duration::zero()) throw Error(ErrorCode::ValidationFailed, "trial length must be positive");
  const auto w = trial();
  if (w.state == TrialState::Closed) throw Error(ErrorCode::InvalidTransition, "a closed trial cannot be reopened");
  if (w.state == TrialState::Scheduled) {
    const json rec{{"state", "open"}, {"opens_at", jsonu::ts(now())}, {"closes_at", jsonu::ts(now() + length)}};
    const auto existing = store_.get(kinds::kTrial, "current");
    try {
      store_.put_if_version(kinds::kTrial, "current", existing ? existing->version : 0, rec.dump(), now());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::VersionConflict)
        throw Error(ErrorCode::Conflict, "trial state changed concurrently");
      throw;
    }
  }
  return trial_status(p);
}

json Service::trial_close(const Principal& p) {
  require_admin(p);
  const auto w = trial();
  const auto existing = store_.get(kinds::kTrial, "current");
  const bool stored_closed = existing && json::parse(existing->payload).at("state") == "closed";
  if (!stored_closed) {
    const json rec{{"state", "closed"},
                   {"opens_at", jsonu::opt_ts(w.opens_at)},
                   {"closes_at", jsonu::ts(w.closes_at && *w.closes_at < now() ? *w.closes_at : now())}};
    try {
      store_.put_if_version(kinds::kTrial, "current", existing ? existing->version : 0, rec.dump(), now());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VersionConflict) throw;
    }
  }
  return trial_status(p);
}

json Service::stats(const Principal& p, const telemetry::Window& window) {
  require_admin(p);
  return analytics::compute_stats(store_, window, instruments_);
}

json Service::export_archive(const Principal& p, const std::string& key) {
  require_admin(p);
  const auto archive = analytics::export_dataset(store_, key, instruments_);
  return {{"files", archive.files}, {"pseudonym_map", archive.pseudonym_map}};
}

// ---------------------------------------------------------------------------

int Service::dispatch_notifications(EmailSender& sender) {
  int delivered = 0;
  for (const auto& rec : store_.scan(kinds::kNotification)) {
    const auto task = json::parse(rec.payload).get<NotificationTask>();
    const bool retryable = task.state == DeliveryState::Failed && task.attempts < config_.max_delivery_attempts;
    if (task.state != DeliveryState::Queued && !retryable) continue;
    try {
      sender.send(task, now());
    } catch (const std::exception&) {
      mutate<NotificationTask>(kinds::kNotification, task.task_id, [](NotificationTask& t) {
        if (t.state == DeliveryState::Sent) return;
        t.state = DeliveryState::Failed;
        ++t.attempts;
      });
      continue;
    }
    mutate<NotificationTask>(kinds::kNotification, task.task_id, [&](NotificationTask& t) {
      if (t.state == DeliveryState::Sent) return;
      t.state = DeliveryState::Sent;
      ++t.attempts;
      t.sent_at = now();
    });
    ++delivered;
  }
  return delivered;
}

int Service::reconcile_star_counts() {
  std::vector<Offer> offers;
  for (const auto& rec : store_.scan(kinds::kOffer)) offers.push_back(json::parse(rec.payload).get<Offer>());
  int fixed = 0;
  for (const auto& rec : store_.scan(kinds::kUser)) {
    const auto u = json::parse(rec.payload).get<UserProfile>();
    const long long stars = derive_star_count(u.user_id, offers);
    if (stars == u.completed_deliveries) continue;
    mutate<UserProfile>(kinds::kUser, u.user_id, [&](UserProfile& x) { x.completed_deliveries = stars; });
    ++fixed;
  }
  return fixed;
}

}  // namespace geofreebie
