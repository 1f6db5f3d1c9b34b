#include "geofreebie/domain.hpp"

#include "geofreebie/json_util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace geofreebie {

using nlohmann::json;

bool in_range(double lat, double lon) {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
         lon >= -180.0 && lon <= 180.0;
}

void validate_position(const GeoPosition& p, Timestamp now) {
  if (!in_range(p.lat, p.lon)) {
    throw Error(ErrorCode::InvalidPosition, "latitude/longitude out of range",
                {{"lat", p.lat}, {"lon", p.lon}});
  }
  if (p.recorded_at > now + kMaxClockSkew) {
    throw Error(ErrorCode::InvalidPosition, "recorded_at is too far in the future",
                {{"recorded_at", format_timestamp(p.recorded_at)}});
  }
}

// ---------------------------------------------------------------------------

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::Email: return "email";
    case Channel::Facebook: return "facebook";
    case Channel::Phone: return "phone";
    case Channel::Whatsapp: return "whatsapp";
  }
  return "email";
}

std::optional<Channel> parse_channel(std::string_view s) {
  for (Channel c : kChannels)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

const ContactDetail& ContactMethods::get(Channel c) const {
  switch (c) {
    case Channel::Email: return email;
    case Channel::Facebook: return facebook;
    case Channel::Phone: return phone;
    case Channel::Whatsapp: return whatsapp;
  }
  return email;
}

ContactDetail& ContactMethods::get(Channel c) {
  return const_cast<ContactDetail&>(std::as_const(*this).get(c));
}

bool ContactMethods::any_enabled() const {
  return std::any_of(kChannels.begin(), kChannels.end(),
                     [this](Channel c) { return get(c).enabled; });
}

bool is_valid_email(std::string_view email) {
  const auto at = email.find('@');
  if (at == std::string_view::npos || at == 0 || email.find('@', at + 1) != std::string_view::npos)
    return false;
  const auto domain = email.substr(at + 1);
  const auto dot = domain.rfind('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 >= domain.size()) return false;
  if (domain.find("..") != std::string_view::npos) return false;
  return std::none_of(email.begin(), email.end(), [](unsigned char ch) {
    return std::isspace(ch) || std::iscntrl(ch) || ch == '<' || ch == '>' || ch == '"' ||
           ch == ',' || ch == ';';
  });
}

std::optional<std::string> normalize_phone(std::string_view raw) {
  std::string digits;
  bool plus = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const unsigned char ch = raw[i];
    if (ch == '+' && digits.empty() && !plus) {
      plus = true;
    } else if (std::isdigit(ch)) {
      digits.push_back(static_cast<char>(ch));
    } else if (ch == ' ' || ch == '-' || ch == '(' || ch == ')' || ch == '/' || ch == '.') {
      continue;
    } else {
      return std::nullopt;
    }
  }
  if (!plus) {
    // International form only: "00<country>..." is accepted as "+<country>...".
    if (digits.size() > 2 && digits.starts_with("00")) {
      digits.erase(0, 2);
    } else {
      return std::nullopt;
    }
  }
  if (digits.size() < 7 || digits.size() > 15 || digits.front() == '0') return std::nullopt;
  return "+" + digits;
}

namespace {

std::optional<std::string> normalize_facebook(std::string_view raw) {
  std::string_view s = raw;
  for (std::string_view prefix : {"https://", "http://"})
    if (s.starts_with(prefix)) s.remove_prefix(prefix.size());
  for (std::string_view prefix : {"www.", "m."})
    if (s.starts_with(prefix)) s.remove_prefix(prefix.size());
  for (std::string_view prefix : {"facebook.com/", "fb.com/"})
    if (s.starts_with(prefix)) s.remove_prefix(prefix.size());
  while (!s.empty() && s.back() == '/') s.remove_suffix(1);
  if (s.starts_with("profile.php?id=")) {
    const auto id = s.substr(15);
    if (id.empty() || !std::all_of(id.begin(), id.end(), [](unsigned char c) {
          return std::isdigit(c);
        }))
      return std::nullopt;
    return std::string(s);
  }
  if (s.size() < 5 || s.size() > 50) return std::nullopt;
  if (!std::all_of(s.begin(), s.end(),
                   [](unsigned char c) { return std::isalnum(c) || c == '.'; }))
    return std::nullopt;
  return std::string(s);
}

[[noreturn]] void invalid_detail(Channel c) {
  throw Error(ErrorCode::InvalidDetail,
              "malformed contact detail for channel " + std::string(to_string(c)),
              {{"channel", std::string(to_string(c))}});
}

}  // namespace

ContactMethods normalize_contact_methods(const ContactMethods& cm) {
  ContactMethods out = cm;
  for (Channel c : kChannels) {
    ContactDetail& d = out.get(c);
    if (!d.enabled) continue;
    std::optional<std::string> canonical;
    switch (c) {
      case Channel::Email:
        if (is_valid_email(d.detail)) canonical = d.detail;
        break;
      case Channel::Facebook:
        canonical = normalize_facebook(d.detail);
        break;
      case Channel::Phone:
      case Channel::Whatsapp:
        canonical = normalize_phone(d.detail);
        break;
    }
    if (!canonical) invalid_detail(c);
    d.detail = std::move(*canonical);
  }
  return out;
}

std::vector<ContactLink> build_contact_links(const ContactMethods& cm) {
  const ContactMethods canonical = normalize_contact_methods(cm);
  std::vector<ContactLink> links;
  for (Channel c : kChannels) {
    const ContactDetail& d = canonical.get(c);
    if (!d.enabled) continue;
    switch (c) {
      case Channel::Email:
        links.push_back({c, "Email", "mailto:" + d.detail});
        break;
      case Channel::Facebook:
        links.push_back({c, "Facebook", "https://www.facebook.com/" + d.detail});
        break;
      case Channel::Phone:
        links.push_back({c, "Phone", "tel:" + d.detail});
        break;
      case Channel::Whatsapp:
        links.push_back({c, "WhatsApp", "https://wa.me/" + d.detail.substr(1)});
        break;
    }
  }
  return links;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ApprovalStatus s) {
  switch (s) {
    case ApprovalStatus::Pending: return "pending";
    case ApprovalStatus::Approved: return "approved";
    case ApprovalStatus::Rejected: return "rejected";
  }
  return "pending";
}

std::string_view to_string(RejectionReason r) {
  switch (r) {
    case RejectionReason::OutsideRegion: return "outside_region";
    case RejectionReason::InsufficientInfo: return "insufficient_info";
    case RejectionReason::DuplicateIdentity: return "duplicate_identity";
    case RejectionReason::Other: return "other";
  }
  return "other";
}

std::string_view to_string(UserGroup g) {
  switch (g) {
    case UserGroup::ForcedMigrant: return "forced_migrant";
    case UserGroup::LocalFreecycler: return "local_freecycler";
    case UserGroup::Moderator: return "moderator";
    case UserGroup::Unspecified: return "unspecified";
  }
  return "unspecified";
}

std::optional<ApprovalStatus> parse_approval_status(std::string_view s) {
  for (auto v : {ApprovalStatus::Pending, ApprovalStatus::Approved, ApprovalStatus::Rejected})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<RejectionReason> parse_rejection_reason(std::string_view s) {
  std::string key(s);
  std::replace(key.begin(), key.end(), '-', '_');
  for (auto v : {RejectionReason::OutsideRegion, RejectionReason::InsufficientInfo,
                 RejectionReason::DuplicateIdentity, RejectionReason::Other})
    if (to_string(v) == key) return v;
  return std::nullopt;
}

std::optional<UserGroup> parse_user_group(std::string_view s) {
  for (auto v : {UserGroup::ForcedMigrant, UserGroup::LocalFreecycler, UserGroup::Moderator,
                 UserGroup::Unspecified})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::string_view to_string(NotificationKind k) {
  switch (k) {
    case NotificationKind::WelcomeEmail: return "WelcomeEmail";
    case NotificationKind::ApprovalPendingNotice: return "ApprovalPendingNotice";
    case NotificationKind::RejectionNotice: return "RejectionNotice";
  }
  return "WelcomeEmail";
}

std::optional<NotificationKind> parse_notification_kind(std::string_view s) {
  for (auto v : {NotificationKind::WelcomeEmail, NotificationKind::ApprovalPendingNotice,
                 NotificationKind::RejectionNotice})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

ApprovalOutcome transition_approval(const UserProfile& user, ApprovalDecision decision,
                                    std::optional<RejectionReason> reason,
                                    const UserId& moderator, Timestamp now) {
  if (user.approval.status != ApprovalStatus::Pending) {
    throw Error(ErrorCode::NotPending, "approval already decided",
                {{"status", std::string(to_string(user.approval.status))}});
  }
  if (decision == ApprovalDecision::Reject && !reason) {
    throw Error(ErrorCode::MissingReason, "rejection requires a reason");
  }
  ApprovalOutcome out{user, {}};
  out.user.approval.decided_at = now;
  out.user.approval.decided_by = moderator;
  if (decision == ApprovalDecision::Approve) {
    out.user.approval.status = ApprovalStatus::Approved;
    out.user.approval.reason.reset();
    out.notifications.push_back(NotificationKind::WelcomeEmail);
  } else {
    out.user.approval.status = ApprovalStatus::Rejected;
    out.user.approval.reason = reason;
    out.notifications.push_back(NotificationKind::RejectionNotice);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(OfferStatus s) {
  switch (s) {
    case OfferStatus::Open: return "open";
    case OfferStatus::Completed: return "completed";
    case OfferStatus::Withdrawn: return "withdrawn";
    case OfferStatus::Removed: return "removed";
  }
  return "open";
}

std::optional<OfferStatus> parse_offer_status(std::string_view s) {
  for (auto v : {OfferStatus::Open, OfferStatus::Completed, OfferStatus::Withdrawn,
                 OfferStatus::Removed})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

bool is_terminal(OfferStatus s) { return s != OfferStatus::Open; }

void validate_new_offer(const Offer& offer, Timestamp now) {
  if (offer.title.empty() || offer.title.size() > kMaxTitleLength) {
    throw Error(ErrorCode::ValidationFailed, "title must be 1..120 characters",
                {{"field", "title"}, {"length", offer.title.size()}});
  }
  validate_position(offer.pickup_position, now);
}

OfferOutcome transition_offer(const Offer& offer, const OfferEvent& event, const Actor& actor,
                              Timestamp now) {
  if (offer.status != OfferStatus::Open) {
    throw Error(ErrorCode::NotOpen, "offer is no longer open",
                {{"status", std::string(to_string(offer.status))}});
  }
  OfferOutcome out{offer, 0, {}};
  std::visit(
      [&](const auto& ev) {
        using E = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<E, RemoveEvent>) {
          if (!actor.moderator)
            throw Error(ErrorCode::NotAuthorized, "only moderators may remove offers");
          out.offer.status = OfferStatus::Removed;
          out.offer.removed_by = actor.user_id;
        } else {
          if (actor.user_id != offer.owner_id)
            throw Error(ErrorCode::NotAuthorized, "only the owner may change this offer");
          if constexpr (std::is_same_v<E, WithdrawEvent>) {
            out.offer.status = OfferStatus::Withdrawn;
          } else {
            if (ev.collector_id && *ev.collector_id == offer.owner_id)
              throw Error(ErrorCode::ValidationFailed, "collector cannot be the owner",
                          {{"field", "collector_id"}});
            out.offer.status = OfferStatus::Completed;
            out.offer.completed_at = std::max(now, offer.created_at);
            out.offer.collector_id = ev.collector_id;
            out.owner_star_delta = 1;
            out.review_for.push_back(offer.owner_id);
            if (ev.collector_id) out.review_for.push_back(*ev.collector_id);
          }
        }
      },
      event);
  return out;
}

long long derive_star_count(const UserId& user_id, std::span<const Offer> offers) {
  return std::count_if(offers.begin(), offers.end(), [&](const Offer& o) {
    return o.owner_id == user_id && o.status == OfferStatus::Completed;
  });
}

UserProfile block_user(const UserProfile& actor, const UserId& target, bool target_exists) {
  if (target == actor.user_id) throw Error(ErrorCode::SelfBlock, "cannot block yourself");
  if (!target_exists)
    throw Error(ErrorCode::UnknownUser, "no such user", {{"user_id", target}});
  UserProfile out = actor;
  out.blocked_ids.insert(target);
  return out;
}

bool is_visible(const Offer& offer, const UserProfile& owner, const UserProfile& viewer,
                bool owner_available) {
  if (viewer.user_id == offer.owner_id) return true;
  return offer.status == OfferStatus::Open && owner_available &&
         !viewer.blocked_ids.contains(offer.owner_id) &&
         !owner.blocked_ids.contains(viewer.user_id);
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const GeoPosition& p) {
  j = json{{"lat", p.lat}, {"lon", p.lon}, {"recorded_at", jsonu::ts(p.recorded_at)}};
}

void from_json(const json& j, GeoPosition& p) {
  p.lat = j.at("lat").get<double>();
  p.lon = j.at("lon").get<double>();
  p.recorded_at = jsonu::ts(j.at("recorded_at"));
}

void to_json(json& j, const ContactMethods& c) {
  j = json::object();
  for (Channel ch : kChannels) {
    const auto& d = c.get(ch);
    j[std::string(to_string(ch))] = {{"enabled", d.enabled}, {"detail", d.detail}};
  }
}

void from_json(const json& j, ContactMethods& c) {
  for (Channel ch : kChannels) {
    auto it = j.find(std::string(to_string(ch)));
    if (it == j.end() || it->is_null()) continue;
    auto& d = c.get(ch);
    d.enabled = it->value("enabled", false);
    d.detail = it->value("detail", std::string{});
  }
}

void to_json(json& j, const ContactLink& l) {
  j = json{{"channel", std::string(to_string(l.channel))}, {"label", l.label}, {"uri", l.uri}};
}

void to_json(json& j, const ApprovalState& a) {
  j = json{{"status", std::string(to_string(a.status))},
           {"reason", a.reason ? json(std::string(to_string(*a.reason))) : json(nullptr)},
           {"decided_at", jsonu::opt_ts(a.decided_at)},
           {"decided_by", jsonu::opt(a.decided_by)}};
}

void from_json(const json& j, ApprovalState& a) {
  auto status = parse_approval_status(j.at("status").get<std::string>());
  if (!status) throw Error(ErrorCode::ParseError, "bad approval status");
  a.status = *status;
  a.reason.reset();
  if (auto r = jsonu::get_opt<std::string>(j, "reason")) a.reason = parse_rejection_reason(*r);
  a.decided_at = jsonu::get_opt_ts(j, "decided_at");
  a.decided_by = jsonu::get_opt<std::string>(j, "decided_by");
}

void to_json(json& j, const ConsentState& c) {
  j = json{{"study_consent", c.study_consent},
           {"location_logging_consent", c.location_logging_consent},
           {"consented_at", jsonu::opt_ts(c.consented_at)},
           {"locale_shown", c.locale_shown},
           {"demographics_done", c.demographics_done},
           {"lsns_done", c.lsns_done}};
}

void from_json(const json& j, ConsentState& c) {
  c.study_consent = j.value("study_consent", false);
  c.location_logging_consent = j.value("location_logging_consent", false);
  c.consented_at = jsonu::get_opt_ts(j, "consented_at");
  c.locale_shown = j.value("locale_shown", std::string{});
  c.demographics_done = j.value("demographics_done", false);
  c.lsns_done = j.value("lsns_done", false);
}

void to_json(json& j, const UserProfile& u) {
  j = json{{"user_id", u.user_id},
           {"display_name", u.display_name},
           {"picture_ref", jsonu::opt(u.picture_ref)},
           {"contact_methods", u.contact_methods},
           {"locale", u.locale},
           {"home_position", jsonu::opt(u.home_position)},
           {"last_position", jsonu::opt(u.last_position)},
           {"approval", u.approval},
           {"completed_deliveries", u.completed_deliveries},
           {"blocked_ids", u.blocked_ids},
           {"consent", u.consent},
           {"user_group", std::string(to_string(u.user_group))},
           {"created_at", jsonu::ts(u.created_at)}};
}

void from_json(const json& j, UserProfile& u) {
  u.user_id = j.at("user_id").get<std::string>();
  u.display_name = j.at("display_name").get<std::string>();
  u.picture_ref = jsonu::get_opt<std::string>(j, "picture_ref");
  u.contact_methods = j.at("contact_methods").get<ContactMethods>();
  u.locale = j.value("locale", std::string("en"));
  u.home_position = jsonu::get_opt<GeoPosition>(j, "home_position");
  u.last_position = jsonu::get_opt<GeoPosition>(j, "last_position");
  u.approval = j.at("approval").get<ApprovalState>();
  u.completed_deliveries = j.value("completed_deliveries", 0LL);
  u.blocked_ids = j.value("blocked_ids", std::set<std::string>{});
  u.consent = j.at("consent").get<ConsentState>();
  u.user_group = parse_user_group(j.value("user_group", std::string("unspecified")))
                     .value_or(UserGroup::Unspecified);
  u.created_at = jsonu::ts(j.at("created_at"));
}

void to_json(json& j, const Offer& o) {
  j = json{{"offer_id", o.offer_id},
           {"owner_id", o.owner_id},
           {"title", o.title},
           {"description", jsonu::opt(o.description)},
           {"photo_ref", jsonu::opt(o.photo_ref)},
           {"pickup_position", o.pickup_position},
           {"status", std::string(to_string(o.status))},
           {"created_at", jsonu::ts(o.created_at)},
           {"completed_at", jsonu::opt_ts(o.completed_at)},
           {"collector_id", jsonu::opt(o.collector_id)},
           {"removed_by", jsonu::opt(o.removed_by)}};
}

void from_json(const json& j, Offer& o) {
  o.offer_id = j.at("offer_id").get<std::string>();
  o.owner_id = j.at("owner_id").get<std::string>();
  o.title = j.at("title").get<std::string>();
  o.description = jsonu::get_opt<std::string>(j, "description");
  o.photo_ref = jsonu::get_opt<std::string>(j, "photo_ref");
  o.pickup_position = j.at("pickup_position").get<GeoPosition>();
  auto status = parse_offer_status(j.at("status").get<std::string>());
  if (!status) throw Error(ErrorCode::ParseError, "bad offer status");
  o.status = *status;
  o.created_at = jsonu::ts(j.at("created_at"));
  o.completed_at = jsonu::get_opt_ts(j, "completed_at");
  o.collector_id = jsonu::get_opt<std::string>(j, "collector_id");
  o.removed_by = jsonu::get_opt<std::string>(j, "removed_by");
}

}  // namespace geofreebie
