#include "geofreebie/json_util.hpp"
#include "geofreebie/service.hpp"

#include <sodium.h>

#include <fstream>

namespace geofreebie {

using nlohmann::json;

StubIdentityProvider::StubIdentityProvider(std::string secret, std::string mode)
    : secret_(std::move(secret)), mode_(std::move(mode)) {
  if (mode_ != "verify" && mode_ != "reject")
    throw Error(ErrorCode::ParseError, "identity provider stub mode must be verify or reject");
  if (secret_.empty()) throw Error(ErrorCode::ParseError, "identity provider stub needs a secret");
}

namespace {

std::optional<std::string> base64url_decode(const std::string& in) {
  crypto::ensure_initialized();
  std::string out(in.size(), '\0');
  std::size_t len = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), in.data(), in.size(),
                        nullptr, &len, nullptr, sodium_base64_VARIANT_URLSAFE_NO_PADDING) != 0)
    return std::nullopt;
  out.resize(len);
  return out;
}

}  // namespace

std::string StubIdentityProvider::issue(const ProviderIdentity& identity) const {
  const std::string body = json{{"provider", identity.provider},
                                {"subject", identity.subject},
                                {"email", identity.email},
                                {"name", identity.display_name}}
                               .dump();
  const std::string encoded = crypto::base64url(
      std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  return encoded + "." + crypto::blake2b_hex(encoded, 32, secret_);
}

std::optional<ProviderIdentity> StubIdentityProvider::verify(const std::string& provider,
                                                             const std::string& token) const {
  if (mode_ == "reject") return std::nullopt;
  const auto dot = token.rfind('.');
  if (dot == std::string::npos) return std::nullopt;
  const std::string encoded = token.substr(0, dot);
  if (!crypto::constant_time_equal(token.substr(dot + 1), crypto::blake2b_hex(encoded, 32, secret_)))
    return std::nullopt;
  const auto body = base64url_decode(encoded);
  if (!body) return std::nullopt;
  try {
    const auto j = json::parse(*body);
    ProviderIdentity id{j.at("provider").get<std::string>(), j.at("subject").get<std::string>(),
                        j.at("email").get<std::string>(), j.at("name").get<std::string>()};
    if (id.provider != provider) return std::nullopt;
    return id;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::string_view to_string(DeliveryState s) {
  switch (s) {
    case DeliveryState::Queued: return "queued";
    case DeliveryState::Sent: return "sent";
    case DeliveryState::Failed: return "failed";
  }
  return "queued";
}

void to_json(json& j, const NotificationTask& t) {
  j = json{{"task_id", t.task_id},
           {"kind", std::string(to_string(t.kind))},
           {"recipient", t.recipient},
           {"address", t.address},
           {"payload", t.payload},
           {"state", std::string(to_string(t.state))},
           {"attempts", t.attempts},
           {"sent_at", jsonu::opt_ts(t.sent_at)},
           {"created_at", jsonu::ts(t.created_at)}};
}

void from_json(const json& j, NotificationTask& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.kind = parse_notification_kind(j.at("kind").get<std::string>()).value_or(NotificationKind::WelcomeEmail);
  t.recipient = j.at("recipient").get<std::string>();
  t.address = j.value("address", std::string{});
  t.payload = j.value("payload", json::object());
  const auto s = j.at("state").get<std::string>();
  t.state = s == "sent" ? DeliveryState::Sent : s == "failed" ? DeliveryState::Failed : DeliveryState::Queued;
  t.attempts = j.value("attempts", 0);
  t.sent_at = jsonu::get_opt_ts(j, "sent_at");
  t.created_at = jsonu::ts(j.at("created_at"));
}

void FileOutbox::send(const NotificationTask& task, Timestamp now) {
  std::lock_guard lock(mu_);
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::Internal, "cannot open outbox " + file_.string());
  out << json{{"task_id", task.task_id},
              {"kind", std::string(to_string(task.kind))},
              {"to", task.address},
              {"recipient", task.recipient},
              {"payload", task.payload},
              {"sent_at", format_timestamp(now)}}
             .dump()
      << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::Internal, "outbox write failed");
}

std::vector<json> FileOutbox::read_all() const {
  std::vector<json> out;
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace geofreebie
