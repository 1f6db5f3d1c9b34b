#pragma once

#include "geofreebie/crypto.hpp"
#include "geofreebie/domain.hpp"
#include "geofreebie/geo.hpp"
#include "geofreebie/localization.hpp"
#include "geofreebie/store.hpp"
#include "geofreebie/study.hpp"
#include "geofreebie/telemetry.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geofreebie {

// ---------------------------------------------------------------------------
// Outbound clients. Real identity providers and mail delivery sit behind these
// interfaces; the repository ships deterministic stubs.

struct ProviderIdentity {
  std::string provider;
  std::string subject;
  std::string email;
  std::string display_name;
};

class IdentityProvider {
 public:
  virtual ~IdentityProvider() = default;
  // nullopt when the token does not verify.
  virtual std::optional<ProviderIdentity> verify(const std::string& provider,
                                                 const std::string& token) const = 0;
};

// Tokens are "<base64url(json identity)>.<keyed blake2b signature>".
// Mode "verify" checks the signature, "reject" fails every token.
class StubIdentityProvider final : public IdentityProvider {
 public:
  StubIdentityProvider(std::string secret, std::string mode = "verify");
  std::optional<ProviderIdentity> verify(const std::string& provider,
                                         const std::string& token) const override;
  std::string issue(const ProviderIdentity& identity) const;

 private:
  std::string secret_;
  std::string mode_;
};

enum class DeliveryState { Queued, Sent, Failed };
std::string_view to_string(DeliveryState s);

struct NotificationTask {
  std::string task_id;
  NotificationKind kind = NotificationKind::WelcomeEmail;
  UserId recipient;
  std::string address;
  nlohmann::json payload;
  DeliveryState state = DeliveryState::Queued;
  int attempts = 0;
  std::optional<Timestamp> sent_at;
  Timestamp created_at{};
};

void to_json(nlohmann::json& j, const NotificationTask& t);
void from_json(const nlohmann::json& j, NotificationTask& t);

class EmailSender {
 public:
  virtual ~EmailSender() = default;
  // Throws on delivery failure.
  virtual void send(const NotificationTask& task, Timestamp now) = 0;
};

// Appends one JSON line per delivered message to a file.
class FileOutbox final : public EmailSender {
 public:
  explicit FileOutbox(std::filesystem::path file) : file_(std::move(file)) {}
  void send(const NotificationTask& task, Timestamp now) override;
  std::vector<nlohmann::json> read_all() const;

 private:
  std::filesystem::path file_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------

struct ServiceConfig {
  geo::GeofenceConfig geofence = geo::muenster_sample();
  Duration session_lifetime = std::chrono::hours{24 * 14};
  crypto::HashCost hash_cost = crypto::HashCost::Interactive;
  std::size_t min_password_length = 10;
  int max_write_retries = 8;
  int requests_per_minute = 600;
  std::size_t max_blob_bytes = 5 * 1024 * 1024;
  int max_delivery_attempts = 5;
};

// Who is calling. Operators authenticate with the admin token; everybody else
// with a session token.
struct Principal {
  UserId user_id;
  bool moderator = false;
  bool admin = false;
};

enum class TrialState { Scheduled, Open, Closed };
std::string_view to_string(TrialState s);

struct TrialWindow {
  TrialState state = TrialState::Scheduled;
  std::optional<Timestamp> opens_at;
  std::optional<Timestamp> closes_at;
};

class Service {
 public:
  Service(store::Store& store, l10n::Catalog catalog, study::InstrumentSet instruments,
          ServiceConfig config, const IdentityProvider& identity, Clock clock,
          std::string admin_token = {});

  store::Store& store() { return store_; }
  const ServiceConfig& config() const { return config_; }
  const l10n::Catalog& catalog() const { return catalog_; }
  const study::InstrumentSet& instruments() const { return instruments_; }
  Timestamp now() const { return clock_(); }

  // Authentication ---------------------------------------------------------
  nlohmann::json signup(const nlohmann::json& body);
  nlohmann::json login(const nlohmann::json& body);
  void logout(const std::string& token);
  // Throws Unauthenticated (also for expired sessions) or RateLimited.
  UserProfile authenticate(const std::string& token);
  Principal principal(const std::optional<std::string>& bearer,
                      const std::optional<std::string>& admin_token);

  // Users ------------------------------------------------------------------
  nlohmann::json get_me(const std::string& token);
  nlohmann::json update_settings(const std::string& token, const nlohmann::json& body);
  nlohmann::json update_location(const std::string& token, const nlohmann::json& body);
  nlohmann::json block(const std::string& token, const UserId& target);

  // Offers -----------------------------------------------------------------
  struct ListQuery {
    std::optional<double> lat;
    std::optional<double> lon;
    std::string view = "list";
    bool refresh = false;
  };
  nlohmann::json list_offers(const std::string& token, const ListQuery& q);
  nlohmann::json create_offer(const std::string& token, const nlohmann::json& body);
  nlohmann::json complete_offer(const std::string& token, const OfferId& offer_id,
                                const nlohmann::json& body,
                                const std::optional<std::string>& idempotency_key);
  nlohmann::json withdraw_offer(const std::string& token, const OfferId& offer_id);
  nlohmann::json report_offer(const std::string& token, const OfferId& offer_id,
                              const nlohmann::json& body);
  std::string put_blob(const std::string& token, const std::string& content_type,
                       std::span<const std::uint8_t> bytes);
  std::optional<std::vector<std::uint8_t>> get_blob(const std::string& token, const std::string& ref);

  // Reviews ----------------------------------------------------------------
  nlohmann::json pending_reviews(const std::string& token);
  nlohmann::json submit_review(const std::string& token, const nlohmann::json& body);
  nlohmann::json dismiss_review(const std::string& token, const std::string& task_id);

  // Study ------------------------------------------------------------------
  nlohmann::json study_gate(const std::string& token);
  nlohmann::json record_consent(const std::string& token, const nlohmann::json& body);
  nlohmann::json submit_demographics(const std::string& token, const nlohmann::json& body);
  nlohmann::json submit_lsns(const std::string& token, const nlohmann::json& body);
  nlohmann::json submit_sus(const std::string& token, const nlohmann::json& body);
  nlohmann::json submit_usefulness(const std::string& token, const nlohmann::json& body);
  nlohmann::json instrument_definitions() const;

  // Public -----------------------------------------------------------------
  nlohmann::json localization(const std::string& locale) const;
  nlohmann::json version_stamp() const;

  // Moderation (moderator session or admin token) ---------------------------
  nlohmann::json list_pending_users(const Principal& p);
  nlohmann::json approve_user(const Principal& p, const UserId& user_id);
  nlohmann::json reject_user(const Principal& p, const UserId& user_id, const nlohmann::json& body);
  nlohmann::json remove_offer(const Principal& p, const OfferId& offer_id);
  nlohmann::json list_reports(const Principal& p);

  // Operator (admin token only) -------------------------------------------
  nlohmann::json set_moderator(const Principal& p, const UserId& user_id, bool enabled);
  nlohmann::json trial_status(const Principal& p);
  nlohmann::json trial_open(const Principal& p, Duration length);
  nlohmann::json trial_close(const Principal& p);
  nlohmann::json stats(const Principal& p, const telemetry::Window& window);
  nlohmann::json export_archive(const Principal& p, const std::string& key);

  // Notification worker body: delivers queued (and retryable failed) tasks.
  // Returns the number delivered.
  int dispatch_notifications(EmailSender& sender);

  // Recomputes every stored star count from the offers (startup repair).
  int reconcile_star_counts();

  TrialWindow trial() const;
  std::optional<UserProfile> find_user(const UserId& id) const;
  std::optional<Offer> find_offer(const OfferId& id) const;

 private:
  struct Session {
    UserId user_id;
    Timestamp created_at{};
    Timestamp expires_at{};
    std::string auth_method;
  };

  UserProfile require_gate(const UserProfile& user);
  void require_trial_not_closed();
  void require_moderator(const Principal& p);
  void require_admin(const Principal& p);
  void check_rate_limit(const std::string& token);

  UserProfile load_user(const UserId& id) const;
  Offer load_offer(const OfferId& id) const;

  // Read-modify-write with compare-and-set; retries on VersionConflict, then
  // gives up with Conflict.
  template <class T, class F>
  T mutate(const char* kind, const std::string& id, F&& fn);
  template <class T>
  void create(const char* kind, const std::string& id, const T& value);

  void log(const UserId& user, telemetry::Action action, std::optional<std::string> entity = {},
           std::optional<GeoPosition> position = {});
  void queue_notification(NotificationKind kind, const UserProfile& user);
  std::string account_email(const UserId& user) const;
  nlohmann::json public_profile(const UserProfile& u) const;
  nlohmann::json store_survey(const UserProfile& user, const std::string& instrument,
                              const nlohmann::json& answers, std::optional<double> score);

  store::Store& store_;
  l10n::Catalog catalog_;
  study::InstrumentSet instruments_;
  ServiceConfig config_;
  const IdentityProvider& identity_;
  Clock clock_;
  std::string admin_token_;
  telemetry::EventLog events_;
  std::string dummy_hash_;

  std::mutex rate_mu_;
  std::map<std::string, std::pair<long long, int>> rate_;  // token -> (minute, count)
};

}  // namespace geofreebie
