#pragma once

#include "geofreebie/http_api.hpp"
#include "geofreebie/service.hpp"

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace geofreebie {

struct ServerConfig {
  std::string listen_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "var/data";
  std::filesystem::path geofence_file;  // empty: built-in Münster sample
  std::filesystem::path localization_dir = "data/localizations";
  std::filesystem::path instruments_file = "data/instruments.json";
  std::string idp_mode = "verify";
  std::string idp_secret = "stub-idp-secret";
  std::filesystem::path admin_token_file = "var/admin.token";
  crypto::HashCost password_hash_cost = crypto::HashCost::Interactive;
  std::filesystem::path outbox_file = "var/outbox.jsonl";
  std::optional<std::filesystem::path> static_dir;
  bool fsync = true;
  int notification_interval_ms = 1000;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

// Relative paths in the file resolve against the file's directory. GEOFREEBIE_*
// variables override file values.
ServerConfig parse_server_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
ServerConfig load_server_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env);

// Reads the operator token, creating a fresh one (mode 0600) when absent.
std::string ensure_admin_token(const std::filesystem::path& file);

// Everything the server process owns, wired together.
class ServerApp {
 public:
  explicit ServerApp(ServerConfig config, Clock clock = system_clock());
  ~ServerApp();

  ServerApp(const ServerApp&) = delete;
  ServerApp& operator=(const ServerApp&) = delete;

  // Binds the listening socket; returns the bound port.
  int bind();
  // Blocks serving requests until stop().
  void run();
  void stop();

  Service& service() { return *service_; }
  const ServerConfig& config() const { return config_; }

 private:
  void notification_loop();

  ServerConfig config_;
  std::unique_ptr<store::Store> store_;
  std::unique_ptr<StubIdentityProvider> identity_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<FileOutbox> outbox_;
  http::ApiOptions api_options_;
  std::unique_ptr<httplib::Server> http_;

  std::mutex worker_mu_;
  std::condition_variable worker_cv_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace geofreebie
