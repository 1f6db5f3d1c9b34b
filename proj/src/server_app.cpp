#include "geofreebie/server_app.hpp"

#include "geofreebie/http_api.hpp"
#include "geofreebie/json_util.hpp"

#include <httplib.h>
#include <sys/stat.h>

#include <cstdlib>
#include <fstream>

namespace geofreebie {

using nlohmann::json;
namespace fs = std::filesystem;

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

int parse_port(const std::string& s) {
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(s, &used);
    if (used != s.size()) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::ParseError, "port must be within 0..65535");
  return port;
}

}  // namespace

ServerConfig parse_server_config(const json& j, const fs::path& base) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "server config must be a JSON object");
  static const std::set<std::string> known{"listen_address", "port",         "data_dir",        "geofence_file",
                                           "localization_dir", "instruments_file", "idp",       "admin_token_file",
                                           "password_hash_cost", "outbox_file", "static_dir", "fsync",
                                           "notification_interval_ms"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw Error(ErrorCode::ParseError, "unknown config key " + key, {{"key", key}});

  ServerConfig c;
  try {
    c.listen_address = j.value("listen_address", c.listen_address);
    if (j.contains("port")) c.port = parse_port(std::to_string(j.at("port").get<int>()));
    if (j.contains("data_dir")) c.data_dir = resolve(base, j.at("data_dir").get<std::string>());
    if (j.contains("geofence_file")) c.geofence_file = resolve(base, j.at("geofence_file").get<std::string>());
    if (j.contains("localization_dir"))
      c.localization_dir = resolve(base, j.at("localization_dir").get<std::string>());
    if (j.contains("instruments_file"))
      c.instruments_file = resolve(base, j.at("instruments_file").get<std::string>());
    if (j.contains("idp")) {
      c.idp_mode = j.at("idp").value("mode", c.idp_mode);
      c.idp_secret = j.at("idp").value("secret", c.idp_secret);
    }
    if (j.contains("admin_token_file"))
      c.admin_token_file = resolve(base, j.at("admin_token_file").get<std::string>());
    if (j.contains("password_hash_cost"))
      c.password_hash_cost = crypto::parse_hash_cost(j.at("password_hash_cost").get<std::string>());
    if (j.contains("outbox_file")) c.outbox_file = resolve(base, j.at("outbox_file").get<std::string>());
    if (j.contains("static_dir") && !j.at("static_dir").is_null())
      c.static_dir = resolve(base, j.at("static_dir").get<std::string>());
    c.fsync = j.value("fsync", c.fsync);
    c.notification_interval_ms = j.value("notification_interval_ms", c.notification_interval_ms);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad server config: ") + e.what());
  }
  if (c.notification_interval_ms <= 0)
    throw Error(ErrorCode::ParseError, "notification_interval_ms must be positive");
  return c;
}

ServerConfig load_server_config(const std::optional<fs::path>& file, const EnvLookup& env) {
  ServerConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorCode::ParseError, "cannot read config " + file->string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "config " + file->string() + " is not valid JSON: " + e.what());
    }
    c = parse_server_config(j, file->parent_path());
  }
  if (auto v = env("GEOFREEBIE_LISTEN_ADDRESS")) c.listen_address = *v;
  if (auto v = env("GEOFREEBIE_PORT")) c.port = parse_port(*v);
  if (auto v = env("GEOFREEBIE_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("GEOFREEBIE_GEOFENCE_FILE")) c.geofence_file = *v;
  if (auto v = env("GEOFREEBIE_LOCALIZATION_DIR")) c.localization_dir = *v;
  if (auto v = env("GEOFREEBIE_INSTRUMENTS_FILE")) c.instruments_file = *v;
  if (auto v = env("GEOFREEBIE_IDP_MODE")) c.idp_mode = *v;
  if (auto v = env("GEOFREEBIE_IDP_SECRET")) c.idp_secret = *v;
  if (auto v = env("GEOFREEBIE_ADMIN_TOKEN_FILE")) c.admin_token_file = *v;
  if (auto v = env("GEOFREEBIE_PASSWORD_HASH_COST")) c.password_hash_cost = crypto::parse_hash_cost(*v);
  if (auto v = env("GEOFREEBIE_OUTBOX_FILE")) c.outbox_file = *v;
  if (auto v = env("GEOFREEBIE_STATIC_DIR")) c.static_dir = fs::path(*v);
  return c;
}

std::string ensure_admin_token(const fs::path& file) {
  if (fs::exists(file)) {
    std::ifstream in(file);
    std::string token;
    std::getline(in, token);
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back()))) token.pop_back();
    if (token.size() < 16) throw Error(ErrorCode::ParseError, "admin token in " + file.string() + " is too short");
    return token;
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const std::string token = crypto::random_token();
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Internal, "cannot write admin token file " + file.string());
    out << token << '\n';
  }
  ::chmod(tmp.c_str(), 0600);
  fs::rename(tmp, file);
  return token;
}

ServerApp::ServerApp(ServerConfig config, Clock clock) : config_(std::move(config)) {
  ServiceConfig sc;
  sc.geofence = config_.geofence_file.empty() ? geo::muenster_sample() : geo::load_geofence(config_.geofence_file);
  sc.hash_cost = config_.password_hash_cost;
  auto catalog = l10n::Catalog::load(config_.localization_dir);
  auto instruments = study::load_instruments(config_.instruments_file);
  const std::string admin_token = ensure_admin_token(config_.admin_token_file);

  store_ = std::make_unique<store::Store>(config_.data_dir, store::Options{config_.fsync});
  identity_ = std::make_unique<StubIdentityProvider>(config_.idp_secret, config_.idp_mode);
  service_ = std::make_unique<Service>(*store_, std::move(catalog), std::move(instruments), sc, *identity_,
                                       std::move(clock), admin_token);
  service_->reconcile_star_counts();
  outbox_ = std::make_unique<FileOutbox>(config_.outbox_file);
  http_ = std::make_unique<httplib::Server>();
  http_->new_task_queue = [] { return new httplib::ThreadPool(8); };
  api_options_.static_dir = config_.static_dir;
  http::install_routes(*http_, *service_, api_options_);
  worker_ = std::thread([this] { notification_loop(); });
}

ServerApp::~ServerApp() {
  stop();
  if (worker_.joinable()) worker_.join();
}

int ServerApp::bind() {
  int port = config_.port;
  if (port == 0) {
    port = http_->bind_to_any_port(config_.listen_address);
  } else if (!http_->bind_to_port(config_.listen_address, port)) {
    port = -1;
  }
  if (port < 0)
    throw Error(ErrorCode::Internal, "cannot listen on " + config_.listen_address + ":" + std::to_string(config_.port));
  return port;
}

void ServerApp::run() { http_->listen_after_bind(); }

void ServerApp::stop() {
  {
    std::lock_guard lock(worker_mu_);
    stopping_ = true;
  }
  worker_cv_.notify_all();
  if (http_) http_->stop();
}

void ServerApp::notification_loop() {
  std::unique_lock lock(worker_mu_);
  while (!stopping_) {
    lock.unlock();
    try {
      service_->dispatch_notifications(*outbox_);
    } catch (const std::exception&) {
      // Retried on the next tick.
    }
    lock.lock();
    worker_cv_.wait_for(lock, std::chrono::milliseconds(config_.notification_interval_ms),
                        [this] { return stopping_; });
  }
  lock.unlock();
  try {
    service_->dispatch_notifications(*outbox_);
  } catch (const std::exception&) {
  }
}

}  // namespace geofreebie
