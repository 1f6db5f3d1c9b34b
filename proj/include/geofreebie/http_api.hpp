#pragma once

#include "geofreebie/service.hpp"

#include <filesystem>
#include <optional>

namespace httplib {
class Server;
}

namespace geofreebie::http {

struct ApiOptions {
  std::optional<std::filesystem::path> static_dir;
  std::size_t max_json_bytes = 1024 * 1024;
};

// Registers every /v1 route on `server`. The handlers keep references to
// `service` and `options`.
void install_routes(httplib::Server& server, Service& service, const ApiOptions& options = {});

}  // namespace geofreebie::http
