#include "geofreebie/http_api.hpp"

#include "geofreebie/json_util.hpp"

#include <httplib.h>

#include <charconv>

namespace geofreebie::http {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_header("Cache-Control", "no-store");
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const Error& e) { send_json(res, http_status(e.code()), e.to_json()); }

template <class F>
void guarded(httplib::Response& res, F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e);
  } catch (const json::exception& e) {
    send_error(res, Error(ErrorCode::ValidationFailed, std::string("malformed request: ") + e.what()));
  } catch (const std::exception& e) {
    send_error(res, Error(ErrorCode::Internal, e.what()));
  }
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() > prefix.size() && std::string_view(h).substr(0, prefix.size()) == prefix)
    return h.substr(prefix.size());
  return {};
}

std::optional<std::string> header(const httplib::Request& req, const char* name) {
  if (!req.has_header(name)) return std::nullopt;
  return req.get_header_value(name);
}

Principal operator_or_session(Service& svc, const httplib::Request& req) {
  const auto b = bearer(req);
  return svc.principal(b.empty() ? std::nullopt : std::optional(b), header(req, "X-Admin-Token"));
}

json body_json(const httplib::Request& req, const ApiOptions& opt) {
  if (req.body.empty()) return json::object();
  if (req.body.size() > opt.max_json_bytes) throw Error(ErrorCode::PayloadTooLarge, "request body too large");
  const auto ct = req.get_header_value("Content-Type");
  if (!ct.empty() && ct.find("json") == std::string::npos)
    throw Error(ErrorCode::UnsupportedMediaType, "expected application/json");
  try {
    return json::parse(req.body);
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::ParseError, "request body is not valid JSON");
  }
}

std::optional<double> query_double(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const auto s = req.get_param_value(name);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(ErrorCode::InvalidPosition, std::string("query parameter ") + name + " is not a number");
  return v;
}

std::optional<Timestamp> query_time(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  auto t = parse_timestamp(req.get_param_value(name));
  if (!t) throw Error(ErrorCode::BadWindow, std::string("query parameter ") + name + " is not an ISO-8601 UTC time");
  return t;
}

}  // namespace

void install_routes(httplib::Server& srv, Service& svc, const ApiOptions& opt) {
  srv.set_payload_max_length(svc.config().max_blob_bytes + 1024 * 1024);

  // Authentication -------------------------------------------------------
  srv.Post("/v1/users", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.signup(body_json(req, opt))); });
  });
  srv.Post("/v1/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.login(body_json(req, opt))); });
  });
  srv.Delete("/v1/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      svc.logout(bearer(req));
      send_json(res, 200, {{"logged_out", true}});
    });
  });

  // Users ------------------------------------------------------------------
  srv.Get("/v1/users/me", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.get_me(bearer(req))); });
  });
  srv.Patch("/v1/users/me", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.update_settings(bearer(req), body_json(req, opt))); });
  });
  srv.Patch("/v1/users/me/location", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.update_location(bearer(req), body_json(req, opt))); });
  });
  srv.Post(R"(/v1/users/([^/]+)/block)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.block(bearer(req), req.matches[1])); });
  });

  // Offers -----------------------------------------------------------------
  srv.Get("/v1/offers", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      Service::ListQuery q;
      q.lat = query_double(req, "lat");
      q.lon = query_double(req, "lon");
      if (req.has_param("view")) q.view = req.get_param_value("view");
      if (q.view != "list" && q.view != "map")
        throw Error(ErrorCode::ValidationFailed, "view must be list or map", {{"field", "view"}});
      q.refresh = req.has_param("refresh") && req.get_param_value("refresh") != "0" &&
                  req.get_param_value("refresh") != "false";
      send_json(res, 200, svc.list_offers(bearer(req), q));
    });
  });
  srv.Post("/v1/offers", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.create_offer(bearer(req), body_json(req, opt))); });
  });
  srv.Post(R"(/v1/offers/([^/]+)/complete)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200,
                svc.complete_offer(bearer(req), req.matches[1], body_json(req, opt), header(req, "Idempotency-Key")));
    });
  });
  srv.Post(R"(/v1/offers/([^/]+)/withdraw)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.withdraw_offer(bearer(req), req.matches[1])); });
  });
  srv.Post(R"(/v1/offers/([^/]+)/report)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.report_offer(bearer(req), req.matches[1], body_json(req, opt))); });
  });

  // Blobs ------------------------------------------------------------------
  srv.Post("/v1/blobs", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto ct = req.get_header_value("Content-Type");
      if (auto semi = ct.find(';'); semi != std::string::npos) ct.resize(semi);
      const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
      const auto ref = svc.put_blob(bearer(req), ct, std::span(data, req.body.size()));
      send_json(res, 201, {{"blob_ref", ref}});
    });
  });
  srv.Get(R"(/v1/blobs/([0-9a-f]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto bytes = svc.get_blob(bearer(req), req.matches[1]);
      if (!bytes) throw Error(ErrorCode::NotFound, "no such blob");
      res.status = 200;
      res.set_header("Cache-Control", "private, max-age=86400");
      res.set_content(std::string(bytes->begin(), bytes->end()), "application/octet-stream");
    });
  });

  // Reviews ----------------------------------------------------------------
  srv.Get("/v1/reviews/pending", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.pending_reviews(bearer(req))); });
  });
  srv.Post("/v1/reviews", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.submit_review(bearer(req), body_json(req, opt))); });
  });
  srv.Post(R"(/v1/reviews/([^/]+)/dismiss)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.dismiss_review(bearer(req), req.matches[1])); });
  });

  // Study ------------------------------------------------------------------
  srv.Get("/v1/study/gate", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.study_gate(bearer(req))); });
  });
  srv.Get("/v1/study/instruments", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.instrument_definitions()); });
  });
  srv.Post("/v1/study/consent", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.record_consent(bearer(req), body_json(req, opt))); });
  });
  srv.Post("/v1/study/demographics", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.submit_demographics(bearer(req), body_json(req, opt))); });
  });
  srv.Post("/v1/study/lsns", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.submit_lsns(bearer(req), body_json(req, opt))); });
  });
  srv.Post("/v1/study/sus", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.submit_sus(bearer(req), body_json(req, opt))); });
  });
  srv.Post("/v1/study/usefulness", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, svc.submit_usefulness(bearer(req), body_json(req, opt))); });
  });

  // Public -----------------------------------------------------------------
  srv.Get(R"(/v1/localizations/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.localization(req.matches[1])); });
  });
  srv.Get("/v1/version-stamp", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.version_stamp()); });
  });

  // Moderation -------------------------------------------------------------
  srv.Get("/v1/moderation/pending", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.list_pending_users(operator_or_session(svc, req))); });
  });
  srv.Post(R"(/v1/moderation/users/([^/]+)/approve)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.approve_user(operator_or_session(svc, req), req.matches[1])); });
  });
  srv.Post(R"(/v1/moderation/users/([^/]+)/reject)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, svc.reject_user(operator_or_session(svc, req), req.matches[1], body_json(req, opt)));
    });
  });
  srv.Post(R"(/v1/moderation/offers/([^/]+)/remove)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.remove_offer(operator_or_session(svc, req), req.matches[1])); });
  });
  srv.Get("/v1/moderation/reports", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.list_reports(operator_or_session(svc, req))); });
  });

  // Operator ---------------------------------------------------------------
  srv.Put(R"(/v1/admin/users/([^/]+)/moderator)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const bool enabled = jsonu::require<bool>(body_json(req, opt), "enabled");
      send_json(res, 200, svc.set_moderator(operator_or_session(svc, req), req.matches[1], enabled));
    });
  });
  srv.Get("/v1/admin/trial", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.trial_status(operator_or_session(svc, req))); });
  });
  srv.Post("/v1/admin/trial/open", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_json(req, opt);
      const int days = jsonu::optional_field<int>(body, "days").value_or(7);
      if (days <= 0 || days > 366)
        throw Error(ErrorCode::ValidationFailed, "days must be within 1..366", {{"field", "days"}});
      send_json(res, 200, svc.trial_open(operator_or_session(svc, req), std::chrono::hours{24 * days}));
    });
  });
  srv.Post("/v1/admin/trial/close", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.trial_close(operator_or_session(svc, req))); });
  });
  srv.Get("/v1/admin/stats", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      telemetry::Window w;
      if (auto s = query_time(req, "start")) w.start = *s;
      if (auto e = query_time(req, "end")) w.end = *e;
      send_json(res, 200, svc.stats(operator_or_session(svc, req), w));
    });
  });
  srv.Post("/v1/admin/export", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto key = jsonu::require<std::string>(body_json(req, opt), "key");
      if (key.size() < 16)
        throw Error(ErrorCode::ValidationFailed, "pseudonym key must have at least 16 characters", {{"field", "key"}});
      send_json(res, 200, svc.export_archive(operator_or_session(svc, req), key));
    });
  });

  if (opt.static_dir) srv.set_mount_point("/", opt.static_dir->string());

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) send_error(res, Error(ErrorCode::NotFound, "no such route"));
    if (res.status == 413) send_error(res, Error(ErrorCode::PayloadTooLarge, "request body too large"));
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, Error(ErrorCode::Internal, e.what()));
    } catch (...) {
      send_error(res, Error(ErrorCode::Internal, "unknown failure"));
    }
  });
}

}  // namespace geofreebie::http
