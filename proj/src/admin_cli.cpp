#include "geofreebie/admin_cli.hpp"

#include "geofreebie/analytics.hpp"
#include "geofreebie/error.hpp"
#include "geofreebie/localization.hpp"
#include "geofreebie/telemetry.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace geofreebie::admin {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, std::string fallback) {
  if (const char* v = std::getenv(name)) return v;
  return fallback;
}

std::string read_secret(const fs::path& file, const char* what) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::NotFound, std::string("cannot read ") + what + " " + file.string());
  std::string s;
  std::getline(in, s);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  if (s.size() < 16) throw Error(ErrorCode::ValidationFailed, std::string(what) + " is shorter than 16 characters");
  return s;
}

class ApiClient {
 public:
  ApiClient(const std::string& server, fs::path token_file) : server_(server), token_file_(std::move(token_file)) {}

  json get(const std::string& path) { return call("GET", path, nullptr); }
  json post(const std::string& path, const json& body = json::object()) { return call("POST", path, body); }
  json put(const std::string& path, const json& body) { return call("PUT", path, body); }

 private:
  json call(const std::string& method, const std::string& path, const json& body) {
    httplib::Client cli(server_);
    cli.set_connection_timeout(5);
    cli.set_read_timeout(60);
    const httplib::Headers headers{{"X-Admin-Token", read_secret(token_file_, "admin token file")}};
    httplib::Result res = method == "GET"   ? cli.Get(path, headers)
                          : method == "PUT" ? cli.Put(path, headers, body.dump(), "application/json")
                                            : cli.Post(path, headers, body.dump(), "application/json");
    if (!res)
      throw Error(ErrorCode::Internal, "server " + server_ + " unreachable: " + httplib::to_string(res.error()));
    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::parse_error&) {
      throw Error(ErrorCode::Internal, "server returned HTTP " + std::to_string(res->status) + " without JSON");
    }
    if (res->status >= 400) {
      const auto code = parsed.value("code", std::string("Internal"));
      auto details = parsed.contains("details") ? parsed.at("details") : json(nullptr);
      throw RemoteError(code, parsed.value("message", std::string{}), details);
    }
    return parsed;
  }

 public:
  struct RemoteError : std::runtime_error {
    RemoteError(std::string c, const std::string& m, json d)
        : std::runtime_error(m), code(std::move(c)), details(std::move(d)) {}
    std::string code;
    json details;
  };

 private:
  std::string server_;
  fs::path token_file_;
};

std::string tenths_text(double v) { return telemetry::format_tenths(std::llround(v * 10.0)); }

std::string join_counts(const json& obj) {
  std::string out;
  for (const auto& [k, v] : obj.items()) {
    if (!out.empty()) out += ", ";
    out += k + " " + v.dump();
  }
  return out.empty() ? "none" : out;
}

void print_pending(std::ostream& out, const json& r) {
  if (r.at("pending").empty()) {
    out << "no pending users\n";
    return;
  }
  out << std::left << std::setw(16) << "USER" << std::setw(24) << "NAME" << std::setw(8) << "LOCALE" << std::setw(26)
      << "SIGNED UP"
      << "NOTES\n";
  for (const auto& u : r.at("pending")) {
    std::string notes;
    for (const auto& a : u.at("annotations")) {
      if (!notes.empty()) notes += "; ";
      notes += a.at("signal").get<std::string>() + " with " + a.at("user_id").get<std::string>();
    }
    out << std::left << std::setw(16) << u.at("user_id").get<std::string>() << std::setw(24)
        << u.at("display_name").get<std::string>() << std::setw(8) << u.at("locale").get<std::string>()
        << std::setw(26) << u.at("created_at").get<std::string>() << notes << "\n";
  }
}

void print_trial(std::ostream& out, const json& t) {
  out << "trial " << t.at("state").get<std::string>();
  if (!t.at("opens_at").is_null()) out << ", opened " << t.at("opens_at").get<std::string>();
  if (!t.at("closes_at").is_null()) out << ", closes " << t.at("closes_at").get<std::string>();
  const auto& c = t.at("counts");
  out << "\nusers " << c.at("users") << " (" << c.at("approved") << " approved, " << c.at("rejected")
      << " rejected, " << c.at("pending") << " pending), offers " << c.at("offers") << " (" << c.at("open_offers")
      << " open)\n";
}

void print_stats(std::ostream& out, const json& s) {
  const auto& u = s.at("users");
  out << "users: " << u.at("total") << " signed up, " << u.at("approved") << " approved, " << u.at("rejected")
      << " rejected, " << u.at("pending") << " pending\n";
  out << "rejections: " << join_counts(u.at("rejections_by_reason")) << "\n";
  out << "approved by group: " << join_counts(u.at("approved_by_group")) << "\n";
  const auto& o = s.at("offers");
  out << "offers: " << o.at("created") << " created, " << o.at("completed") << " completed, " << o.at("open")
      << " open, " << o.at("withdrawn") << " withdrawn, " << o.at("removed") << " removed, " << o.at("posters")
      << " posters\n";
  const auto& r = s.at("reviews");
  out << "reviews: " << r.at("submitted") << " submitted, " << r.at("pending_tasks") << " pending, "
      << r.at("dismissed") << " dismissed\n";
  const auto& p = s.at("posting_rate");
  if (p.is_null())
    out << "posting rate: no participants\n";
  else
    out << "posting rate: " << p.at("rendered").get<std::string>() << " (" << p.at("posts") << " posts, "
        << p.at("users") << " participants)\n";
  if (s.at("lsns").empty()) {
    out << "LSNS-6: no responses\n";
  } else {
    out << "LSNS-6 means:";
    for (const auto& [g, v] : s.at("lsns").items())
      out << " " << g << " " << tenths_text(v.at("mean").get<double>()) << " (n=" << v.at("n") << ")";
    out << "\n";
  }
  const auto& sus = s.at("sus");
  if (sus.is_null())
    out << "SUS: no responses\n";
  else
    out << "SUS mean " << sus.at("mean_text").get<std::string>() << " (" << sus.at("adjective").get<std::string>()
        << ", " << sus.at("letter").get<std::string>() << "), n=" << sus.at("n") << "\n";
  for (const auto& [g, dims] : s.at("usefulness").items()) {
    out << "usefulness " << g << ":";
    for (const auto& [d, v] : dims.items())
      out << " " << d << "=" << v.at("median").get<double>() << " (" << v.at("agree") << "/" << v.at("neutral")
          << "/" << v.at("disagree") << ")";
    out << "\n";
  }
  const auto& t = s.at("tally");
  out << "events: " << t.at("total") << " total; by action: " << join_counts(t.at("by_action")) << "\n";
}

int locale_check(const fs::path& dir, bool as_json, std::ostream& out) {
  const auto reference = l10n::load_bundle(dir / "en.json");
  json report = json::array();
  bool ok = true;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    json item{{"file", f.filename().string()}};
    try {
      const auto b = l10n::load_bundle(f);
      const auto parity = l10n::check_parity(b, reference);
      const bool stem_ok = f.stem().string() == b.locale;
      item["locale"] = b.locale;
      item["keys"] = b.strings.size();
      item["missing"] = parity.missing;
      item["extra"] = parity.extra;
      item["ok"] = parity.ok() && stem_ok;
      if (!stem_ok) item["error"] = "file name does not match locale " + b.locale;
    } catch (const Error& e) {
      item["ok"] = false;
      item["error"] = e.what();
    }
    ok = ok && item["ok"].get<bool>();
    report.push_back(item);
  }
  if (as_json) {
    out << json{{"ok", ok}, {"reference_keys", reference.strings.size()}, {"bundles", report}}.dump() << "\n";
  } else {
    for (const auto& item : report) {
      if (item["ok"].get<bool>()) {
        out << "ok    " << item["locale"].get<std::string>() << " (" << item["keys"] << " keys)\n";
        continue;
      }
      out << "FAIL  " << item["file"].get<std::string>();
      if (item.contains("error")) out << ": " << item["error"].get<std::string>();
      if (item.contains("missing") && !item["missing"].empty()) out << " missing " << item["missing"].dump();
      if (item.contains("extra") && !item["extra"].empty()) out << " extra " << item["extra"].dump();
      out << "\n";
    }
  }
  return ok ? kExitOk : kExitDomainError;
}

}  // namespace

int run_admin(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geofreebie operator tool", "geofreebie-admin"};
  app.require_subcommand(1);
  std::string server = env_or("GEOFREEBIE_SERVER", "http://127.0.0.1:8080");
  std::string token_file = env_or("GEOFREEBIE_ADMIN_TOKEN_FILE", "var/admin.token");
  bool as_json = false;
  app.add_option("--server", server, "API base URL");
  app.add_option("--token-file", token_file, "operator token file");
  app.add_flag("--json", as_json, "machine-readable output");

  std::function<int()> action;
  auto api = [&] { return ApiClient(server, token_file); };
  auto emit = [&](const json& j, const std::function<void()>& human) {
    if (as_json)
      out << j.dump() << "\n";
    else
      human();
  };

  // moderate ---------------------------------------------------------------
  auto* moderate = app.add_subcommand("moderate", "approve or reject pending users");
  moderate->require_subcommand(1);
  moderate->add_subcommand("list", "list pending users")->callback([&] {
    action = [&] {
      const auto r = api().get("/v1/moderation/pending");
      emit(r, [&] { print_pending(out, r); });
      return kExitOk;
    };
  });
  std::string approve_id;
  auto* approve = moderate->add_subcommand("approve", "approve a pending user");
  approve->add_option("user_id", approve_id)->required();
  approve->callback([&] {
    action = [&] {
      const auto r = api().post("/v1/moderation/users/" + approve_id + "/approve");
      emit(r, [&] { out << "approved " << approve_id << "\n"; });
      return kExitOk;
    };
  });
  std::string reject_id, reject_reason;
  auto* reject = moderate->add_subcommand("reject", "reject a pending user");
  reject->add_option("user_id", reject_id)->required();
  reject->add_option("--reason", reject_reason, "outside-region, insufficient-info, duplicate-identity or other")
      ->required();
  reject->callback([&] {
    action = [&] {
      const auto r = api().post("/v1/moderation/users/" + reject_id + "/reject", {{"reason", reject_reason}});
      emit(r, [&] {
        out << "rejected " << reject_id << " (" << r.at("approval").at("reason").get<std::string>() << ")\n";
      });
      return kExitOk;
    };
  });
  moderate->add_subcommand("reports", "list reported offers")->callback([&] {
    action = [&] {
      const auto r = api().get("/v1/moderation/reports");
      emit(r, [&] {
        if (r.at("reports").empty()) out << "no reports\n";
        for (const auto& x : r.at("reports"))
          out << x.at("created_at").get<std::string>() << "  " << x.at("offer_id").get<std::string>() << "  "
              << x.at("reporter_id").get<std::string>() << "  " << x.at("reason").get<std::string>() << "\n";
      });
      return kExitOk;
    };
  });
  std::string remove_id;
  auto* remove = moderate->add_subcommand("remove", "remove an offer");
  remove->add_option("offer_id", remove_id)->required();
  remove->callback([&] {
    action = [&] {
      const auto r = api().post("/v1/moderation/offers/" + remove_id + "/remove");
      emit(r, [&] { out << "removed " << remove_id << "\n"; });
      return kExitOk;
    };
  });

  // trial ------------------------------------------------------------------
  auto* trial = app.add_subcommand("trial", "open, close or inspect the trial window");
  trial->require_subcommand(1);
  int days = 7;
  auto* trial_open = trial->add_subcommand("open", "open the trial");
  trial_open->add_option("--days", days, "trial length in days")->check(CLI::Range(1, 366));
  trial_open->callback([&] {
    action = [&] {
      const auto r = api().post("/v1/admin/trial/open", {{"days", days}});
      emit(r, [&] { print_trial(out, r); });
      return kExitOk;
    };
  });
  trial->add_subcommand("close", "close the trial")->callback([&] {
    action = [&] {
      const auto r = api().post("/v1/admin/trial/close");
      emit(r, [&] { print_trial(out, r); });
      return kExitOk;
    };
  });
  trial->add_subcommand("status", "show the trial window and counts")->callback([&] {
    action = [&] {
      const auto r = api().get("/v1/admin/trial");
      emit(r, [&] { print_trial(out, r); });
      return kExitOk;
    };
  });

  // locale -----------------------------------------------------------------
  auto* locale = app.add_subcommand("locale", "manage string bundles");
  locale->require_subcommand(1);
  std::string locale_dir = env_or("GEOFREEBIE_LOCALIZATION_DIR", "data/localizations");
  std::string bundle_file;
  auto* locale_add = locale->add_subcommand("add", "install a bundle after checking key parity");
  locale_add->add_option("file", bundle_file)->required();
  locale_add->add_option("--dir", locale_dir, "bundle directory");
  locale_add->callback([&] {
    action = [&] {
      const auto bundle = l10n::load_bundle(bundle_file);
      const auto reference = l10n::load_bundle(fs::path(locale_dir) / "en.json");
      l10n::require_parity(bundle, reference);
      const fs::path target = fs::path(locale_dir) / (bundle.locale + ".json");
      if (fs::absolute(target) != fs::absolute(bundle_file))
        fs::copy_file(bundle_file, target, fs::copy_options::overwrite_existing);
      const json r{{"locale", bundle.locale}, {"keys", bundle.strings.size()}, {"path", target.string()}};
      emit(r, [&] { out << "added " << bundle.locale << " (" << bundle.strings.size() << " keys)\n"; });
      return kExitOk;
    };
  });
  auto* locale_check_cmd = locale->add_subcommand("check", "check key parity of every bundle");
  locale_check_cmd->add_option("--dir", locale_dir, "bundle directory");
  locale_check_cmd->callback([&] { action = [&] { return locale_check(locale_dir, as_json, out); }; });

  // export / stats -----------------------------------------------------------
  std::string export_out, key_file, mapping_out;
  auto* exp = app.add_subcommand("export", "write the pseudonymized analysis archive");
  exp->add_option("--out", export_out, "archive directory")->required();
  exp->add_option("--key-file", key_file, "pseudonymization key file")->required();
  exp->add_option("--mapping-out", mapping_out, "where to write the pseudonym mapping table");
  exp->callback([&] {
    action = [&] {
      const auto key = read_secret(key_file, "key file");
      const auto r = api().post("/v1/admin/export", {{"key", key}});
      analytics::ExportArchive archive;
      archive.files = r.at("files").get<std::map<std::string, std::string>>();
      archive.pseudonym_map = r.at("pseudonym_map").get<std::string>();
      fs::path outdir = fs::path(export_out).lexically_normal();
      if (outdir.filename().empty()) outdir = outdir.parent_path();
      const fs::path mapping = mapping_out.empty() ? fs::path(outdir.string() + ".pseudonyms.jsonl") : fs::path(mapping_out);
      analytics::write_archive(archive, outdir, mapping);
      const json manifest = json::parse(archive.files.at("manifest.json"));
      const json summary{{"out", outdir.string()}, {"mapping", mapping.string()}, {"counts", manifest.at("counts")}};
      emit(summary, [&] {
        out << "exported to " << outdir.string() << " (" << join_counts(manifest.at("counts")) << "); mapping in "
            << mapping.string() << "\n";
      });
      return kExitOk;
    };
  });
  std::vector<std::string> window;
  auto* stats = app.add_subcommand("stats", "print study statistics");
  stats->add_option("--window", window, "start,end as ISO-8601 UTC times")->delimiter(',')->expected(2);
  stats->callback([&] {
    action = [&] {
      std::string path = "/v1/admin/stats";
      if (!window.empty()) {
        for (const auto& w : window)
          if (!parse_timestamp(w)) throw Error(ErrorCode::BadWindow, "window bound " + w + " is not an ISO-8601 UTC time");
        path += "?start=" + httplib::detail::encode_query_param(window[0]) +
                "&end=" + httplib::detail::encode_query_param(window[1]);
      }
      const auto r = api().get(path);
      emit(r, [&] { print_stats(out, r); });
      return kExitOk;
    };
  });

  // user ---------------------------------------------------------------------
  auto* user = app.add_subcommand("user", "grant or revoke the moderator role");
  user->require_subcommand(1);
  std::string promote_id, demote_id;
  auto* promote = user->add_subcommand("promote", "make a user a moderator");
  promote->add_option("user_id", promote_id)->required();
  promote->callback([&] {
    action = [&] {
      const auto r = api().put("/v1/admin/users/" + promote_id + "/moderator", {{"enabled", true}});
      emit(r, [&] { out << "promoted " << promote_id << "\n"; });
      return kExitOk;
    };
  });
  auto* demote = user->add_subcommand("demote", "revoke the moderator role");
  demote->add_option("user_id", demote_id)->required();
  demote->callback([&] {
    action = [&] {
      const auto r = api().put("/v1/admin/users/" + demote_id + "/moderator", {{"enabled", false}});
      emit(r, [&] { out << "demoted " << demote_id << "\n"; });
      return kExitOk;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  if (!action) {
    err << app.help();
    return kExitUsage;
  }

  auto fail = [&](const std::string& code, const std::string& message, const json& details) {
    json e{{"code", code}, {"message", message}};
    if (!details.is_null()) e["details"] = details;
    err << e.dump() << "\n";
    return kExitDomainError;
  };
  try {
    return action();
  } catch (const ApiClient::RemoteError& e) {
    return fail(e.code, e.what(), e.details);
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.what(), e.details());
  } catch (const std::exception& e) {
    return fail("Internal", e.what(), nullptr);
  }
}

}  // namespace geofreebie::admin
