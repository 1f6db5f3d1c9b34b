#include "geofreebie/analytics.hpp"

#include "geofreebie/crypto.hpp"
#include "geofreebie/json_util.hpp"
#include "geofreebie/kinds.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace geofreebie::analytics {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

void to_json(json& j, const SurveyRecord& s) {
  j = json{{"user_id", s.user_id},
           {"instrument", s.instrument},
           {"answers", s.answers},
           {"score", jsonu::opt(s.score)},
           {"submitted_at", jsonu::ts(s.submitted_at)}};
}

void from_json(const json& j, SurveyRecord& s) {
  s.user_id = j.at("user_id").get<std::string>();
  s.instrument = j.at("instrument").get<std::string>();
  s.answers = j.at("answers");
  s.score = jsonu::get_opt<double>(j, "score");
  s.submitted_at = jsonu::ts(j.at("submitted_at"));
}

std::string survey_record_id(const UserId& user, const std::string& instrument) {
  return user + "." + instrument;
}

std::string pseudonymize(const std::string& id, const std::string& key) {
  return "p" + crypto::blake2b_hex(id, 16, key).substr(0, 16);
}

namespace {

template <class T>
std::vector<T> load_all(const store::Store& store, const char* kind) {
  std::vector<T> out;
  for (const auto& rec : store.scan(kind)) out.push_back(json::parse(rec.payload).get<T>());
  return out;
}

class Pseudonyms {
 public:
  explicit Pseudonyms(std::string key) : key_(std::move(key)) {}

  ordered_json operator()(const std::optional<std::string>& id) {
    if (!id) return nullptr;
    return (*this)(*id);
  }
  ordered_json operator()(const std::string& id) {
    auto [it, inserted] = table_.try_emplace(id);
    if (inserted) it->second = pseudonymize(id, key_);
    return it->second;
  }

  std::string table() const {
    std::string out;
    for (const auto& [id, p] : table_) out += ordered_json{{"id", id}, {"pseudonym", p}}.dump() + '\n';
    return out;
  }

 private:
  std::string key_;
  std::map<std::string, std::string> table_;
};

ordered_json position_json(const std::optional<GeoPosition>& p) {
  if (!p) return nullptr;
  return ordered_json{{"lat", p->lat}, {"lon", p->lon}, {"recorded_at", format_timestamp(p->recorded_at)}};
}

ordered_json opt_ts(const std::optional<Timestamp>& t) {
  if (!t) return nullptr;
  return format_timestamp(*t);
}

std::string dump_line(const ordered_json& j) {
  // ensure_ascii=false keeps UTF-8 as is; control characters are \u-escaped.
  return j.dump(-1, ' ', false, json::error_handler_t::strict) + '\n';
}

}  // namespace

ExportArchive export_dataset(const store::Store& store, const std::string& key,
                             const study::InstrumentSet& instruments) {
  if (key.empty()) throw Error(ErrorCode::ValidationFailed, "export requires a pseudonymization key");
  Pseudonyms pseudo(key);
  std::map<std::string, std::string> streams;
  std::map<std::string, long long> counts;
  for (const char* s : kStreams) {
    streams[s];
    counts[s] = 0;
  }
  std::optional<Timestamp> as_of;
  auto seen = [&](Timestamp t) {
    if (!as_of || t > *as_of) as_of = t;
  };

  for (const auto& rec : store.scan(kinds::kUser)) {
    seen(rec.updated_at);
    const auto u = json::parse(rec.payload).get<UserProfile>();
    ordered_json line{
        {"user", pseudo(u.user_id)},
        {"group", std::string(to_string(u.user_group))},
        {"approval_status", std::string(to_string(u.approval.status))},
        {"rejection_reason",
         u.approval.reason ? ordered_json(std::string(to_string(*u.approval.reason))) : ordered_json(nullptr)},
        {"decided_at", opt_ts(u.approval.decided_at)},
        {"completed_deliveries", u.completed_deliveries},
        {"locale", u.locale},
        {"study_consent", u.consent.study_consent},
        {"location_logging_consent", u.consent.location_logging_consent},
        {"demographics_done", u.consent.demographics_done},
        {"lsns_done", u.consent.lsns_done},
        {"created_at", format_timestamp(u.created_at)},
    };
    streams["users"] += dump_line(line);
    ++counts["users"];
  }

  for (const auto& rec : store.scan(kinds::kOffer)) {
    seen(rec.updated_at);
    const auto o = json::parse(rec.payload).get<Offer>();
    ordered_json line{
        {"offer", pseudo(o.offer_id)},
        {"owner", pseudo(o.owner_id)},
        {"title", o.title},
        {"has_photo", o.photo_ref.has_value()},
        {"status", std::string(to_string(o.status))},
        {"created_at", format_timestamp(o.created_at)},
        {"completed_at", opt_ts(o.completed_at)},
        {"collector", pseudo(o.collector_id)},
        {"removed_by", pseudo(o.removed_by)},
    };
    streams["offers"] += dump_line(line);
    ++counts["offers"];
  }

  for (const auto& rec : store.scan(kinds::kReview)) {
    seen(rec.updated_at);
    const auto r = json::parse(rec.payload).get<study::HandOverReview>();
    ordered_json line{
        {"offer", pseudo(r.offer_id)},
        {"reviewer", pseudo(r.reviewer_id)},
        {"counterparty", pseudo(r.counterparty_id)},
        {"place", r.place},
        {"place_category",
         r.place_category ? ordered_json(std::string(to_string(*r.place_category))) : ordered_json(nullptr)},
        {"contact_channel", std::string(to_string(r.contact_channel))},
        {"satisfaction", r.satisfaction},
        {"likely_repeat", r.likely_repeat},
        {"submitted_at", format_timestamp(r.submitted_at)},
    };
    streams["reviews"] += dump_line(line);
    ++counts["reviews"];
  }

  for (const auto& rec : store.scan(kinds::kSurvey)) {
    seen(rec.updated_at);
    const auto s = json::parse(rec.payload).get<SurveyRecord>();
    ordered_json line{
        {"user", pseudo(s.user_id)},
        {"instrument", s.instrument},
        {"answers", ordered_json::parse(s.answers.dump())},
        {"score", s.score ? ordered_json(*s.score) : ordered_json(nullptr)},
        {"submitted_at", format_timestamp(s.submitted_at)},
    };
    streams["surveys"] += dump_line(line);
    ++counts["surveys"];
  }

  for (const auto& e : telemetry::read_events(store)) {
    seen(e.at);
    ordered_json line{
        {"seq", e.event_id},
        {"user", pseudo(e.user_id)},
        {"action", std::string(to_string(e.action))},
        {"entity", pseudo(e.entity_id)},
        {"at", format_timestamp(e.at)},
        {"position", position_json(e.position)},
    };
    streams["telemetry"] += dump_line(line);
    ++counts["telemetry"];
  }

  ordered_json count_json = ordered_json::object();
  for (const char* s : kStreams) count_json[s] = counts[s];
  ordered_json manifest{
      {"schema_version", kExportSchemaVersion},
      {"exported_at", opt_ts(as_of)},
      {"streams", ordered_json::array()},
      {"counts", count_json},
      {"pseudonymization", "blake2b-128 keyed, first 64 bits, prefix p"},
      {"lsns_isolation_cutoff", instruments.lsns_isolation_cutoff},
  };
  for (const char* s : kStreams) manifest["streams"].push_back(std::string(s) + ".jsonl");

  ExportArchive archive;
  archive.files["manifest.json"] = manifest.dump(2) + '\n';
  for (const char* s : kStreams) archive.files[std::string(s) + ".jsonl"] = streams[s];
  archive.pseudonym_map = pseudo.table();
  return archive;
}

void write_archive(const ExportArchive& archive, const fs::path& dir, const fs::path& mapping_file) {
  fs::create_directories(dir);
  for (const auto& [name, content] : archive.files) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Internal, "cannot write " + (dir / name).string());
    out << content;
  }
  if (!mapping_file.empty()) {
    if (mapping_file.has_parent_path()) fs::create_directories(mapping_file.parent_path());
    std::ofstream out(mapping_file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Internal, "cannot write " + mapping_file.string());
    out << archive.pseudonym_map;
  }
}

ImportedDataset import_dataset(const std::map<std::string, std::string>& files) {
  ImportedDataset data;
  auto manifest = files.find("manifest.json");
  if (manifest == files.end()) throw Error(ErrorCode::ParseError, "archive has no manifest.json");
  try {
    data.manifest = json::parse(manifest->second);
    if (data.manifest.at("schema_version").get<int>() != kExportSchemaVersion)
      throw Error(ErrorCode::ParseError, "unsupported export schema version");
    for (const char* s : kStreams) {
      auto it = files.find(std::string(s) + ".jsonl");
      if (it == files.end()) throw Error(ErrorCode::ParseError, std::string("archive lacks ") + s + ".jsonl");
      auto& lines = data.streams[s];
      std::istringstream in(it->second);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) lines.push_back(json::parse(line));
      if (static_cast<long long>(lines.size()) != data.manifest.at("counts").at(s).get<long long>())
        throw Error(ErrorCode::ParseError, std::string("record count mismatch in ") + s);
    }
    for (const auto& line : data.streams["telemetry"]) {
      telemetry::TelemetryEvent e;
      e.event_id = line.at("seq").get<std::uint64_t>();
      e.user_id = line.at("user").get<std::string>();
      auto action = telemetry::parse_action(line.at("action").get<std::string>());
      if (!action) throw Error(ErrorCode::ParseError, "unknown action in telemetry stream");
      e.action = *action;
      e.entity_id = jsonu::get_opt<std::string>(line, "entity");
      e.at = jsonu::ts(line.at("at"));
      e.position = jsonu::get_opt<GeoPosition>(line, "position");
      data.telemetry.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed archive: ") + e.what());
  }
  return data;
}

ImportedDataset import_dataset(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[entry.path().filename().string()] = ss.str();
  }
  return import_dataset(files);
}

// ---------------------------------------------------------------------------

namespace {

bool in_window(Timestamp t, const telemetry::Window& w) { return t >= w.start && t <= w.end; }

}  // namespace

json compute_stats(const store::Store& store, const telemetry::Window& window,
                   const study::InstrumentSet& instruments) {
  const auto users = load_all<UserProfile>(store, kinds::kUser);
  const auto offers = load_all<Offer>(store, kinds::kOffer);
  const auto reviews = load_all<study::HandOverReview>(store, kinds::kReview);
  const auto tasks = load_all<study::PendingReviewTask>(store, kinds::kReviewTask);
  const auto surveys = load_all<SurveyRecord>(store, kinds::kSurvey);
  const auto events = telemetry::read_events(store);
  const auto report = telemetry::tally(events, window);

  std::map<UserId, UserGroup> group_of;
  json user_stats{{"total", users.size()}, {"pending", 0}, {"approved", 0}, {"rejected", 0}};
  json rejections = json::object();
  json by_group = json::object();
  long long participants = 0;
  for (const auto& u : users) {
    group_of[u.user_id] = u.user_group;
    user_stats[std::string(to_string(u.approval.status))] =
        user_stats[std::string(to_string(u.approval.status))].get<long long>() + 1;
    if (u.approval.reason) {
      const std::string r(to_string(*u.approval.reason));
      rejections[r] = rejections.value(r, 0) + 1;
    }
    if (u.approval.status == ApprovalStatus::Approved) {
      const std::string g(to_string(u.user_group));
      by_group[g] = by_group.value(g, 0) + 1;
      if (!u.is_moderator()) ++participants;
    }
  }
  user_stats["rejections_by_reason"] = rejections;
  user_stats["approved_by_group"] = by_group;
  user_stats["participants"] = participants;

  json offer_stats{{"created", 0}, {"open", 0}, {"completed", 0}, {"withdrawn", 0}, {"removed", 0}};
  std::set<UserId> posters;
  long long created = 0;
  for (const auto& o : offers) {
    if (!in_window(o.created_at, window)) continue;
    ++created;
    posters.insert(o.owner_id);
    const std::string s(to_string(o.status));
    offer_stats[s] = offer_stats[s].get<long long>() + 1;
  }
  offer_stats["created"] = created;
  offer_stats["posters"] = posters.size();

  long long submitted = 0;
  for (const auto& r : reviews)
    if (in_window(r.submitted_at, window)) ++submitted;
  long long pending_tasks = 0, dismissed = 0;
  for (const auto& t : tasks) {
    if (t.state == study::TaskState::Pending) ++pending_tasks;
    if (t.state == study::TaskState::Dismissed) ++dismissed;
  }
  json review_stats{{"submitted", submitted}, {"pending_tasks", pending_tasks}, {"dismissed", dismissed}};

  json posting = nullptr;
  if (participants > 0) {
    const auto rate = telemetry::posting_rate(created, participants);
    posting = {{"posts", created},
               {"users", participants},
               {"posts_per_user", rate.posts_per_user},
               {"users_per_post", std::isinf(rate.users_per_post) ? json("inf") : json(rate.users_per_post)},
               {"rendered", rate.rendered}};
  }

  std::vector<telemetry::GroupedScore> lsns;
  std::map<UserGroup, std::pair<long long, long long>> sus_by_group;  // sum of 2*score, n
  long long sus_sum2 = 0, sus_n = 0;
  std::vector<study::GroupedUsefulness> usefulness;
  for (const auto& s : surveys) {
    if (!in_window(s.submitted_at, window)) continue;
    const UserGroup g = group_of.contains(s.user_id) ? group_of[s.user_id] : UserGroup::Unspecified;
    if (s.instrument == "lsns6" && s.score) {
      lsns.push_back({g, static_cast<int>(*s.score)});
    } else if (s.instrument == "sus" && s.score) {
      const auto twice = static_cast<long long>(std::llround(*s.score * 2.0));
      sus_sum2 += twice;
      ++sus_n;
      sus_by_group[g].first += twice;
      ++sus_by_group[g].second;
    } else if (s.instrument == "usefulness") {
      usefulness.push_back({g, study::UsefulnessResponse::from_json(s.answers)});
    }
  }

  json lsns_json = json::object();
  for (const auto& [g, mean] : telemetry::lsns_group_stats(lsns))
    lsns_json[std::string(to_string(g))] = {{"mean", mean.value()}, {"n", mean.n}};

  json sus_json = nullptr;
  if (sus_n > 0) {
    const long long tenths = telemetry::round_half_up_tenths(sus_sum2, 2 * sus_n);
    const auto grade = study::sus_grade(tenths / 10.0, instruments.grades);
    json groups = json::object();
    for (const auto& [g, sn] : sus_by_group)
      groups[std::string(to_string(g))] = {
          {"mean", telemetry::round_half_up_tenths(sn.first, 2 * sn.second) / 10.0}, {"n", sn.second}};
    sus_json = {{"n", sus_n},
                {"mean", tenths / 10.0},
                {"mean_text", telemetry::format_tenths(tenths)},
                {"adjective", grade.adjective},
                {"letter", grade.letter},
                {"by_group", groups}};
  }

  json use_json = json::object();
  for (const auto& [g, dims] : study::aggregate_usefulness(usefulness)) {
    json d = json::object();
    for (const auto& [dim, s] : dims)
      d[std::string(to_string(dim))] = {
          {"median", s.median}, {"agree", s.agree}, {"neutral", s.neutral}, {"disagree", s.disagree}, {"n", s.n}};
    use_json[std::string(to_string(g))] = d;
  }

  return {{"users", user_stats},
          {"offers", offer_stats},
          {"reviews", review_stats},
          {"posting_rate", posting},
          {"lsns", lsns_json},
          {"lsns_isolation_cutoff", instruments.lsns_isolation_cutoff},
          {"sus", sus_json},
          {"usefulness", use_json},
          {"tally", telemetry::to_json(report)}};
}

}  // namespace geofreebie::analytics
