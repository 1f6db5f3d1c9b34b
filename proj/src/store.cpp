#include "geofreebie/store.hpp"

#include "geofreebie/crypto.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geofreebie::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

[[noreturn]] void io_failure(const std::string& what) {
  throw Error(ErrorCode::Internal, what + ": " + std::strerror(errno));
}

[[noreturn]] void corrupt(const std::string& what) {
  throw Error(ErrorCode::StoreCorrupt, what);
}

bool safe_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_' || c == '-';
}

std::string encode_name(const std::string& s) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (char c : s) {
    if (safe_name_char(c)) {
      out.push_back(c);
    } else {
      const auto u = static_cast<unsigned char>(c);
      out.push_back('%');
      out.push_back(kHex[u >> 4]);
      out.push_back(kHex[u & 0xF]);
    }
  }
  return out;
}

void fsync_path(const fs::path& p, bool directory) {
  const int fd = ::open(p.c_str(), directory ? O_RDONLY | O_DIRECTORY : O_RDONLY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

void write_all(int fd, const std::string& data, const std::string& what) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_failure(what);
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) io_failure("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json record_json(const Record& rec) {
  return json{{"kind", rec.kind},
              {"id", rec.id},
              {"version", rec.version},
              {"updated_at", to_unix_ms(rec.updated_at)},
              {"payload", rec.payload},
              {"checksum", record_checksum(rec)}};
}

Record parse_record_line(const std::string& line, const std::string& where) {
  json j;
  try {
    j = json::parse(line);
    Record rec{j.at("kind").get<std::string>(), j.at("id").get<std::string>(),
               j.at("version").get<std::uint64_t>(), j.at("payload").get<std::string>(),
               from_unix_ms(j.at("updated_at").get<long long>())};
    if (j.at("checksum").get<std::string>() != record_checksum(rec))
      corrupt("checksum mismatch in " + where);
    return rec;
  } catch (const json::exception&) {
    corrupt("unparseable record in " + where);
  }
}

std::string log_line(const LogEntry& e) {
  return std::to_string(e.seq) + ' ' + log_checksum(e.seq, e.payload) + ' ' + e.payload + '\n';
}

std::optional<LogEntry> parse_log_line(std::string_view line) {
  const auto sp1 = line.find(' ');
  if (sp1 == std::string_view::npos) return std::nullopt;
  const auto sp2 = line.find(' ', sp1 + 1);
  if (sp2 == std::string_view::npos) return std::nullopt;
  LogEntry e;
  try {
    std::size_t used = 0;
    const std::string seq(line.substr(0, sp1));
    e.seq = std::stoull(seq, &used);
    if (used != seq.size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  e.payload = std::string(line.substr(sp2 + 1));
  if (line.substr(sp1 + 1, sp2 - sp1 - 1) != log_checksum(e.seq, e.payload)) return std::nullopt;
  return e;
}

bool valid_blob_ref(const std::string& ref) {
  if (ref.size() != 64) return false;
  for (char c : ref)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  return true;
}

}  // namespace

std::string record_checksum(const Record& rec) {
  std::string buf;
  buf.reserve(rec.kind.size() + rec.id.size() + rec.payload.size() + 48);
  buf += rec.kind;
  buf += '\0';
  buf += rec.id;
  buf += '\0';
  buf += std::to_string(rec.version);
  buf += '\0';
  buf += std::to_string(to_unix_ms(rec.updated_at));
  buf += '\0';
  buf += rec.payload;
  return crypto::blake2b_hex(buf, 16);
}

std::string log_checksum(std::uint64_t seq, const std::string& payload) {
  return crypto::blake2b_hex(std::to_string(seq) + '\0' + payload, 16);
}

Store::Store(fs::path dir, Options options) : dir_(std::move(dir)), options_(options) {
  crypto::ensure_initialized();
  fs::create_directories(dir_ / "entities");
  fs::create_directories(dir_ / "blobs");
  fs::create_directories(dir_ / "log");
  const auto manifest = dir_ / "manifest";
  if (fs::exists(manifest)) {
    try {
      const auto j = json::parse(read_file(manifest));
      if (j.at("format").get<std::string>() != "geofreebie-store" ||
          j.at("schema_version").get<int>() != kSchemaVersion)
        corrupt("unsupported store manifest");
    } catch (const json::exception&) {
      corrupt("unparseable store manifest");
    }
  } else {
    const auto tmp = dir_ / "manifest.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << json{{"format", "geofreebie-store"}, {"schema_version", kSchemaVersion}}.dump()
          << '\n';
    }
    fs::rename(tmp, manifest);
  }
  load();
  load_log();
}

Store::~Store() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

fs::path Store::record_path(const std::string& kind, const std::string& id) const {
  return dir_ / "entities" / encode_name(kind) / (encode_name(id) + ".rec");
}

void Store::load() {
  for (const auto& kind_dir : fs::directory_iterator(dir_ / "entities")) {
    if (!kind_dir.is_directory()) continue;
    for (const auto& entry : fs::directory_iterator(kind_dir.path())) {
      const auto& p = entry.path();
      if (p.extension() != ".rec") {
        // Leftover temporary file from an interrupted write.
        if (p.filename().string().find(".tmp") != std::string::npos) fs::remove(p);
        continue;
      }
      std::string content = read_file(p);
      if (!content.empty() && content.back() == '\n') content.pop_back();
      Record rec = parse_record_line(content, p.string());
      if (record_path(rec.kind, rec.id) != p) corrupt("record stored under wrong name: " + p.string());
      records_[rec.kind].emplace(rec.id, std::move(rec));
      data_version_.fetch_add(1);
    }
  }
}

void Store::load_log() {
  const auto path = dir_ / "log" / "events.log";
  std::string content;
  if (fs::exists(path)) content = read_file(path);
  std::size_t pos = 0;
  std::size_t good_end = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    auto entry = parse_log_line(std::string_view(content).substr(pos, nl - pos));
    const std::uint64_t expected = log_.size() + 1;
    if (!entry || entry->seq != expected) {
      if (nl + 1 == content.size()) break;  // torn final line
      corrupt("log corrupt at byte " + std::to_string(pos));
    }
    log_.push_back(std::move(*entry));
    pos = nl + 1;
    good_end = pos;
  }
  log_fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (log_fd_ < 0) io_failure("cannot open log");
  if (good_end != content.size()) {
    if (::ftruncate(log_fd_, static_cast<off_t>(good_end)) != 0) io_failure("cannot truncate log");
  }
  data_version_.fetch_add(log_.size());
}

std::optional<Record> Store::get(const std::string& kind, const std::string& id) const {
  std::shared_lock lock(mu_);
  auto k = records_.find(kind);
  if (k == records_.end()) return std::nullopt;
  auto r = k->second.find(id);
  if (r == k->second.end()) return std::nullopt;
  return r->second;
}

void Store::write_record_file(const Record& rec) {
  const auto final_path = record_path(rec.kind, rec.id);
  fs::create_directories(final_path.parent_path());
  auto tmp = final_path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(tmp_counter_.fetch_add(1));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) io_failure("cannot create " + tmp.string());
  try {
    write_all(fd, record_json(rec).dump() + '\n', "write record");
    if (options_.fsync && ::fsync(fd) != 0) io_failure("fsync record");
  } catch (...) {
    ::close(fd);
    fs::remove(tmp);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), final_path.c_str()) != 0) io_failure("rename record");
  if (options_.fsync) fsync_path(final_path.parent_path(), true);
}

std::uint64_t Store::put_if_version(const std::string& kind, const std::string& id,
                                    std::uint64_t expected_version, const std::string& payload,
                                    Timestamp updated_at) {
  if (kind.empty() || id.empty())
    throw Error(ErrorCode::ValidationFailed, "record kind and id must be non-empty");
  std::unique_lock lock(mu_);
  auto& bucket = records_[kind];
  auto it = bucket.find(id);
  const std::uint64_t current = it == bucket.end() ? 0 : it->second.version;
  if (current != expected_version) {
    throw Error(ErrorCode::VersionConflict, "version conflict on " + kind + "/" + id,
                {{"expected", expected_version}, {"actual", current}});
  }
  Record rec{kind, id, current + 1, payload, updated_at};
  write_record_file(rec);
  bucket.insert_or_assign(id, std::move(rec));
  data_version_.fetch_add(1);
  return current + 1;
}

std::vector<Record> Store::scan(const std::string& kind,
                                const std::function<bool(const Record&)>& filter) const {
  std::shared_lock lock(mu_);
  std::vector<Record> out;
  auto k = records_.find(kind);
  if (k == records_.end()) return out;
  for (const auto& [_, rec] : k->second)
    if (!filter || filter(rec)) out.push_back(rec);
  return out;
}

std::vector<std::string> Store::kinds() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : records_)
    if (!v.empty()) out.push_back(k);
  return out;
}

std::uint64_t Store::append_log(const std::string& payload) {
  if (payload.find('\n') != std::string::npos)
    throw Error(ErrorCode::ValidationFailed, "log payload must be a single line");
  std::lock_guard lock(log_mu_);
  LogEntry e{log_.size() + 1, payload};
  write_all(log_fd_, log_line(e), "append log");
  if (options_.fsync && ::fdatasync(log_fd_) != 0) io_failure("fsync log");
  log_.push_back(std::move(e));
  data_version_.fetch_add(1);
  return log_.size();
}

std::vector<LogEntry> Store::read_log(std::uint64_t from_seq) const {
  std::lock_guard lock(log_mu_);
  const std::size_t start = from_seq == 0 ? 0 : std::min<std::size_t>(from_seq - 1, log_.size());
  return {log_.begin() + static_cast<std::ptrdiff_t>(start), log_.end()};
}

std::uint64_t Store::last_seq() const {
  std::lock_guard lock(log_mu_);
  return log_.size();
}

std::uint64_t Store::data_version() const { return data_version_.load(); }

std::string Store::put_blob(std::span<const std::uint8_t> bytes) {
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const std::string ref = crypto::blake2b_hex(view, 32);
  const auto dir = dir_ / "blobs" / ref.substr(0, 2);
  const auto path = dir / ref;
  if (fs::exists(path)) return ref;
  fs::create_directories(dir);
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(tmp_counter_.fetch_add(1));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) io_failure("cannot create blob");
  try {
    write_all(fd, std::string(view), "write blob");
    if (options_.fsync && ::fsync(fd) != 0) io_failure("fsync blob");
  } catch (...) {
    ::close(fd);
    fs::remove(tmp);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) io_failure("rename blob");
  return ref;
}

bool Store::has_blob(const std::string& ref) const {
  return valid_blob_ref(ref) && fs::exists(dir_ / "blobs" / ref.substr(0, 2) / ref);
}

std::optional<std::vector<std::uint8_t>> Store::get_blob(const std::string& ref) const {
  if (!has_blob(ref)) return std::nullopt;
  const std::string content = read_file(dir_ / "blobs" / ref.substr(0, 2) / ref);
  if (crypto::blake2b_hex(content, 32) != ref) corrupt("blob content does not match its name");
  return std::vector<std::uint8_t>(content.begin(), content.end());
}

void Store::export_snapshot(const fs::path& file) const {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) io_failure("cannot write snapshot " + file.string());
  {
    std::shared_lock lock(mu_);
    for (const auto& [kind, bucket] : records_)
      for (const auto& [id, rec] : bucket) out << "R " << record_json(rec).dump() << '\n';
  }
  {
    std::lock_guard lock(log_mu_);
    for (const auto& e : log_) out << "L " << log_line(e);
  }
}

void Store::import_snapshot(const fs::path& file) {
  {
    std::shared_lock lock(mu_);
    std::lock_guard log_lock(log_mu_);
    for (const auto& [_, bucket] : records_)
      if (!bucket.empty()) throw Error(ErrorCode::ValidationFailed, "import requires an empty store");
    if (!log_.empty()) throw Error(ErrorCode::ValidationFailed, "import requires an empty store");
  }
  std::ifstream in(file, std::ios::binary);
  if (!in) io_failure("cannot read snapshot " + file.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("R ")) {
      Record rec = parse_record_line(line.substr(2), file.string());
      std::unique_lock lock(mu_);
      write_record_file(rec);
      records_[rec.kind].insert_or_assign(rec.id, rec);
      data_version_.fetch_add(1);
    } else if (line.starts_with("L ")) {
      auto e = parse_log_line(std::string_view(line).substr(2));
      if (!e || e->seq != last_seq() + 1) corrupt("bad log line in snapshot");
      append_log(e->payload);
    } else if (!line.empty()) {
      corrupt("unrecognised snapshot line");
    }
  }
}

}  // namespace geofreebie::store
