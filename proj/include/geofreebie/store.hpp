#pragma once

#include "geofreebie/error.hpp"
#include "geofreebie/time.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace geofreebie::store {

// Data directory layout:
//
//   <dir>/manifest                     format marker + schema version
//   <dir>/entities/<kind>/<id>.rec     one record per file, replaced by rename
//   <dir>/blobs/<aa>/<blake2b-256>     content-addressed photo blobs
//   <dir>/log/events.log               append-only, one checksummed line per entry
//
// A record file is a single JSON line carrying kind, id, version, updated_at,
// payload and a BLAKE2b checksum over the other fields. Writes go to a
// temporary file that is fsynced and renamed over the old one, so a reader
// (or a recovering process) sees either the old or the new version.

struct Record {
  std::string kind;
  std::string id;
  std::uint64_t version = 0;
  std::string payload;
  Timestamp updated_at{};

  friend bool operator==(const Record&, const Record&) = default;
};

struct LogEntry {
  std::uint64_t seq = 0;
  std::string payload;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

struct Options {
  // fsync files (and the containing directory) before acknowledging a write.
  bool fsync = true;
};

class Store {
 public:
  explicit Store(std::filesystem::path dir, Options options = {});
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  std::optional<Record> get(const std::string& kind, const std::string& id) const;

  // expected_version 0 means "create". Returns the new version.
  // Throws VersionConflict.
  std::uint64_t put_if_version(const std::string& kind, const std::string& id,
                               std::uint64_t expected_version, const std::string& payload,
                               Timestamp updated_at);

  std::vector<Record> scan(const std::string& kind,
                           const std::function<bool(const Record&)>& filter = {}) const;
  std::vector<std::string> kinds() const;

  // Single sequencer; sequence numbers start at 1 and have no gaps.
  std::uint64_t append_log(const std::string& payload);
  // Entries with seq >= from_seq, in order.
  std::vector<LogEntry> read_log(std::uint64_t from_seq = 0) const;
  std::uint64_t last_seq() const;

  // Monotone counter bumped on every committed entity write or log append.
  std::uint64_t data_version() const;

  std::string put_blob(std::span<const std::uint8_t> bytes);
  std::optional<std::vector<std::uint8_t>> get_blob(const std::string& ref) const;
  bool has_blob(const std::string& ref) const;

  // Whole-store snapshot as a single line-delimited file (records, then log).
  void export_snapshot(const std::filesystem::path& file) const;
  // Into an empty store only. Throws ValidationFailed if the store has data.
  void import_snapshot(const std::filesystem::path& file);

 private:
  void load();
  void load_log();
  std::filesystem::path record_path(const std::string& kind, const std::string& id) const;
  void write_record_file(const Record& rec);

  std::filesystem::path dir_;
  Options options_;

  mutable std::shared_mutex mu_;
  std::map<std::string, std::map<std::string, Record>> records_;

  mutable std::mutex log_mu_;
  std::vector<LogEntry> log_;
  int log_fd_ = -1;

  std::atomic<std::uint64_t> data_version_{0};
  std::atomic<std::uint64_t> tmp_counter_{0};

};

std::string record_checksum(const Record& rec);
std::string log_checksum(std::uint64_t seq, const std::string& payload);

}  // namespace geofreebie::store
