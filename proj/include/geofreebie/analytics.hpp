#pragma once

#include "geofreebie/store.hpp"
#include "geofreebie/study.hpp"
#include "geofreebie/telemetry.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace geofreebie::analytics {

// Stored survey submission (entity kind "survey", id "<user>.<instrument>").
struct SurveyRecord {
  UserId user_id;
  std::string instrument;  // demographics | lsns6 | sus | usefulness
  nlohmann::json answers;
  std::optional<double> score;
  Timestamp submitted_at{};
};

void to_json(nlohmann::json& j, const SurveyRecord& s);
void from_json(const nlohmann::json& j, SurveyRecord& s);
std::string survey_record_id(const UserId& user, const std::string& instrument);

inline constexpr int kExportSchemaVersion = 1;
inline constexpr const char* kStreams[] = {"users", "offers", "reviews", "surveys", "telemetry"};

// Keyed BLAKE2b pseudonym, "p" + 16 hex chars.
std::string pseudonymize(const std::string& id, const std::string& key);

// Export archive: manifest.json plus five line-delimited streams
// (<stream>.jsonl). The pseudonym mapping table is kept apart from the
// archive so the analysis data can be shared without it.
struct ExportArchive {
  std::map<std::string, std::string> files;
  std::string pseudonym_map;
};

ExportArchive export_dataset(const store::Store& store, const std::string& key,
                             const study::InstrumentSet& instruments);
void write_archive(const ExportArchive& archive, const std::filesystem::path& dir,
                   const std::filesystem::path& mapping_file);

struct ImportedDataset {
  nlohmann::json manifest;
  std::map<std::string, std::vector<nlohmann::json>> streams;
  std::vector<telemetry::TelemetryEvent> telemetry;
};

ImportedDataset import_dataset(const std::filesystem::path& dir);
ImportedDataset import_dataset(const std::map<std::string, std::string>& files);

// Everything the operator "stats" command prints.
nlohmann::json compute_stats(const store::Store& store, const telemetry::Window& window,
                             const study::InstrumentSet& instruments);

}  // namespace geofreebie::analytics
