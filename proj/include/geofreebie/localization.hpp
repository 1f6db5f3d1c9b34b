#pragma once

#include "geofreebie/error.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace geofreebie::l10n {

inline constexpr const char* kReferenceLocale = "en";

// One locale's strings. On disk: <dir>/<locale>.json with
// {"locale", "name", "direction": "ltr"|"rtl", "strings": {key: text}}.
struct Bundle {
  std::string locale;
  std::string name;
  std::string direction = "ltr";
  std::map<std::string, std::string> strings;
};

// "en", "de", "ar", "pt-BR".
bool valid_locale_code(const std::string& code);

Bundle parse_bundle(const nlohmann::json& j);
// Throws ParseError.
Bundle load_bundle(const std::filesystem::path& path);
nlohmann::json to_json(const Bundle& b);

struct ParityReport {
  std::vector<std::string> missing;  // in reference, absent here
  std::vector<std::string> extra;    // here, absent in reference
  bool ok() const { return missing.empty() && extra.empty(); }
};

ParityReport check_parity(const Bundle& candidate, const Bundle& reference);
// Throws KeyParityViolation with details {locale, missing, extra}.
void require_parity(const Bundle& candidate, const Bundle& reference);

struct Resolved {
  const Bundle* bundle = nullptr;
  bool fallback = false;
};

class Catalog {
 public:
  // Loads every *.json in `dir`; requires the reference bundle and key parity
  // for all others.
  static Catalog load(const std::filesystem::path& dir);
  static Catalog from_bundles(std::vector<Bundle> bundles);

  // Unknown locales resolve to English with fallback = true.
  Resolved get(const std::string& locale) const;
  bool has(const std::string& locale) const { return bundles_.contains(locale); }
  const Bundle& reference() const;
  std::vector<std::string> locales() const;

 private:
  std::map<std::string, Bundle> bundles_;
};

// Response body for GET /v1/localizations/{locale}.
nlohmann::json localization_response(const Catalog& catalog, const std::string& requested);

}  // namespace geofreebie::l10n
