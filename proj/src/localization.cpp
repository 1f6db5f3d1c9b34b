#include "geofreebie/localization.hpp"

#include <algorithm>
#include <fstream>
#include <regex>

namespace geofreebie::l10n {

using nlohmann::json;

bool valid_locale_code(const std::string& code) {
  static const std::regex pattern("^[a-z]{2,3}(-[A-Z]{2})?$");
  return std::regex_match(code, pattern);
}

Bundle parse_bundle(const json& j) {
  Bundle b;
  try {
    b.locale = j.at("locale").get<std::string>();
    b.name = j.value("name", b.locale);
    b.direction = j.value("direction", std::string("ltr"));
    for (const auto& [key, value] : j.at("strings").items()) {
      if (!value.is_string()) throw Error(ErrorCode::ParseError, "string value expected for key " + key);
      b.strings.emplace(key, value.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed bundle: ") + e.what());
  }
  if (!valid_locale_code(b.locale))
    throw Error(ErrorCode::ParseError, "invalid locale code: " + b.locale);
  if (b.direction != "ltr" && b.direction != "rtl")
    throw Error(ErrorCode::ParseError, "direction must be ltr or rtl");
  return b;
}

Bundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open bundle " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return parse_bundle(j);
}

json to_json(const Bundle& b) {
  return {{"locale", b.locale}, {"name", b.name}, {"direction", b.direction}, {"strings", b.strings}};
}

ParityReport check_parity(const Bundle& candidate, const Bundle& reference) {
  ParityReport r;
  for (const auto& [key, _] : reference.strings)
    if (!candidate.strings.contains(key)) r.missing.push_back(key);
  for (const auto& [key, _] : candidate.strings)
    if (!reference.strings.contains(key)) r.extra.push_back(key);
  return r;
}

void require_parity(const Bundle& candidate, const Bundle& reference) {
  const auto r = check_parity(candidate, reference);
  if (!r.ok()) {
    throw Error(ErrorCode::KeyParityViolation,
                "bundle " + candidate.locale + " differs from " + reference.locale + ": " +
                    std::to_string(r.missing.size()) + " missing, " + std::to_string(r.extra.size()) +
                    " extra",
                {{"locale", candidate.locale}, {"missing", r.missing}, {"extra", r.extra}});
  }
}

Catalog Catalog::from_bundles(std::vector<Bundle> bundles) {
  Catalog c;
  for (auto& b : bundles) {
    const std::string code = b.locale;
    if (!c.bundles_.emplace(code, std::move(b)).second)
      throw Error(ErrorCode::ParseError, "duplicate bundle for locale " + code);
  }
  if (!c.bundles_.contains(kReferenceLocale))
    throw Error(ErrorCode::ParseError, "reference bundle 'en' is missing");
  const Bundle& ref = c.reference();
  for (const auto& [code, b] : c.bundles_)
    if (code != kReferenceLocale) require_parity(b, ref);
  return c;
}

Catalog Catalog::load(const std::filesystem::path& dir) {
  std::vector<Bundle> bundles;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Bundle b = load_bundle(f);
    if (f.stem().string() != b.locale)
      throw Error(ErrorCode::ParseError, f.string() + " declares locale " + b.locale);
    bundles.push_back(std::move(b));
  }
  return from_bundles(std::move(bundles));
}

Resolved Catalog::get(const std::string& locale) const {
  if (auto it = bundles_.find(locale); it != bundles_.end()) return {&it->second, false};
  return {&reference(), true};
}

const Bundle& Catalog::reference() const { return bundles_.at(kReferenceLocale); }

std::vector<std::string> Catalog::locales() const {
  std::vector<std::string> out;
  for (const auto& [code, _] : bundles_) out.push_back(code);
  return out;
}

json localization_response(const Catalog& catalog, const std::string& requested) {
  const auto resolved = catalog.get(requested);
  json body = to_json(*resolved.bundle);
  body["requested"] = requested;
  body["fallback"] = resolved.fallback;
  body["available"] = catalog.locales();
  return body;
}

}  // namespace geofreebie::l10n
