#pragma once

#include "geofreebie/error.hpp"
#include "geofreebie/time.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace geofreebie::jsonu {

using nlohmann::json;

inline json ts(Timestamp t) { return format_timestamp(t); }

inline Timestamp ts(const json& j) {
  if (!j.is_string()) throw Error(ErrorCode::ParseError, "timestamp must be a string");
  auto t = parse_timestamp(j.get<std::string>());
  if (!t) throw Error(ErrorCode::ParseError, "malformed timestamp: " + j.get<std::string>());
  return *t;
}

template <class T>
json opt(const std::optional<T>& v) {
  if (!v) return nullptr;
  return json(*v);
}

inline json opt_ts(const std::optional<Timestamp>& v) {
  if (!v) return nullptr;
  return ts(*v);
}

template <class T>
std::optional<T> get_opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

inline std::optional<Timestamp> get_opt_ts(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return ts(*it);
}

// Field access for request bodies: missing or mistyped fields become a
// ValidationFailed naming the field.
template <class T>
T require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null())
    throw Error(ErrorCode::ValidationFailed, std::string("missing field: ") + key,
                {{"field", key}});
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ValidationFailed, std::string("wrong type for field: ") + key,
                {{"field", key}});
  }
}

template <class T>
std::optional<T> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ValidationFailed, std::string("wrong type for field: ") + key,
                {{"field", key}});
  }
}

}  // namespace geofreebie::jsonu
