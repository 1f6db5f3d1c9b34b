#include "geofreebie/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace geofreebie::geo {

namespace {
constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
}  // namespace

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  const double phi1 = deg2rad(lat1);
  const double phi2 = deg2rad(lat2);
  const double dphi = deg2rad(lat2 - lat1);
  const double dlambda = deg2rad(lon2 - lon1);
  const double s_phi = std::sin(dphi / 2.0);
  const double s_lambda = std::sin(dlambda / 2.0);
  const double c_phi = std::cos(dphi / 2.0);
  const double c_lambda = std::cos(dlambda / 2.0);
  const double s_sum = std::sin((phi1 + phi2) / 2.0);
  const double h = s_phi * s_phi + std::cos(phi1) * std::cos(phi2) * s_lambda * s_lambda;
  // 1 - h without cancellation, so near-antipodal pairs stay accurate.
  const double k = c_phi * c_phi * c_lambda * c_lambda + s_sum * s_sum * s_lambda * s_lambda;
  return 2.0 * kEarthRadiusKm * std::atan2(std::sqrt(h), std::sqrt(k));
}

double haversine_km(const GeoPosition& a, const GeoPosition& b) {
  return haversine_km(a.lat, a.lon, b.lat, b.lon);
}

bool within_bbox(const GeoPosition& p, const BoundingBox& bbox) {
  return bbox.min_lat <= p.lat && p.lat <= bbox.max_lat && bbox.min_lon <= p.lon &&
         p.lon <= bbox.max_lon;
}

void validate(const GeofenceConfig& cfg) {
  const auto& b = cfg.bbox;
  auto fail = [](const std::string& invariant) {
    throw Error(ErrorCode::ValidationFailed, "invalid geofence: " + invariant,
                {{"invariant", invariant}});
  };
  if (!in_range(b.min_lat, b.min_lon) || !in_range(b.max_lat, b.max_lon))
    fail("bbox within lat [-90, 90] and lon [-180, 180]");
  if (b.min_lat > b.max_lat) fail("min_lat <= max_lat");
  if (b.min_lon > b.max_lon) fail("min_lon <= max_lon (anti-meridian boxes unsupported)");
  if (cfg.position_max_age <= Duration::zero()) fail("position_max_age > 0");
}

GeofenceConfig parse_geofence(const nlohmann::json& j) {
  GeofenceConfig cfg;
  try {
    cfg.region_label = j.at("region_label").get<std::string>();
    const auto& b = j.at("bbox");
    cfg.bbox = {b.at("min_lat").get<double>(), b.at("max_lat").get<double>(),
                b.at("min_lon").get<double>(), b.at("max_lon").get<double>()};
    const double hours = j.at("position_max_age_hours").get<double>();
    cfg.position_max_age = Duration{static_cast<long long>(std::llround(hours * 3600'000.0))};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("invalid geofence: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

GeofenceConfig load_geofence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open geofence file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "geofence file " + path.string() + ": " + e.what());
  }
  return parse_geofence(j);
}

GeofenceConfig muenster_sample() {
  return GeofenceConfig{{51.840, 52.060, 7.470, 7.780}, "Münster", std::chrono::hours{24}};
}

bool derive_availability(const UserProfile& user, const GeofenceConfig& cfg, Timestamp now) {
  if (!user.last_position) return false;
  const auto& p = *user.last_position;
  return now - p.recorded_at <= cfg.position_max_age && within_bbox(p, cfg.bbox);
}

std::vector<OfferDistance> offers_with_distance(const GeoPosition& viewer,
                                                std::span<const Offer> offers) {
  std::vector<OfferDistance> out;
  out.reserve(offers.size());
  for (const auto& o : offers) out.push_back({o, haversine_km(viewer, o.pickup_position)});
  std::sort(out.begin(), out.end(), [](const OfferDistance& a, const OfferDistance& b) {
    if (a.distance_km != b.distance_km) return a.distance_km < b.distance_km;
    if (a.offer.created_at != b.offer.created_at) return a.offer.created_at > b.offer.created_at;
    return a.offer.offer_id < b.offer.offer_id;
  });
  return out;
}

double round_distance(double km) { return std::round(km * 10.0) / 10.0; }

}  // namespace geofreebie::geo
