#pragma once

#include "geofreebie/domain.hpp"

#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace geofreebie::geo {

// Mean Earth radius (IUGG), kilometres.
inline constexpr double kEarthRadiusKm = 6371.0088;

double haversine_km(const GeoPosition& a, const GeoPosition& b);
double haversine_km(double lat1, double lon1, double lat2, double lon2);

struct BoundingBox {
  double min_lat = 0.0;
  double max_lat = 0.0;
  double min_lon = 0.0;
  double max_lon = 0.0;
};

struct GeofenceConfig {
  BoundingBox bbox;
  std::string region_label;
  Duration position_max_age = std::chrono::hours{24};
};

// Closed box. Boxes crossing the anti-meridian are rejected at load time, so
// min_lon <= max_lon always holds here.
bool within_bbox(const GeoPosition& p, const BoundingBox& bbox);

// Throws ValidationFailed with a diagnostic naming the violated invariant.
void validate(const GeofenceConfig& cfg);

// {"region_label": ..., "bbox": {"min_lat",...}, "position_max_age_hours": 24}
GeofenceConfig parse_geofence(const nlohmann::json& j);
GeofenceConfig load_geofence(const std::filesystem::path& path);

// Sample fence around Münster: lat [51.840, 52.060], lon [7.470, 7.780].
GeofenceConfig muenster_sample();

bool derive_availability(const UserProfile& user, const GeofenceConfig& cfg, Timestamp now);

struct OfferDistance {
  Offer offer;
  double distance_km = 0.0;
};

// Ascending distance; ties newest first, then offer_id.
std::vector<OfferDistance> offers_with_distance(const GeoPosition& viewer,
                                                std::span<const Offer> offers);

// API boundary rendering: 0.1 km precision.
double round_distance(double km);

}  // namespace geofreebie::geo
