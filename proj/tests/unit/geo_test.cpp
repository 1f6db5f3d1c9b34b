#include "geofreebie/geo.hpp"

#include "harness.hpp"
#include "oracles.hpp"

#include <numbers>
#include <random>

using namespace geofreebie;
using namespace geofreebie::geo;

namespace {

struct Rand {
  std::mt19937_64 rng;
  explicit Rand(std::uint64_t seed) : rng(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double lat() { return uniform(-90.0, 90.0); }
  double lon() { return uniform(-180.0, 180.0); }
};

UserProfile at(double lat, double lon, Timestamp recorded) {
  UserProfile u;
  u.user_id = "u";
  u.last_position = GeoPosition{lat, lon, recorded};
  return u;
}

}  // namespace

TEST(Haversine, KnownDistances) {
  EXPECT_DOUBLE_EQ(haversine_km(51.96, 7.62, 51.96, 7.62), 0.0);
  // One degree of longitude along the equator.
  EXPECT_NEAR(haversine_km(0, 0, 0, 1), kEarthRadiusKm * std::numbers::pi / 180.0, 1e-9);
  // Münster cathedral to the main station, roughly 1 km.
  const double d = haversine_km(51.9626, 7.6256, 51.9565, 7.6355);
  EXPECT_GT(d, 0.8);
  EXPECT_LT(d, 1.2);
}

TEST(Haversine, AgreesWithLawOfCosines) {
  Rand r(1);
  for (int i = 0; i < 10000; ++i) {
    const double a = r.lat(), b = r.lon(), c = r.lat(), d = r.lon();
    const double h = haversine_km(a, b, c, d);
    const double o = oracle::slc_km(a, b, c, d);
    // The law of cosines loses precision for tiny separations.
    if (o < 1.0) continue;
    EXPECT_NEAR(h, o, o * 0.005) << a << "," << b << " -> " << c << "," << d;
  }
}

TEST(Haversine, SymmetricAndNonNegative) {
  Rand r(2);
  for (int i = 0; i < 10000; ++i) {
    const double a = r.lat(), b = r.lon(), c = r.lat(), d = r.lon();
    const double h = haversine_km(a, b, c, d);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::numbers::pi * kEarthRadiusKm + 1e-6);
    EXPECT_DOUBLE_EQ(h, haversine_km(c, d, a, b));
    EXPECT_EQ(haversine_km(a, b, a, b), 0.0);
  }
}

TEST(Haversine, Antipodal) {
  Rand r(3);
  const double half = std::numbers::pi * kEarthRadiusKm;
  EXPECT_NEAR(haversine_km(90, 0, -90, 0), half, 1e-6);
  EXPECT_NEAR(haversine_km(0, 0, 0, 180), half, 1e-6);
  for (int i = 0; i < 1000; ++i) {
    const double lat = r.lat(), lon = r.uniform(-180.0, 0.0);
    EXPECT_NEAR(haversine_km(lat, lon, -lat, lon + 180.0), half, 1e-6);
  }
}

TEST(Haversine, TriangleInequality) {
  Rand r(4);
  for (int i = 0; i < 10000; ++i) {
    const double a1 = r.lat(), o1 = r.lon(), a2 = r.lat(), o2 = r.lon(), a3 = r.lat(), o3 = r.lon();
    EXPECT_LE(haversine_km(a1, o1, a3, o3), haversine_km(a1, o1, a2, o2) + haversine_km(a2, o2, a3, o3) + 1e-6);
  }
}

TEST(Haversine, PositionOverload) {
  const GeoPosition a{51.9, 7.5, gt::t0()}, b{52.0, 7.7, gt::t0()};
  EXPECT_DOUBLE_EQ(haversine_km(a, b), haversine_km(51.9, 7.5, 52.0, 7.7));
}

TEST(Geofence, EdgesAndCornersAreInside) {
  const auto cfg = muenster_sample();
  const auto& b = cfg.bbox;
  const auto now = gt::t0();
  for (double lat : {b.min_lat, b.max_lat})
    for (double lon : {b.min_lon, b.max_lon}) EXPECT_TRUE(within_bbox({lat, lon, now}, b)) << lat << "," << lon;
  EXPECT_TRUE(within_bbox({b.min_lat, (b.min_lon + b.max_lon) / 2, now}, b));
  EXPECT_TRUE(within_bbox({(b.min_lat + b.max_lat) / 2, b.max_lon, now}, b));
  const double eps = 1e-9;
  EXPECT_FALSE(within_bbox({b.min_lat - eps, b.min_lon, now}, b));
  EXPECT_FALSE(within_bbox({b.max_lat + eps, b.max_lon, now}, b));
  EXPECT_FALSE(within_bbox({b.min_lat, b.min_lon - eps, now}, b));
  EXPECT_FALSE(within_bbox({b.max_lat, b.max_lon + eps, now}, b));
}

TEST(Geofence, RandomPointsMatchComparison) {
  const auto b = muenster_sample().bbox;
  Rand r(5);
  for (int i = 0; i < 20000; ++i) {
    const double lat = r.uniform(51.7, 52.2), lon = r.uniform(7.3, 7.9);
    const bool expected = lat >= b.min_lat && lat <= b.max_lat && lon >= b.min_lon && lon <= b.max_lon;
    EXPECT_EQ(within_bbox({lat, lon, gt::t0()}, b), expected);
  }
}

TEST(Availability, StalenessBoundary) {
  const auto cfg = muenster_sample();
  const auto now = gt::t0();
  EXPECT_FALSE(derive_availability(UserProfile{}, cfg, now));
  EXPECT_TRUE(derive_availability(at(51.96, 7.62, now), cfg, now));
  EXPECT_TRUE(derive_availability(at(51.96, 7.62, now - std::chrono::hours(24)), cfg, now));
  EXPECT_FALSE(derive_availability(at(51.96, 7.62, now - std::chrono::hours(24) - Duration(1)), cfg, now));
  EXPECT_FALSE(derive_availability(at(52.2, 7.62, now), cfg, now));
}

TEST(Availability, FreshnessMonotonic) {
  // Once stale, a position stays stale as time advances.
  const auto cfg = muenster_sample();
  Rand r(6);
  for (int i = 0; i < 2000; ++i) {
    const auto recorded = gt::t0();
    const auto u = at(r.uniform(51.85, 52.05), r.uniform(7.48, 7.77), recorded);
    bool seen_stale = false;
    for (int h = 0; h < 60; h += 1 + static_cast<int>(r.rng() % 5)) {
      const bool avail = derive_availability(u, cfg, recorded + std::chrono::hours(h));
      if (seen_stale) EXPECT_FALSE(avail);
      if (!avail) seen_stale = true;
    }
    EXPECT_TRUE(seen_stale);
  }
}

TEST(Distance, SortedPermutationWithTieBreaks) {
  Rand r(7);
  const GeoPosition viewer{51.96, 7.62, gt::t0()};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Offer> offers;
    const int n = 1 + static_cast<int>(r.rng() % 30);
    for (int i = 0; i < n; ++i) {
      Offer o;
      o.offer_id = "o" + std::to_string(r.rng() % 1000) + "-" + std::to_string(i);
      o.owner_id = "u";
      o.title = "x";
      // Some offers share exact positions to exercise the tie-breaks.
      if (i > 0 && r.rng() % 3 == 0) {
        o.pickup_position = offers[r.rng() % offers.size()].pickup_position;
      } else {
        o.pickup_position = {r.uniform(51.85, 52.05), r.uniform(7.48, 7.77), gt::t0()};
      }
      o.created_at = gt::t0() + std::chrono::minutes(r.rng() % 4);
      offers.push_back(o);
    }
    const auto out = offers_with_distance(viewer, offers);
    ASSERT_EQ(out.size(), offers.size());
    std::multiset<std::string> in_ids, out_ids;
    for (const auto& o : offers) in_ids.insert(o.offer_id);
    for (const auto& od : out) out_ids.insert(od.offer.offer_id);
    EXPECT_EQ(in_ids, out_ids);
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_DOUBLE_EQ(out[i].distance_km, haversine_km(viewer, out[i].offer.pickup_position));
      if (i == 0) continue;
      const auto &p = out[i - 1], &q = out[i];
      EXPECT_LE(p.distance_km, q.distance_km);
      if (p.distance_km == q.distance_km) {
        EXPECT_GE(p.offer.created_at, q.offer.created_at);
        if (p.offer.created_at == q.offer.created_at) EXPECT_LT(p.offer.offer_id, q.offer.offer_id);
      }
    }
  }
}

TEST(Distance, Rounding) {
  EXPECT_DOUBLE_EQ(round_distance(1.04), 1.0);
  EXPECT_DOUBLE_EQ(round_distance(1.05), 1.1);
  EXPECT_DOUBLE_EQ(round_distance(0.0), 0.0);
  EXPECT_DOUBLE_EQ(round_distance(12.349), 12.3);
}

TEST(GeofenceConfig, Validation) {
  using gt::json;
  const json good = {{"region_label", "Münster"},
                     {"bbox", {{"min_lat", 51.84}, {"max_lat", 52.06}, {"min_lon", 7.47}, {"max_lon", 7.78}}},
                     {"position_max_age_hours", 24}};
  const auto cfg = parse_geofence(good);
  EXPECT_EQ(cfg.region_label, "Münster");
  EXPECT_EQ(cfg.position_max_age, std::chrono::hours(24));

  auto bad = good;
  bad["bbox"]["min_lat"] = 53.0;
  EXPECT_CODE(parse_geofence(bad), ErrorCode::ValidationFailed);
  bad = good;
  bad["bbox"]["min_lon"] = 170.0;
  bad["bbox"]["max_lon"] = -170.0;
  EXPECT_CODE(parse_geofence(bad), ErrorCode::ValidationFailed);
  bad = good;
  bad["bbox"]["max_lat"] = 91.0;
  EXPECT_CODE(parse_geofence(bad), ErrorCode::ValidationFailed);
  bad = good;
  bad["position_max_age_hours"] = 0;
  EXPECT_CODE(parse_geofence(bad), ErrorCode::ValidationFailed);
  bad = good;
  bad.erase("bbox");
  EXPECT_CODE(parse_geofence(bad), ErrorCode::ParseError);
}

TEST(GeofenceConfig, ShippedFileLoads) {
  const auto cfg = load_geofence(gt::source_path("data/geofence_muenster.json"));
  const auto sample = muenster_sample();
  EXPECT_DOUBLE_EQ(cfg.bbox.min_lat, sample.bbox.min_lat);
  EXPECT_DOUBLE_EQ(cfg.bbox.max_lon, sample.bbox.max_lon);
  EXPECT_EQ(cfg.position_max_age, sample.position_max_age);
}
