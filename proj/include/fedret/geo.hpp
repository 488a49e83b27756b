#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedret {

inline constexpr double kEarthRadiusM = 6371000.0;

// GPS position in degrees. lat in [-90, 90], lon in [-180, 180].
struct GeoTag {
  double lat = 0.0;
  double lon = 0.0;
};

bool geotag_valid(const GeoTag& t);

enum class Role : std::uint8_t { Query, Database };

// One geo-tagged feature vector with sequence/city membership.
struct GeoSample {
  std::uint64_t id = 0;
  GeoTag tag;
  std::vector<double> feat;
  std::uint64_t seq_id = 0;
  std::uint32_t city_id = 0;
  std::uint32_t continent_id = 0;
  Role role = Role::Database;
};

// Great-circle distance in meters (haversine, mean Earth radius).
// Symmetric, non-negative; throws std::invalid_argument on non-finite or
// out-of-range coordinates.
double geo_distance(const GeoTag& a, const GeoTag& b);

// GPS-label candidate sets for one query. Ids sorted ascending.
struct CandidateSets {
  std::vector<std::uint64_t> positives;  // within tau of the query
  std::vector<std::uint64_t> negatives;  // at least tau_neg away
};

// Partition the database by distance to the query: < tau -> positive,
// >= tau_neg -> negative, in between -> excluded from both.
// Requires tau <= tau_neg and a non-empty database. Empty positives is not
// an error; the caller decides whether the query is usable.
CandidateSets candidate_sets(const GeoSample& query, std::span<const GeoSample> db,
                             double tau_m, double tau_neg_m);

}  // namespace fedret
