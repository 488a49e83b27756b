#include "fedret/geo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedret {

bool geotag_valid(const GeoTag& t) {
  return std::isfinite(t.lat) && std::isfinite(t.lon) && t.lat >= -90.0 && t.lat <= 90.0 &&
         t.lon >= -180.0 && t.lon <= 180.0;
}

namespace {
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
}

double geo_distance(const GeoTag& a, const GeoTag& b) {
  if (!geotag_valid(a) || !geotag_valid(b)) {
    throw std::invalid_argument("geo_distance: invalid coordinates");
  }
  double lat1 = a.lat * kDegToRad;
  double lat2 = b.lat * kDegToRad;
  double dlat = (b.lat - a.lat) * kDegToRad;
  double dlon = (b.lon - a.lon) * kDegToRad;

  double sh_lat = std::sin(0.5 * dlat);
  double sh_lon = std::sin(0.5 * dlon);
  double h = sh_lat * sh_lat + std::cos(lat1) * std::cos(lat2) * sh_lon * sh_lon;
  // Clamp guards rounding just above 1 for near-antipodal pairs.
  double c = 2.0 * std::asin(std::sqrt(std::min(1.0, h)));
  return kEarthRadiusM * c;
}

CandidateSets candidate_sets(const GeoSample& query, std::span<const GeoSample> db,
                             double tau_m, double tau_neg_m) {
  if (db.empty()) throw std::invalid_argument("candidate_sets: empty database");
  if (!(tau_m <= tau_neg_m)) throw std::invalid_argument("candidate_sets: tau > tau_neg");

  CandidateSets out;
  for (const GeoSample& s : db) {
    double d = geo_distance(query.tag, s.tag);
    if (d < tau_m) {
      out.positives.push_back(s.id);
    } else if (d >= tau_neg_m) {
      out.negatives.push_back(s.id);
    }
  }
  std::sort(out.positives.begin(), out.positives.end());
  std::sort(out.negatives.begin(), out.negatives.end());
  return out;
}

}  // namespace fedret
