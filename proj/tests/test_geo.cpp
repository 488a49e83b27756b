#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "fedret/geo.hpp"
#include "fedret/rng.hpp"

using namespace fedret;

namespace {

// Test-side haversine written independently from the formula (atan2 form,
// different accumulation) to act as an oracle.
double oracle_haversine(double lat1, double lon1, double lat2, double lon2) {
  const double rad = M_PI / 180.0;
  double p1 = lat1 * rad, p2 = lat2 * rad;
  double dp = (lat2 - lat1) * rad, dl = (lon2 - lon1) * rad;
  double a = std::sin(dp / 2) * std::sin(dp / 2) +
             std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 6371000.0 * 2.0 * std::atan2(std::sqrt(a), std::sqrt(1.0 - a));
}

GeoSample sample_at(std::uint64_t id, double lat, double lon) {
  GeoSample s;
  s.id = id;
  s.tag = {lat, lon};
  return s;
}

}  // namespace

TEST_CASE("geo_distance identity") {
  CHECK(geo_distance({48.8566, 2.3522}, {48.8566, 2.3522}) == 0.0);
}

TEST_CASE("geo_distance antipodal on the equator") {
  // pi * R, analytically forced for the haversine formula.
  CHECK(geo_distance({0.0, 0.0}, {0.0, 180.0}) == doctest::Approx(20015086.79602057).epsilon(1e-12));
}

TEST_CASE("geo_distance small meridian arc matches the independent oracle") {
  // Frozen from an independently written haversine: 0.001 deg north at 45N.
  CHECK(geo_distance({45.0, 7.0}, {45.001, 7.0}) ==
        doctest::Approx(111.19492664426889).epsilon(1e-9));
}

TEST_CASE("geo_distance rejects invalid coordinates") {
  CHECK_THROWS_AS(geo_distance({91.0, 0.0}, {0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(geo_distance({0.0, 181.0}, {0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(geo_distance({std::nan(""), 0.0}, {0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("geo_distance symmetry and triangle inequality on random tags") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    GeoTag a{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    GeoTag b{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    GeoTag c{rng.uniform(-80, 80), rng.uniform(-179, 179)};
    CHECK(geo_distance(a, b) == geo_distance(b, a));
    double ab = geo_distance(a, b), bc = geo_distance(b, c), ac = geo_distance(a, c);
    CHECK(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
  }
}

TEST_CASE("candidate_sets basic membership") {
  GeoSample q = sample_at(100, 0.0, 0.0);

  SUBCASE("co-located sample is a positive") {
    std::vector<GeoSample> db = {sample_at(1, 0.0, 0.0)};
    CandidateSets cs = candidate_sets(q, db, 25.0, 25.0);
    CHECK(cs.positives == std::vector<std::uint64_t>{1});
    CHECK(cs.negatives.empty());
  }

  SUBCASE("sample ~50 m north is a negative at tau = tau_neg = 25") {
    // Frozen oracle distance for 0.00045 deg north: 50.03771699005142 m.
    std::vector<GeoSample> db = {sample_at(2, 0.00045, 0.0)};
    CandidateSets cs = candidate_sets(q, db, 25.0, 25.0);
    CHECK(cs.positives.empty());
    CHECK(cs.negatives == std::vector<std::uint64_t>{2});
  }

  SUBCASE("band between tau and tau_neg is excluded from both") {
    std::vector<GeoSample> db = {sample_at(3, 0.00045, 0.0)};  // ~50 m
    CandidateSets cs = candidate_sets(q, db, 25.0, 100.0);
    CHECK(cs.positives.empty());
    CHECK(cs.negatives.empty());
  }
}

TEST_CASE("candidate_sets matches a brute-force scan on hand-placed samples") {
  GeoSample q = sample_at(999, 10.0, 20.0);
  std::vector<GeoSample> db;
  // Ten samples at increasing northward offsets: 0, 10, 20, ..., 90 m.
  for (int i = 0; i < 10; ++i) {
    double dlat = (10.0 * i) / kEarthRadiusM * 180.0 / M_PI;
    db.push_back(sample_at(static_cast<std::uint64_t>(i), 10.0 + dlat, 20.0));
  }
  double tau = 25.0, tau_neg = 45.0;
  CandidateSets cs = candidate_sets(q, db, tau, tau_neg);

  std::vector<std::uint64_t> want_pos, want_neg;
  for (const GeoSample& s : db) {
    double d = oracle_haversine(q.tag.lat, q.tag.lon, s.tag.lat, s.tag.lon);
    if (d < tau) want_pos.push_back(s.id);
    if (d >= tau_neg) want_neg.push_back(s.id);
  }
  CHECK(cs.positives == want_pos);
  CHECK(cs.negatives == want_neg);
  CHECK(cs.positives.size() == 3);  // 0, 10, 20 m
  CHECK(cs.negatives.size() == 5);  // 50..90 m
}

TEST_CASE("candidate_sets is invariant under database permutation") {
  Rng rng(7);
  GeoSample q = sample_at(1000, -33.0, 151.0);
  std::vector<GeoSample> db;
  for (int i = 0; i < 40; ++i) {
    double dlat = rng.uniform(-0.001, 0.001);
    double dlon = rng.uniform(-0.001, 0.001);
    db.push_back(sample_at(static_cast<std::uint64_t>(i), -33.0 + dlat, 151.0 + dlon));
  }
  CandidateSets a = candidate_sets(q, db, 25.0, 60.0);
  rng.shuffle(db);
  CandidateSets b = candidate_sets(q, db, 25.0, 60.0);
  CHECK(a.positives == b.positives);
  CHECK(a.negatives == b.negatives);
}

TEST_CASE("candidate_sets rejects bad inputs") {
  GeoSample q = sample_at(1, 0, 0);
  std::vector<GeoSample> empty;
  std::vector<GeoSample> db = {sample_at(2, 0, 0)};
  CHECK_THROWS_AS(candidate_sets(q, empty, 25.0, 25.0), std::invalid_argument);
  CHECK_THROWS_AS(candidate_sets(q, db, 50.0, 25.0), std::invalid_argument);
}
