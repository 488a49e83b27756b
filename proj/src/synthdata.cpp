#include "fedret/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedret/rng.hpp"

namespace fedret {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Stream tags for seed derivation.
constexpr std::uint64_t kTagCell = 0x63656c6cull;  // per-cell place code
constexpr std::uint64_t kTagSeq = 0x73657175ull;   // per-sequence walk + condition
constexpr std::uint64_t kTagCond = 0x636f6e64ull;  // world condition directions

std::vector<double> unit_gaussian_vector(Rng& rng, int dim) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  double norm = std::sqrt(sq);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

std::vector<double> place_code(const WorldSpec& spec, int city, int cx, int cy) {
  Rng rng(seed_of(spec.seed, kTagCell, static_cast<std::uint64_t>(city),
                  static_cast<std::uint64_t>(cx), static_cast<std::uint64_t>(cy)));
  return unit_gaussian_vector(rng, spec.feature_dim);
}

GeoTag local_to_tag(const GeoTag& center, double extent_m, double x_east, double y_north) {
  constexpr double kRadToDeg = 180.0 / kPi;
  double dy = y_north - 0.5 * extent_m;
  double dx = x_east - 0.5 * extent_m;
  double lat = center.lat + dy / kEarthRadiusM * kRadToDeg;
  double lon = center.lon + dx / (kEarthRadiusM * std::cos(center.lat * kPi / 180.0)) * kRadToDeg;
  return {lat, lon};
}

}  // namespace

void WorldSpec::validate() const {
  if (n_cities < 1 || sequences_per_city < 1 || images_per_sequence < 1 ||
      neighborhoods_per_city < 1 || feature_dim < 1 || condition_dims < 1) {
    throw std::invalid_argument("WorldSpec: counts must be >= 1");
  }
  if (!(place_grid_cell_m > 0.0) || !(city_extent_m >= place_grid_cell_m)) {
    throw std::invalid_argument("WorldSpec: invalid grid geometry");
  }
  if (!(place_signal_strength >= 0.0 && place_signal_strength <= 1.0)) {
    throw std::invalid_argument("WorldSpec: place_signal_strength must be in [0, 1]");
  }
  if (noise_scale < 0.0 || condition_scale < 0.0) {
    throw std::invalid_argument("WorldSpec: scales must be >= 0");
  }
  if (!city_centers.empty() && static_cast<int>(city_centers.size()) != n_cities) {
    throw std::invalid_argument("WorldSpec: city_centers size must match n_cities");
  }
  if (!continent_of.empty() && static_cast<int>(continent_of.size()) != n_cities) {
    throw std::invalid_argument("WorldSpec: continent_of size must match n_cities");
  }
  if (!sequences_per_city_override.empty() &&
      static_cast<int>(sequences_per_city_override.size()) != n_cities) {
    throw std::invalid_argument("WorldSpec: sequences_per_city_override size must match n_cities");
  }
}

std::vector<GeoSample> generate_world(const WorldSpec& spec) {
  spec.validate();

  std::vector<GeoTag> centers = spec.city_centers;
  if (centers.empty()) {
    for (int i = 0; i < spec.n_cities; ++i) {
      int row = i / 6, col = i % 6;
      centers.push_back({-30.0 + 12.0 * row, -150.0 + 30.0 * col});
    }
  }
  std::vector<std::uint32_t> continents = spec.continent_of;
  if (continents.empty()) {
    for (int i = 0; i < spec.n_cities; ++i) {
      continents.push_back(static_cast<std::uint32_t>(i * std::min(4, spec.n_cities) /
                                                      spec.n_cities));
    }
  }

  // Fixed subspace for the per-sequence condition offsets.
  std::vector<std::vector<double>> cond_dirs;
  {
    Rng rng(seed_of(spec.seed, kTagCond));
    for (int j = 0; j < spec.condition_dims; ++j) {
      cond_dirs.push_back(unit_gaussian_vector(rng, spec.feature_dim));
    }
  }

  const int grid = std::max(1, static_cast<int>(spec.city_extent_m / spec.place_grid_cell_m));
  const double cell = spec.place_grid_cell_m;

  // Neighborhood anchors sit on a coarse sub-grid with a small jitter, which
  // keeps anchors of one city well separated.
  const int anchor_grid = static_cast<int>(std::ceil(std::sqrt(spec.neighborhoods_per_city)));

  std::vector<GeoSample> samples;
  std::uint64_t next_sample_id = 0;
  std::uint64_t next_seq_id = 0;

  for (int city = 0; city < spec.n_cities; ++city) {
    int n_seqs = spec.sequences_per_city_override.empty() ? spec.sequences_per_city
                                                          : spec.sequences_per_city_override[city];
    Rng anchor_rng(seed_of(spec.seed, 0x616e6368ull, static_cast<std::uint64_t>(city)));
    std::vector<std::pair<int, int>> anchors;
    double spacing = spec.city_extent_m / anchor_grid;
    for (int a = 0; a < spec.neighborhoods_per_city; ++a) {
      double ax = (a % anchor_grid + 0.5) * spacing + anchor_rng.uniform(-spacing / 10, spacing / 10);
      double ay = (a / anchor_grid + 0.5) * spacing + anchor_rng.uniform(-spacing / 10, spacing / 10);
      int cx = std::clamp(static_cast<int>(ax / cell), 0, grid - 1);
      int cy = std::clamp(static_cast<int>(ay / cell), 0, grid - 1);
      anchors.emplace_back(cx, cy);
    }

    // A route is a random walk through cells near one neighborhood anchor.
    // Consecutive role layers share a route: the query sequences of layer
    // 2p+1 retrace the database route of layer 2p in other conditions, the
    // way street-level collections revisit the same streets.
    auto route_cells = [&](int neighborhood, int pair) {
      Rng rng(seed_of(spec.seed, 0x77616c6bull, static_cast<std::uint64_t>(city),
                      static_cast<std::uint64_t>(neighborhood), static_cast<std::uint64_t>(pair)));
      auto [ax, ay] = anchors[neighborhood];
      constexpr int kBox = 2;  // 5x5 cells around the anchor
      const int x_lo = std::max(0, ax - kBox), x_hi = std::min(grid - 1, ax + kBox);
      const int y_lo = std::max(0, ay - kBox), y_hi = std::min(grid - 1, ay + kBox);
      int cx = std::clamp(ax, x_lo, x_hi);
      int cy = std::clamp(ay, y_lo, y_hi);
      std::vector<std::pair<int, int>> cells;
      for (int img = 0; img < spec.images_per_sequence; ++img) {
        cells.emplace_back(cx, cy);
        switch (rng.below(4)) {
          case 0: cx = std::min(cx + 1, x_hi); break;
          case 1: cx = std::max(cx - 1, x_lo); break;
          case 2: cy = std::min(cy + 1, y_hi); break;
          default: cy = std::max(cy - 1, y_lo); break;
        }
      }
      return cells;
    };

    for (int s = 0; s < n_seqs; ++s) {
      int neighborhood = s % spec.neighborhoods_per_city;
      int layer = s / spec.neighborhoods_per_city;
      Role role = (layer % 2 == 0) ? Role::Database : Role::Query;
      std::uint64_t seq_id = next_seq_id++;

      Rng rng(seed_of(spec.seed, kTagSeq, static_cast<std::uint64_t>(city),
                      static_cast<std::uint64_t>(s)));

      // Condition offset for the whole sequence.
      std::vector<double> offset(spec.feature_dim, 0.0);
      for (const auto& dir : cond_dirs) {
        double coeff = rng.normal() * spec.condition_scale;
        for (int d = 0; d < spec.feature_dim; ++d) offset[d] += coeff * dir[d];
      }

      std::vector<std::pair<int, int>> cells = route_cells(neighborhood, layer / 2);
      for (int img = 0; img < spec.images_per_sequence; ++img) {
        auto [cx, cy] = cells[static_cast<std::size_t>(img)];
        double px = (cx + 0.5) * cell + rng.uniform(-2.0, 2.0);
        double py = (cy + 0.5) * cell + rng.uniform(-2.0, 2.0);

        GeoSample sample;
        sample.id = next_sample_id++;
        sample.tag = local_to_tag(centers[city], spec.city_extent_m, px, py);
        sample.seq_id = seq_id;
        sample.city_id = static_cast<std::uint32_t>(city);
        sample.continent_id = continents[city];
        sample.role = role;

        std::vector<double> code = place_code(spec, city, cx, cy);
        sample.feat.resize(spec.feature_dim);
        for (int d = 0; d < spec.feature_dim; ++d) {
          sample.feat[d] = spec.place_signal_strength * code[d] +
                           spec.noise_scale * rng.normal() + offset[d];
        }
        samples.push_back(std::move(sample));
      }
    }
  }

  WorldStats stats = world_stats(samples);
  if (stats.n_queries > 0 && stats.query_coverage < 0.95) {
    throw std::runtime_error("generate_world: query coverage below 95% (" +
                             std::to_string(stats.query_coverage) + "); adjust WorldSpec");
  }
  return samples;
}

WorldStats world_stats(std::span<const GeoSample> samples) {
  WorldStats st;
  st.n_samples = static_cast<int>(samples.size());
  std::vector<std::uint64_t> seqs;
  int covered = 0;
  for (const GeoSample& q : samples) {
    seqs.push_back(q.seq_id);
    if (q.role != Role::Query) continue;
    st.n_queries += 1;
    for (const GeoSample& d : samples) {
      if (d.role != Role::Database || d.city_id != q.city_id) continue;
      if (geo_distance(q.tag, d.tag) < 25.0) {
        covered += 1;
        break;
      }
    }
  }
  std::sort(seqs.begin(), seqs.end());
  seqs.erase(std::unique(seqs.begin(), seqs.end()), seqs.end());
  st.n_sequences = static_cast<int>(seqs.size());
  st.query_coverage = st.n_queries > 0 ? static_cast<double>(covered) / st.n_queries : 1.0;
  return st;
}

}  // namespace fedret
