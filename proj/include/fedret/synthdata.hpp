#pragma once

#include <cstdint>
#include <vector>

#include "fedret/geo.hpp"

namespace fedret {

// Synthetic world: cities far apart on the globe, each a square region with
// a few neighborhoods. Sequences are random walks over a grid of "place"
// cells; a cell carries a fixed latent code that every image taken there
// shares. Feature = signal * place_code + per-image noise + a per-sequence
// condition offset drawn from a fixed low-dimensional subspace.
struct WorldSpec {
  int n_cities = 8;
  std::vector<GeoTag> city_centers;              // auto-placed when empty
  std::vector<std::uint32_t> continent_of;       // auto (4 groups) when empty
  int sequences_per_city = 16;
  std::vector<int> sequences_per_city_override;  // per-city counts (quantity skew)
  int images_per_sequence = 15;
  double place_grid_cell_m = 20.0;
  double city_extent_m = 3000.0;
  int neighborhoods_per_city = 4;
  int feature_dim = 32;
  double place_signal_strength = 1.0;
  double noise_scale = 0.12;
  double condition_scale = 1.5;
  int condition_dims = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct WorldStats {
  int n_samples = 0;
  int n_sequences = 0;
  int n_queries = 0;
  double query_coverage = 0.0;  // fraction of queries with a db positive within 25 m
};

// Deterministic per seed. Throws if fewer than 95% of queries end up with a
// database positive within 25 m.
std::vector<GeoSample> generate_world(const WorldSpec& spec);

WorldStats world_stats(std::span<const GeoSample> samples);

}  // namespace fedret
