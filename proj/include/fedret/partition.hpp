#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedret/contrastive.hpp"
#include "fedret/geo.hpp"

namespace fedret {

enum class SplitKind : std::uint8_t { Proximity, Clustering, Random };

struct PartitionSpec {
  SplitKind kind = SplitKind::Proximity;
  double radius_m = 2000.0;  // Proximity
  int k_total = 8;           // Clustering
  int n_clients = 8;         // Random
  int min_query_seqs = 2;
  int min_db_seqs = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// Declarative client: which sequences it owns. Materialized into a
// ClientDataset before training.
struct ClientManifest {
  std::uint64_t client_id = 0;
  std::vector<std::uint64_t> query_seq_ids;
  std::vector<std::uint64_t> db_seq_ids;
  std::vector<std::uint32_t> city_ids;
  std::vector<std::uint32_t> continent_ids;
  std::optional<std::uint64_t> founding_sample_id;  // Proximity only
};

// Iterative per-city grouping: a seeded-shuffled unassigned query sequence
// founds a client that absorbs every unassigned sequence with an image
// within `radius_m` of the founding image. Invalid candidates consume their
// sequences without emitting a client.
std::vector<ClientManifest> split_proximity(std::span<const GeoSample> manifest, double radius_m,
                                            std::uint64_t seed, int min_query_seqs = 2,
                                            int min_db_seqs = 2);

// Per-city k-means (k-means++ seeding, Lloyd, max 100 iterations) over
// sequence feature centroids. k_total is allocated across cities
// proportionally to sequence count (largest remainder, min 1, clamped to
// the city's sequence count).
std::vector<ClientManifest> split_clustering(std::span<const GeoSample> manifest, int k_total,
                                             std::uint64_t seed, int min_query_seqs = 2,
                                             int min_db_seqs = 2);

// The k-means core behind split_clustering: Lloyd's algorithm with k-means++
// seeding, at most 100 iterations, convergence when the centroid shift drops
// below 1e-6. Returns the cluster index per point.
std::vector<int> kmeans_assign(const std::vector<std::vector<double>>& points, int k,
                               std::uint64_t seed);

// Every client receives at least one sequence from every city, duplicating a
// city's sequences cyclically when it has fewer than n_clients; surplus
// sequences are dealt round-robin under a seeded shuffle.
std::vector<ClientManifest> split_random(std::span<const GeoSample> manifest, int n_clients,
                                         std::uint64_t seed, int min_query_seqs = 2,
                                         int min_db_seqs = 2);

std::vector<ClientManifest> make_partition(std::span<const GeoSample> manifest,
                                           const PartitionSpec& spec);

struct PartitionStats {
  int n_clients = 0;
  double mean_seqs = 0.0;
  double std_seqs = 0.0;  // population std
  double mean_images = 0.0;
  double std_images = 0.0;
};

PartitionStats partition_stats(std::span<const ClientManifest> clients,
                               std::span<const GeoSample> manifest);

// The validation holdout: n client ids drawn without replacement.
std::vector<std::uint64_t> select_validation_clients(std::span<const ClientManifest> clients,
                                                     int n, std::uint64_t seed);

// Turn a declarative client into its private dataset (queries, database,
// candidate sets).
ClientDataset materialize_client(const ClientManifest& cm, std::span<const GeoSample> manifest,
                                 const MiningConfig& mining);

}  // namespace fedret
