#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedret/geo.hpp"
#include "fedret/model.hpp"

namespace fedret {

// One mined training unit: a query, its best positive and n_neg hard
// negatives.
struct Triplet {
  std::uint64_t query_id = 0;
  std::uint64_t positive_id = 0;
  std::vector<std::uint64_t> negative_ids;
};

// Restrict a mining pool to the N sequences nearest a center, sampling a
// fixed number of images from each.
struct PoolRestriction {
  int max_sequences = 1;
  int images_per_sequence = 1;
};

struct MiningConfig {
  double tau_m = 25.0;
  double tau_neg_m = 25.0;
  double margin = 0.1;
  int n_neg = 5;
  bool hard_negatives = true;  // false: negatives drawn uniformly at random
  std::optional<PoolRestriction> pool_restriction;
  std::uint64_t pool_seed = 0;

  void validate() const;
};

enum class AugmentMode : std::uint8_t { None, Uniform, ClientSpecific };

// Feature-space augmentation. Uniform: per-sample multiplicative jitter
// applied with probability 0.5. ClientSpecific: one fixed jitter vector per
// client applied to every sample. crop_fraction < 1 zeroes a contiguous
// random block of dimensions per sample.
struct AugmentSpec {
  AugmentMode mode = AugmentMode::None;
  double jitter_scale = 0.0;
  double crop_fraction = 1.0;

  void validate() const;
};

enum class LocalOptimizer : std::uint8_t { Adam, SGD };

struct LocalTrainConfig {
  int batch_triplets = 2;
  double local_lr = 1e-5;
  LocalOptimizer local_optimizer = LocalOptimizer::Adam;
  int max_local_iterations = 2500;
  std::uint64_t seed = 0;

  void validate() const;
};

// A client's private data: usable queries, its database (the mining pool),
// and precomputed geographic candidate sets. local_train sees nothing else.
struct ClientDataset {
  std::uint64_t client_id = 0;
  std::vector<GeoSample> queries;          // queries with >= 1 geographic positive
  std::vector<GeoSample> database;
  std::vector<CandidateSets> candidates;   // parallel to queries
  std::vector<std::uint32_t> city_ids;
  std::vector<std::uint32_t> continent_ids;
  int dropped_queries = 0;                 // excluded at construction (no positive)

  std::size_t image_count() const { return queries.size() + database.size(); }

  // Computes candidate sets (through the optional per-query pool
  // restriction) and drops queries with no geographic positive.
  static ClientDataset build(std::uint64_t client_id, std::vector<GeoSample> queries,
                             std::vector<GeoSample> database, const MiningConfig& mining);
};

// Eq.-style mining over explicit candidate lists. Ties break toward the
// smaller sample id. `positives`/`negatives` are the candidate samples.
std::uint64_t mine_positive(const ParamVector& params, const EmbedderSpec& spec,
                            const GeoSample& query, std::span<const GeoSample> positives);

// The n_neg candidates closest to the query in embedding space, ascending by
// (distance, id). Returns fewer when the pool is short; sets *shortfall.
std::vector<std::uint64_t> mine_negatives(const ParamVector& params, const EmbedderSpec& spec,
                                          const GeoSample& query,
                                          std::span<const GeoSample> negatives, int n_neg,
                                          bool* shortfall = nullptr);

// max(d_qp^2 - d_qn^2 + margin, 0)
double triplet_loss(double d_qp, double d_qn, double margin);

// A batch of mined triplets laid out row-wise in x: for each query in order,
// its row, the positive's row, then negatives_per_query[i] negative rows.
struct TripletBatch {
  Matrix x;
  std::vector<int> negatives_per_query;
};

// Batch triplet objective (per-negative hinge terms summed, divided by
// `divisor`) and its exact parameter gradient through the embedder.
std::pair<double, ParamVector> triplet_objective_gradient(const ParamVector& params,
                                                          const EmbedderSpec& spec,
                                                          const TripletBatch& batch,
                                                          double margin, double divisor);

// Feature-space augmentation; see AugmentSpec.
std::vector<double> apply_augmentation(std::span<const double> x, const AugmentSpec& spec,
                                       std::uint64_t client_seed, std::uint64_t sample_seed);

// The N_seq sequences whose centroid is nearest to `center`, with
// images_per_sequence samples drawn uniformly from each.
std::vector<GeoSample> restrict_mining_pool(std::span<const GeoSample> db, const GeoTag& center,
                                            int max_sequences, int images_per_sequence,
                                            std::uint64_t pool_seed);

struct LocalStats {
  std::uint64_t client_id = 0;
  int iterations = 0;
  long samples_processed = 0;  // N_k: triplets consumed (iterations * batch)
  double mean_loss = 0.0;
  int usable_queries = 0;
  int dropped_queries = 0;
  int shortfall_events = 0;  // negative pools smaller than n_neg
};

struct LocalRunConfig {
  MiningConfig mining;
  AugmentSpec augment;
  LocalTrainConfig train;
  int fixed_iterations = -1;            // >= 0 overrides the epoch rule (I_loc)
  std::uint64_t augment_client_seed = 0;
  std::uint64_t augment_stream_seed = 0;
};

struct LocalTrainResult {
  ParamVector params;
  LocalStats stats;
};

// One round of client-local training: mine with the current parameters at
// every batch, optimize the triplet objective. Deterministic for fixed
// (start, dataset, config).
LocalTrainResult local_train(const ParamVector& start, const EmbedderSpec& spec,
                             const ClientDataset& client, const LocalRunConfig& cfg);

}  // namespace fedret
