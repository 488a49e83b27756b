#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedret/contrastive.hpp"
#include "fedret/model.hpp"
#include "fedret/retrieval.hpp"

namespace fedret {

enum class ServerOptimizer : std::uint8_t { SGD, SGDm, Adam, AdaGrad };

struct FedVCConfig {
  int virtual_size = 0;  // queries per virtual client; 0 derives B * I_loc
};

struct FederationConfig {
  int rounds = 60;
  int clients_per_round = 5;
  ServerOptimizer server_optimizer = ServerOptimizer::SGD;
  double server_lr = 1.0;
  double server_momentum = 0.0;
  std::optional<int> fixed_local_iterations;   // I_loc
  std::optional<long> total_iteration_budget;  // I_tot; with I_loc forces T
  std::optional<FedVCConfig> fedvc;
  int eval_interval = 10;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

// Reference hyperparameters per server optimizer: (lr, momentum).
std::pair<double, double> server_optimizer_defaults(ServerOptimizer opt);

struct ClientUpdate {
  std::uint64_t client_id = 0;
  const ParamVector* params = nullptr;
  long n_k = 0;  // weighting: triplet samples processed this round
};

// N_k/N-weighted average of client parameters, summed in ascending
// client-id order. Empty updates leave the current parameters unchanged.
ParamVector fedavg_aggregate(const ParamVector& current, std::span<const ClientUpdate> updates);

// Weighted difference sum_k (N_k/N) (theta - theta_k); the gradient handed
// to the server optimizer. Empty updates give the zero vector.
std::vector<double> pseudo_gradient(const ParamVector& current,
                                    std::span<const ClientUpdate> updates);

struct ServerOptState {
  ServerOptimizer kind = ServerOptimizer::SGD;
  long t = 0;
  std::vector<double> m;  // momentum / first moment
  std::vector<double> v;  // second moment / accumulator

  static ServerOptState make(ServerOptimizer kind, std::size_t p);
};

// theta <- theta - ServerOpt(theta, delta, lr, t). SGD with lr 1 reproduces
// plain parameter averaging. Throws on non-finite delta.
void server_step(ServerOptState& state, ParamVector& theta, std::span<const double> delta,
                 double lr, double momentum);

// Uniform sampling without replacement, deterministic per (seed, t).
std::vector<std::uint64_t> select_clients(std::span<const std::uint64_t> pool, int t, int count,
                                          std::uint64_t seed);

// Weighted sampling without replacement over indices 0..n-1.
std::vector<std::size_t> select_weighted(std::span<const double> weights, int t, int count,
                                         std::uint64_t seed);

// One FedVC shard: a fixed-size view over a real client's queries.
struct VirtualClient {
  std::uint64_t virtual_id = 0;
  std::uint64_t real_client_id = 0;
  int shard_index = 0;
  int shard_count = 1;
  long real_n = 0;                        // originating client's query count
  std::vector<std::size_t> query_indices; // into the real client's queries
  double weight() const { return static_cast<double>(real_n) / shard_count; }
};

// Split clients larger than virtual_size into disjoint shards; pad smaller
// ones by resampling their own queries with replacement. Every virtual
// client ends up with exactly virtual_size queries.
std::vector<VirtualClient> make_virtual_clients(std::span<const ClientDataset> pool,
                                                int virtual_size, std::uint64_t seed);

struct RoundRecord {
  int t = 0;
  std::vector<std::uint64_t> selected;
  std::vector<LocalStats> client_stats;
  std::uint64_t checksum = 0;
  std::optional<double> val_r1;
  bool skipped = false;  // no usable updates this round
};

struct FederationResult {
  ParamVector final_params;
  ParamVector best_params;
  double best_val_r1 = -1.0;
  int best_round = -1;
  std::vector<RoundRecord> records;
};

// Shared knobs for the round loop.
struct RunContext {
  EmbedderSpec embedder;
  MiningConfig mining;
  AugmentSpec augment;
  LocalTrainConfig local;
  std::uint64_t augment_seed = 0;  // root of the augmentation streams
  int workers = 1;
};

// Synchronous FL: select -> local train (parallel) -> aggregate via the
// server optimizer; validation on the held-out clients every eval_interval
// rounds (and on the last round). Deterministic for fixed seeds.
FederationResult run_federation(const FederationConfig& cfg, const RunContext& ctx,
                                std::span<const ClientDataset> train_clients,
                                std::span<const ClientDataset> val_clients,
                                const ParamVector& theta0);

// Per-epoch trainer on a single dataset; the federation loop with one
// client and server lr 1 reduces to it. Optimizer state resets each epoch
// exactly like a client does each round.
FederationResult run_centralized(int epochs, const RunContext& ctx, const ClientDataset& data,
                                 std::span<const ClientDataset> val_clients,
                                 const ParamVector& theta0, int eval_interval);

// Micro-averaged local retrieval over validation clients: each client's
// queries against its own database.
double validation_recall_at_1(const ParamVector& params, const EmbedderSpec& spec,
                              std::span<const ClientDataset> val_clients, int workers);

// Seed derivation shared by the flat and hierarchical loops.
std::uint64_t local_seed_for(std::uint64_t base, int round, std::uint64_t client_id);

}  // namespace fedret
