#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedret/federation.hpp"

namespace fedret {

enum class ClusterLevel : std::uint8_t { City, Continent };

struct ClusterSpec {
  ClusterLevel level = ClusterLevel::Continent;
  int clients_per_cluster_per_round = 5;
  int aggregation_interval = 15;  // T_s: rounds between top-level syncs

  void validate() const;
};

struct ClusterRoundStats {
  std::uint64_t cluster_id = 0;
  std::vector<std::uint64_t> selected;
  std::vector<LocalStats> client_stats;
  std::uint64_t checksum = 0;  // cluster model after this round
};

struct HierRoundRecord {
  int t = 0;
  std::vector<ClusterRoundStats> clusters;
  bool top_aggregated = false;
  std::optional<std::uint64_t> top_checksum;
  std::optional<double> val_r1;
};

struct HierarchyResult {
  ParamVector final_params;  // last top-level aggregate
  ParamVector best_params;
  double best_val_r1 = -1.0;
  int best_round = -1;
  int n_clusters = 0;
  std::vector<HierRoundRecord> records;
};

// Group training clients by city or continent membership.
std::map<std::uint64_t, std::vector<std::size_t>> cluster_assignment(
    std::span<const ClientDataset> clients, ClusterLevel level);

// Two-tier FL: every round each cluster trains and aggregates its own model;
// every aggregation_interval rounds the top server averages the cluster
// models, weighted by samples processed since the previous sync, and
// broadcasts the result back to every cluster.
HierarchyResult run_hierarchical(const FederationConfig& cfg, const ClusterSpec& cluster_spec,
                                 const RunContext& ctx,
                                 std::span<const ClientDataset> train_clients,
                                 std::span<const ClientDataset> val_clients,
                                 const ParamVector& theta0);

}  // namespace fedret
