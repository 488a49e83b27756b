#include "fedret/hierarchy.hpp"

#include <algorithm>
#include <stdexcept>

#include "fedret/parallel.hpp"
#include "fedret/rng.hpp"

namespace fedret {

void ClusterSpec::validate() const {
  if (clients_per_cluster_per_round < 1) {
    throw std::invalid_argument("ClusterSpec: clients_per_cluster_per_round must be >= 1");
  }
  if (aggregation_interval < 1) {
    throw std::invalid_argument("ClusterSpec: aggregation_interval must be >= 1");
  }
}

std::map<std::uint64_t, std::vector<std::size_t>> cluster_assignment(
    std::span<const ClientDataset> clients, ClusterLevel level) {
  std::map<std::uint64_t, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const ClientDataset& c = clients[i];
    const auto& ids = level == ClusterLevel::City ? c.city_ids : c.continent_ids;
    if (ids.empty()) {
      throw std::invalid_argument("cluster_assignment: client " + std::to_string(c.client_id) +
                                  " has no cluster metadata");
    }
    clusters[ids.front()].push_back(i);
  }
  return clusters;
}

HierarchyResult run_hierarchical(const FederationConfig& cfg, const ClusterSpec& cluster_spec,
                                 const RunContext& ctx,
                                 std::span<const ClientDataset> train_clients,
                                 std::span<const ClientDataset> val_clients,
                                 const ParamVector& theta0) {
  cfg.validate();
  cluster_spec.validate();
  if (cfg.fedvc) {
    throw std::invalid_argument("run_hierarchical: FedVC is a flat-federation feature");
  }
  if (train_clients.empty()) throw std::invalid_argument("run_hierarchical: no training clients");

  auto clusters = cluster_assignment(train_clients, cluster_spec.level);

  HierarchyResult res;
  res.n_clusters = static_cast<int>(clusters.size());
  res.final_params = theta0;
  res.best_params = theta0;

  // Per-cluster model and the samples it processed since the last sync.
  std::map<std::uint64_t, ParamVector> theta_c;
  std::map<std::uint64_t, long> processed;
  for (const auto& [cid, members] : clusters) {
    theta_c.emplace(cid, theta0);
    processed.emplace(cid, 0);
  }

  const int fixed_iters = cfg.fixed_local_iterations.value_or(-1);
  bool any_top = false;

  for (int t = 0; t < cfg.rounds; ++t) {
    HierRoundRecord rec;
    rec.t = t;

    for (const auto& [cid, members] : clusters) {
      if (members.empty()) continue;
      std::vector<std::uint64_t> ids;
      ids.reserve(members.size());
      for (std::size_t mi : members) ids.push_back(train_clients[mi].client_id);
      std::vector<std::uint64_t> picked = select_clients(
          ids, t, cluster_spec.clients_per_cluster_per_round, seed_of(cfg.seed, cid));

      ClusterRoundStats crs;
      crs.cluster_id = cid;
      crs.selected = picked;

      std::vector<const ClientDataset*> sel;
      for (std::uint64_t id : picked) {
        for (std::size_t mi : members) {
          if (train_clients[mi].client_id == id) {
            sel.push_back(&train_clients[mi]);
            break;
          }
        }
      }

      std::vector<LocalTrainResult> results(sel.size());
      ParamVector& model = theta_c.at(cid);
      parallel_over(sel.size(), ctx.workers, [&](std::size_t i) {
        LocalRunConfig run;
        run.mining = ctx.mining;
        run.augment = ctx.augment;
        run.train = ctx.local;
        run.train.seed = local_seed_for(ctx.local.seed, t, sel[i]->client_id);
        run.fixed_iterations = fixed_iters;
        run.augment_client_seed = seed_of(ctx.augment_seed, sel[i]->client_id);
        run.augment_stream_seed =
            seed_of(ctx.augment_seed, sel[i]->client_id, static_cast<std::uint64_t>(t));
        results[i] = local_train(model, ctx.embedder, *sel[i], run);
      });

      std::vector<ClientUpdate> updates;
      for (const LocalTrainResult& r : results) {
        crs.client_stats.push_back(r.stats);
        if (r.stats.samples_processed > 0) {
          updates.push_back({r.stats.client_id, &r.params, r.stats.samples_processed});
          processed.at(cid) += r.stats.samples_processed;
        }
      }
      model = fedavg_aggregate(model, updates);
      crs.checksum = param_checksum(model);
      rec.clusters.push_back(std::move(crs));
    }

    bool sync = ((t + 1) % cluster_spec.aggregation_interval == 0) || (t + 1 == cfg.rounds && !any_top);
    if (sync) {
      long total = 0;
      for (const auto& [cid, n] : processed) total += n;
      if (total > 0) {
        // Weighted mean of cluster models, ascending cluster id.
        std::vector<ClientUpdate> cluster_updates;
        for (const auto& [cid, model] : theta_c) {
          if (processed.at(cid) > 0) {
            cluster_updates.push_back({cid, &model, processed.at(cid)});
          }
        }
        res.final_params = fedavg_aggregate(res.final_params, cluster_updates);
        for (auto& [cid, model] : theta_c) model = res.final_params;  // broadcast-replace
        for (auto& [cid, n] : processed) n = 0;
        any_top = true;
        rec.top_aggregated = true;
        rec.top_checksum = param_checksum(res.final_params);
      }
    }

    if (rec.top_aggregated && !val_clients.empty()) {
      double r1 = validation_recall_at_1(res.final_params, ctx.embedder, val_clients, ctx.workers);
      rec.val_r1 = r1;
      if (r1 > res.best_val_r1) {
        res.best_val_r1 = r1;
        res.best_params = res.final_params;
        res.best_round = t;
      }
    }
    res.records.push_back(std::move(rec));
  }

  if (res.best_round < 0) res.best_params = res.final_params;
  return res;
}

}  // namespace fedret
