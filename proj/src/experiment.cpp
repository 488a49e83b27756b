#include "fedret/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "fedret/metrics.hpp"
#include "fedret/parallel.hpp"
#include "fedret/rng.hpp"

namespace fedret {

namespace {

MiningConfig mining_for(const ExperimentConfig& cfg) {
  MiningConfig m = cfg.mining;
  m.pool_seed = seed_of(cfg.seeds.partition, 0x706f6f6cull);
  return m;
}

}  // namespace

BuiltClients build_clients(const ExperimentConfig& cfg, std::span<const GeoSample> samples,
                           std::span<const PartitionRecord> records) {
  MiningConfig mining = mining_for(cfg);
  BuiltClients out;
  std::vector<ClientDataset> all(records.size());
  parallel_over(records.size(), cfg.workers, [&](std::size_t i) {
    all[i] = materialize_client(records[i].client, samples, mining);
  });
  for (std::size_t i = 0; i < records.size(); ++i) {
    (records[i].validation ? out.val : out.train).push_back(std::move(all[i]));
  }
  auto by_id = [](const ClientDataset& a, const ClientDataset& b) {
    return a.client_id < b.client_id;
  };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.val.begin(), out.val.end(), by_id);
  return out;
}

ClientDataset build_centralized_dataset(const ExperimentConfig& cfg,
                                        std::span<const GeoSample> samples,
                                        std::span<const PartitionRecord> records) {
  std::set<std::uint64_t> q_seqs, d_seqs;
  for (const PartitionRecord& rec : records) {
    if (rec.validation) continue;
    q_seqs.insert(rec.client.query_seq_ids.begin(), rec.client.query_seq_ids.end());
    d_seqs.insert(rec.client.db_seq_ids.begin(), rec.client.db_seq_ids.end());
  }
  std::vector<GeoSample> queries, database;
  for (const GeoSample& s : samples) {
    if (q_seqs.count(s.seq_id)) queries.push_back(s);
    if (d_seqs.count(s.seq_id)) database.push_back(s);
  }
  return ClientDataset::build(0, std::move(queries), std::move(database), mining_for(cfg));
}

RunOutcome run_experiment_once(const ExperimentConfig& cfg, std::span<const GeoSample> samples,
                               std::span<const PartitionRecord> records, std::uint64_t run_seed) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);

  BuiltClients clients = build_clients(cfg, samples, records);
  if (clients.train.empty()) throw ConfigError("no training clients in partition");

  RunContext ctx;
  ctx.embedder = cfg.embedder;
  ctx.mining = mining_for(cfg);
  ctx.augment = cfg.augment;
  ctx.local = cfg.local;
  ctx.local.seed = seed_of(cfg.seeds.local, run_seed);
  ctx.augment_seed = seed_of(cfg.seeds.augmentation, run_seed);
  ctx.workers = cfg.workers;

  FederationConfig fed = cfg.federation;
  fed.seed = seed_of(cfg.seeds.selection, run_seed);

  ParamVector theta0 = init_params(cfg.embedder, seed_of(cfg.seeds.init, run_seed));

  std::string stem = cfg.output_dir + "/" + cfg.label + "_run" + std::to_string(run_seed);
  RunOutcome outcome;
  outcome.run_seed = run_seed;
  outcome.metrics_path = stem + ".metrics.jsonl";
  outcome.final_checkpoint = stem + ".final.ckpt";
  outcome.best_checkpoint = stem + ".best.ckpt";

  MetricsWriter metrics(outcome.metrics_path);
  double baseline = -1.0;
  if (!clients.val.empty()) {
    baseline = validation_recall_at_1(theta0, cfg.embedder, clients.val, cfg.workers);
  }
  outcome.baseline_val_r1 = baseline;
  metrics.write_header(cfg, run_seed, static_cast<int>(clients.train.size()),
                       static_cast<int>(clients.val.size()), baseline);

  ParamVector final_params, best_params;
  double best_val = -1.0;
  int best_round = -1;
  double final_val = -1.0;

  if (cfg.mode == TrainMode::Hierarchical) {
    HierarchyResult res =
        run_hierarchical(fed, cfg.hierarchy, ctx, clients.train, clients.val, theta0);
    for (const HierRoundRecord& rec : res.records) metrics.write_hier_round(rec);
    final_params = std::move(res.final_params);
    best_params = std::move(res.best_params);
    best_val = res.best_val_r1;
    best_round = res.best_round;
  } else {
    FederationResult res;
    if (cfg.mode == TrainMode::Centralized) {
      ClientDataset merged = build_centralized_dataset(cfg, samples, records);
      res = run_centralized(fed.rounds, ctx, merged, clients.val, theta0, fed.eval_interval);
    } else {
      res = run_federation(fed, ctx, clients.train, clients.val, theta0);
    }
    for (const RoundRecord& rec : res.records) metrics.write_round(rec);
    final_params = std::move(res.final_params);
    best_params = std::move(res.best_params);
    best_val = res.best_val_r1;
    best_round = res.best_round;
  }

  if (!clients.val.empty()) {
    final_val = validation_recall_at_1(final_params, cfg.embedder, clients.val, cfg.workers);
  }
  metrics.write_final(run_seed, final_val, best_val, best_round);
  save_params(outcome.final_checkpoint, final_params);
  save_params(outcome.best_checkpoint, best_params);

  outcome.final_val_r1 = final_val;
  outcome.best_val_r1 = best_val;
  outcome.best_round = best_round;
  return outcome;
}

std::vector<RunOutcome> run_experiment(const ExperimentConfig& cfg,
                                       std::span<const GeoSample> samples,
                                       std::span<const PartitionRecord> records) {
  std::vector<RunOutcome> outcomes;
  for (std::uint64_t run_seed : cfg.seeds.runs) {
    outcomes.push_back(run_experiment_once(cfg, samples, records, run_seed));
  }
  return outcomes;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

}  // namespace fedret
