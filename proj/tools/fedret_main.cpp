#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedret/config.hpp"
#include "fedret/experiment.hpp"
#include "fedret/io.hpp"
#include "fedret/metrics.hpp"
#include "fedret/rng.hpp"
#include "fedret/synthdata.hpp"

namespace {

using namespace fedret;

// Flag values land here; only flags the user actually passed override the
// config file (flag > config file > default).
struct Overrides {
  std::optional<std::string> label, mode, split, augment_mode, server_opt, local_opt, output_dir;
  std::optional<int> rounds, clients_per_round, eval_interval, i_loc, n_neg, batch_triplets,
      max_local_iters, k_total, n_clients, n_cities, seqs_per_city, imgs_per_seq, feature_dim,
      validation_clients, workers, fedvc_virtual_size, pool_max_seqs, pool_imgs_per_seq,
      clients_per_cluster, aggregation_interval;
  std::optional<long> i_tot;
  std::optional<double> radius, server_lr, server_momentum, local_lr, margin, tau, tau_neg,
      jitter_scale, crop_fraction, noise_scale, condition_scale, signal;
  std::optional<bool> hard_negatives;
  std::optional<std::string> cluster_level;
  std::optional<std::vector<std::uint64_t>> run_seeds;
  std::optional<std::uint64_t> world_seed, partition_seed;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--label", ov.label, "experiment label used in output file names");
  cmd->add_option("--mode", ov.mode, "centralized|federated|hierarchical");
  cmd->add_option("--split", ov.split, "proximity|clustering|random");
  cmd->add_option("--radius", ov.radius, "proximity radius in meters");
  cmd->add_option("--k-total", ov.k_total, "clustering: total K across cities");
  cmd->add_option("--n-clients", ov.n_clients, "random split: number of clients");
  cmd->add_option("--rounds", ov.rounds, "federation rounds / centralized epochs");
  cmd->add_option("--clients-per-round", ov.clients_per_round);
  cmd->add_option("--server-opt", ov.server_opt, "sgd|sgdm|adam|adagrad");
  cmd->add_option("--server-lr", ov.server_lr);
  cmd->add_option("--server-momentum", ov.server_momentum);
  cmd->add_option("--i-loc", ov.i_loc, "fixed local iterations per round");
  cmd->add_option("--i-tot", ov.i_tot, "total iteration budget");
  cmd->add_option("--fedvc-virtual-size", ov.fedvc_virtual_size,
                  "enable FedVC with this virtual client size (0 derives B*I_loc)");
  cmd->add_option("--eval-interval", ov.eval_interval);
  cmd->add_option("--margin", ov.margin);
  cmd->add_option("--n-neg", ov.n_neg);
  cmd->add_option("--tau", ov.tau);
  cmd->add_option("--tau-neg", ov.tau_neg);
  cmd->add_option("--hard-negatives", ov.hard_negatives);
  cmd->add_option("--pool-max-seqs", ov.pool_max_seqs, "restrict mining pool: sequences");
  cmd->add_option("--pool-imgs-per-seq", ov.pool_imgs_per_seq,
                  "restrict mining pool: images per sequence");
  cmd->add_option("--augment-mode", ov.augment_mode, "none|uniform|client_specific");
  cmd->add_option("--jitter-scale", ov.jitter_scale);
  cmd->add_option("--crop-fraction", ov.crop_fraction);
  cmd->add_option("--batch-triplets", ov.batch_triplets);
  cmd->add_option("--local-lr", ov.local_lr);
  cmd->add_option("--local-opt", ov.local_opt, "adam|sgd");
  cmd->add_option("--max-local-iters", ov.max_local_iters);
  cmd->add_option("--cluster-level", ov.cluster_level, "city|continent");
  cmd->add_option("--clients-per-cluster", ov.clients_per_cluster);
  cmd->add_option("--aggregation-interval", ov.aggregation_interval, "rounds between top syncs");
  cmd->add_option("--cities", ov.n_cities);
  cmd->add_option("--seqs-per-city", ov.seqs_per_city);
  cmd->add_option("--imgs-per-seq", ov.imgs_per_seq);
  cmd->add_option("--feature-dim", ov.feature_dim);
  cmd->add_option("--noise-scale", ov.noise_scale);
  cmd->add_option("--condition-scale", ov.condition_scale);
  cmd->add_option("--signal", ov.signal, "place signal strength");
  cmd->add_option("--validation-clients", ov.validation_clients);
  cmd->add_option("--workers", ov.workers, "parallel client cap");
  cmd->add_option("--output-dir", ov.output_dir);
  cmd->add_option("--run-seeds", ov.run_seeds, "per-run seeds (default 0 1 2)");
  cmd->add_option("--world-seed", ov.world_seed);
  cmd->add_option("--partition-seed", ov.partition_seed);
}

void apply(const Overrides& ov, ExperimentConfig& cfg) {
  if (ov.label) cfg.label = *ov.label;
  if (ov.mode) cfg.mode = train_mode_from(*ov.mode);
  if (ov.split) cfg.partition.kind = split_kind_from(*ov.split);
  if (ov.radius) cfg.partition.radius_m = *ov.radius;
  if (ov.k_total) cfg.partition.k_total = *ov.k_total;
  if (ov.n_clients) cfg.partition.n_clients = *ov.n_clients;
  if (ov.rounds) cfg.federation.rounds = *ov.rounds;
  if (ov.clients_per_round) cfg.federation.clients_per_round = *ov.clients_per_round;
  if (ov.server_opt) {
    cfg.federation.server_optimizer = server_optimizer_from(*ov.server_opt);
    auto [lr, mom] = server_optimizer_defaults(cfg.federation.server_optimizer);
    cfg.federation.server_lr = lr;
    cfg.federation.server_momentum = mom;
  }
  if (ov.server_lr) cfg.federation.server_lr = *ov.server_lr;
  if (ov.server_momentum) cfg.federation.server_momentum = *ov.server_momentum;
  if (ov.i_loc) cfg.federation.fixed_local_iterations = *ov.i_loc;
  if (ov.i_tot) cfg.federation.total_iteration_budget = *ov.i_tot;
  if (ov.fedvc_virtual_size) cfg.federation.fedvc = FedVCConfig{*ov.fedvc_virtual_size};
  if (ov.eval_interval) cfg.federation.eval_interval = *ov.eval_interval;
  if (ov.margin) cfg.mining.margin = *ov.margin;
  if (ov.n_neg) cfg.mining.n_neg = *ov.n_neg;
  if (ov.tau) cfg.mining.tau_m = *ov.tau;
  if (ov.tau_neg) cfg.mining.tau_neg_m = *ov.tau_neg;
  if (ov.hard_negatives) cfg.mining.hard_negatives = *ov.hard_negatives;
  if (ov.pool_max_seqs || ov.pool_imgs_per_seq) {
    PoolRestriction pr = cfg.mining.pool_restriction.value_or(PoolRestriction{});
    if (ov.pool_max_seqs) pr.max_sequences = *ov.pool_max_seqs;
    if (ov.pool_imgs_per_seq) pr.images_per_sequence = *ov.pool_imgs_per_seq;
    cfg.mining.pool_restriction = pr;
  }
  if (ov.augment_mode) cfg.augment.mode = augment_mode_from(*ov.augment_mode);
  if (ov.jitter_scale) cfg.augment.jitter_scale = *ov.jitter_scale;
  if (ov.crop_fraction) cfg.augment.crop_fraction = *ov.crop_fraction;
  if (ov.batch_triplets) cfg.local.batch_triplets = *ov.batch_triplets;
  if (ov.local_lr) cfg.local.local_lr = *ov.local_lr;
  if (ov.local_opt) cfg.local.local_optimizer = local_optimizer_from(*ov.local_opt);
  if (ov.max_local_iters) cfg.local.max_local_iterations = *ov.max_local_iters;
  if (ov.cluster_level) cfg.hierarchy.level = cluster_level_from(*ov.cluster_level);
  if (ov.clients_per_cluster) cfg.hierarchy.clients_per_cluster_per_round = *ov.clients_per_cluster;
  if (ov.aggregation_interval) cfg.hierarchy.aggregation_interval = *ov.aggregation_interval;
  if (ov.n_cities) cfg.world.n_cities = *ov.n_cities;
  if (ov.seqs_per_city) cfg.world.sequences_per_city = *ov.seqs_per_city;
  if (ov.imgs_per_seq) cfg.world.images_per_sequence = *ov.imgs_per_seq;
  if (ov.feature_dim) {
    cfg.world.feature_dim = *ov.feature_dim;
    cfg.embedder.input_dim = *ov.feature_dim;
  }
  if (ov.noise_scale) cfg.world.noise_scale = *ov.noise_scale;
  if (ov.condition_scale) cfg.world.condition_scale = *ov.condition_scale;
  if (ov.signal) cfg.world.place_signal_strength = *ov.signal;
  if (ov.validation_clients) cfg.validation_clients = *ov.validation_clients;
  if (ov.workers) cfg.workers = *ov.workers;
  if (ov.output_dir) cfg.output_dir = *ov.output_dir;
  if (ov.run_seeds) cfg.seeds.runs = *ov.run_seeds;
  if (ov.world_seed) cfg.seeds.world = *ov.world_seed;
  if (ov.partition_seed) cfg.seeds.partition = *ov.partition_seed;
}

ExperimentConfig make_config(const std::string& config_path, const Overrides& ov) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  apply(ov, cfg);
  return cfg;
}

int cmd_generate(const ExperimentConfig& cfg, const std::string& out_path) {
  WorldSpec world = cfg.world;
  world.seed = cfg.seeds.world;
  std::vector<GeoSample> samples = generate_world(world);
  write_manifest(out_path, samples);
  WorldStats st = world_stats(samples);
  std::printf("manifest: %s\n", out_path.c_str());
  std::printf("samples: %d  sequences: %d  queries: %d  coverage: %.3f\n", st.n_samples,
              st.n_sequences, st.n_queries, st.query_coverage);
  return 0;
}

int cmd_partition(const ExperimentConfig& cfg, const std::string& manifest_path,
                  const std::string& out_path) {
  ManifestData data = read_manifest(manifest_path);
  PartitionSpec pspec = cfg.partition;
  pspec.seed = cfg.seeds.partition;
  std::vector<ClientManifest> clients = make_partition(data.samples, pspec);
  if (clients.empty()) throw ConfigError("partition produced no valid clients");

  std::vector<std::uint64_t> val_ids;
  if (cfg.validation_clients > 0) {
    if (static_cast<std::size_t>(cfg.validation_clients) >= clients.size()) {
      throw ConfigError("validation_clients must be smaller than the client count");
    }
    val_ids = select_validation_clients(clients, cfg.validation_clients,
                                        seed_of(cfg.seeds.partition, 0x76616c69ull));
  }
  write_partition(out_path, clients, val_ids);

  PartitionStats st = partition_stats(clients, data.samples);
  std::printf("partition: %s\n", out_path.c_str());
  std::printf("%-12s %10s %18s %18s\n", "split", "clients", "seqs/client", "images/client");
  std::printf("%-12s %10d %10.1f +- %5.1f %10.1f +- %5.1f\n", to_string(cfg.partition.kind).c_str(),
              st.n_clients, st.mean_seqs, st.std_seqs, st.mean_images, st.std_images);
  std::printf("validation holdout: %zu clients\n", val_ids.size());
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& manifest_path,
              const std::string& partition_path) {
  cfg.validate();
  ManifestData data = read_manifest(manifest_path);
  std::vector<PartitionRecord> records = read_partition(partition_path);
  if (records.empty()) throw ConfigError("empty partition file " + partition_path);

  std::vector<RunOutcome> outcomes = run_experiment(cfg, data.samples, records);
  std::vector<double> best, final_vals;
  for (const RunOutcome& o : outcomes) {
    std::printf("run %llu: baseline %.4f  final %.4f  best %.4f (round %d)  -> %s\n",
                static_cast<unsigned long long>(o.run_seed), o.baseline_val_r1, o.final_val_r1,
                o.best_val_r1, o.best_round, o.metrics_path.c_str());
    best.push_back(o.best_val_r1);
    final_vals.push_back(o.final_val_r1);
  }
  auto [bm, bs] = mean_std(best);
  auto [fm, fs] = mean_std(final_vals);
  std::printf("%s: final val R@1 %.4f +- %.4f | best val R@1 %.4f +- %.4f over %zu seeds\n",
              cfg.label.c_str(), fm, fs, bm, bs, outcomes.size());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& partition_path, const std::string& split,
             const ExperimentConfig& cfg, const std::string& hits_out) {
  ManifestData data = read_manifest(manifest_path);
  ParamVector params = load_params(checkpoint);

  EmbedderSpec spec = cfg.embedder;
  spec.input_dim = data.feature_dim;
  if (params.values.size() != spec.param_count()) {
    throw ConfigError("checkpoint parameter count does not match the embedder spec");
  }

  std::vector<int> ks = cfg.eval_ks;
  RecallResult res;
  if (partition_path.empty()) {
    EvalSet es;
    for (const GeoSample& s : data.samples) {
      (s.role == Role::Query ? es.queries : es.database).push_back(s);
    }
    es.positive_radius_m = cfg.mining.tau_m;
    res = recall_at_k(params, spec, es, ks, cfg.workers);
  } else {
    // Micro-average of per-client local retrieval over the chosen split.
    std::vector<PartitionRecord> records = read_partition(partition_path);
    bool want_val = split != "train";
    MiningConfig mining = cfg.mining;
    long hits_by_k[64] = {0};
    if (ks.size() > 64) throw ConfigError("too many eval ks");
    long usable_total = 0, excluded_total = 0;
    for (const PartitionRecord& rec : records) {
      if (rec.validation != want_val) continue;
      ClientDataset ds = materialize_client(rec.client, data.samples, mining);
      if (ds.queries.empty() || ds.database.empty()) continue;
      EvalSet es{ds.queries, ds.database, cfg.mining.tau_m};
      RecallResult r = recall_at_k(params, spec, es, ks, cfg.workers);
      for (std::size_t i = 0; i < ks.size(); ++i) {
        hits_by_k[i] += std::lround(r.recall.at(ks[i]) * r.usable_queries);
      }
      usable_total += r.usable_queries;
      excluded_total += r.excluded_queries;
      res.missed_at_max_k.insert(res.missed_at_max_k.end(), r.missed_at_max_k.begin(),
                                 r.missed_at_max_k.end());
      res.excluded_ids.insert(res.excluded_ids.end(), r.excluded_ids.begin(),
                              r.excluded_ids.end());
    }
    if (usable_total == 0) throw ConfigError("no usable queries in the selected split");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      res.recall[ks[i]] = static_cast<double>(hits_by_k[i]) / usable_total;
    }
    res.usable_queries = static_cast<int>(usable_total);
    res.excluded_queries = static_cast<int>(excluded_total);
  }

  std::printf("%-6s %10s\n", "k", "recall");
  for (const auto& [k, r] : res.recall) std::printf("%-6d %10.4f\n", k, r);
  std::printf("usable queries: %d  excluded: %d\n", res.usable_queries, res.excluded_queries);

  if (!hits_out.empty()) {
    std::ofstream out(hits_out);
    if (!out) throw std::runtime_error("cannot open " + hits_out);
    for (std::uint64_t id : res.missed_at_max_k) {
      out << nlohmann::json{{"query_id", id}, {"status", "miss"}}.dump() << '\n';
    }
    for (std::uint64_t id : res.excluded_ids) {
      out << nlohmann::json{{"query_id", id}, {"status", "excluded"}}.dump() << '\n';
    }
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& files, const std::string& metric) {
  if (files.empty()) throw ConfigError("report: no metrics files given");
  // label -> values across runs
  std::map<std::string, std::vector<double>> groups;
  std::map<std::string, std::vector<double>> baselines;
  for (const std::string& f : files) {
    RunSummary s = read_run_summary(f);
    double v = metric == "final" ? s.final_val_r1 : s.best_val_r1;
    groups[s.label].push_back(v);
    baselines[s.label].push_back(s.baseline_val_r1);
  }
  std::printf("%-28s %6s %12s %12s\n", "label", "runs", "val R@1", "baseline");
  for (const auto& [label, vals] : groups) {
    auto [m, s] = mean_std(vals);
    auto [bm, bs] = mean_std(baselines[label]);
    std::printf("%-28s %6zu %6.4f+-%.4f %6.4f+-%.4f\n", label.c_str(), vals.size(), m, s, bm, bs);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated geo-tagged retrieval simulator"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, partition_path, out_path, checkpoint, split = "val";
  std::string hits_out, metric = "best";
  std::vector<std::string> report_files;
  Overrides ov;

  CLI::App* gen = app.add_subcommand("generate", "generate a synthetic manifest");
  gen->add_option("--config", config_path, "JSON config file");
  gen->add_option("--out", out_path, "output manifest path")->required();
  add_override_flags(gen, ov);

  CLI::App* part = app.add_subcommand("partition", "split a manifest into clients");
  part->add_option("--config", config_path);
  part->add_option("--manifest", manifest_path)->required();
  part->add_option("--out", out_path)->required();
  add_override_flags(part, ov);

  CLI::App* train = app.add_subcommand("train", "train per the configured mode");
  train->add_option("--config", config_path);
  train->add_option("--manifest", manifest_path)->required();
  train->add_option("--partition", partition_path)->required();
  add_override_flags(train, ov);

  CLI::App* eval = app.add_subcommand("eval", "recall@k of a checkpoint");
  eval->add_option("--config", config_path);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest_path)->required();
  eval->add_option("--partition", partition_path, "restrict to partition clients");
  eval->add_option("--eval-split", split, "train|val (with --partition)");
  eval->add_option("--hits-out", hits_out, "write per-query miss/excluded records");
  add_override_flags(eval, ov);

  CLI::App* report = app.add_subcommand("report", "summarize metrics files");
  report->add_option("files", report_files, "metrics .jsonl files")->required();
  report->add_option("--metric", metric, "best|final");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(make_config(config_path, ov), out_path);
    if (part->parsed()) return cmd_partition(make_config(config_path, ov), manifest_path, out_path);
    if (train->parsed()) return cmd_train(make_config(config_path, ov), manifest_path,
                                          partition_path);
    if (eval->parsed()) return cmd_eval(checkpoint, manifest_path, partition_path, split,
                                        make_config(config_path, ov), hits_out);
    if (report->parsed()) return cmd_report(report_files, metric);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
