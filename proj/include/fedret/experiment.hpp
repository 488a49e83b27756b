#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedret/config.hpp"
#include "fedret/io.hpp"

namespace fedret {

struct BuiltClients {
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> val;
};

// Materialize partition records into datasets, honoring the split labels.
BuiltClients build_clients(const ExperimentConfig& cfg, std::span<const GeoSample> samples,
                           std::span<const PartitionRecord> records);

// Merge every training client's sequences into one dataset (the
// centralized-mode trainer input). Duplicated sequences are deduplicated.
ClientDataset build_centralized_dataset(const ExperimentConfig& cfg,
                                        std::span<const GeoSample> samples,
                                        std::span<const PartitionRecord> records);

struct RunOutcome {
  std::uint64_t run_seed = 0;
  double baseline_val_r1 = -1.0;  // validation R@1 of the untrained init
  double final_val_r1 = -1.0;
  double best_val_r1 = -1.0;
  int best_round = -1;
  std::string metrics_path;
  std::string final_checkpoint;
  std::string best_checkpoint;
};

// One seed of cmd_train: build clients, train per cfg.mode, stream metrics,
// save checkpoints. Deterministic per (cfg, run_seed).
RunOutcome run_experiment_once(const ExperimentConfig& cfg, std::span<const GeoSample> samples,
                               std::span<const PartitionRecord> records, std::uint64_t run_seed);

// All seeds in cfg.seeds.runs.
std::vector<RunOutcome> run_experiment(const ExperimentConfig& cfg,
                                       std::span<const GeoSample> samples,
                                       std::span<const PartitionRecord> records);

// mean and population std over a sample of values.
std::pair<double, double> mean_std(std::span<const double> values);

}  // namespace fedret
