#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedret/contrastive.hpp"
#include "fedret/federation.hpp"
#include "fedret/hierarchy.hpp"
#include "fedret/model.hpp"
#include "fedret/partition.hpp"
#include "fedret/synthdata.hpp"

namespace fedret {

// Rejected configuration: exits with code 1 at the CLI boundary.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TrainMode : std::uint8_t { Centralized, Federated, Hierarchical };

// Named seed roots. Per-run streams are derived from (root, run_seed), so
// runs differ only where they should.
struct SeedConfig {
  std::uint64_t world = 1;
  std::uint64_t partition = 2;
  std::uint64_t init = 3;
  std::uint64_t selection = 4;
  std::uint64_t augmentation = 5;
  std::uint64_t local = 6;
  std::vector<std::uint64_t> runs = {0, 1, 2};
};

struct ExperimentConfig {
  std::string label = "run";
  TrainMode mode = TrainMode::Federated;
  WorldSpec world;
  PartitionSpec partition;
  EmbedderSpec embedder;
  MiningConfig mining;
  AugmentSpec augment;
  LocalTrainConfig local;
  FederationConfig federation;
  ClusterSpec hierarchy;
  std::vector<int> eval_ks = {1, 5, 10};
  int validation_clients = 12;
  int workers = 1;
  std::string output_dir = "out";
  SeedConfig seeds;

  void validate() const;  // throws ConfigError on any inconsistency
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);

// Enum <-> string helpers shared by config and CLI flags.
std::string to_string(TrainMode m);
std::string to_string(SplitKind k);
std::string to_string(ServerOptimizer o);
std::string to_string(LocalOptimizer o);
std::string to_string(AugmentMode m);
std::string to_string(ClusterLevel l);
std::string to_string(Nonlinearity n);
TrainMode train_mode_from(const std::string& s);
SplitKind split_kind_from(const std::string& s);
ServerOptimizer server_optimizer_from(const std::string& s);
LocalOptimizer local_optimizer_from(const std::string& s);
AugmentMode augment_mode_from(const std::string& s);
ClusterLevel cluster_level_from(const std::string& s);
Nonlinearity nonlinearity_from(const std::string& s);

}  // namespace fedret
