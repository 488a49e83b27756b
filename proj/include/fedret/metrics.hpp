#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedret/config.hpp"
#include "fedret/federation.hpp"
#include "fedret/hierarchy.hpp"
#include "fedret/retrieval.hpp"

namespace fedret {

// Append-only line-delimited metrics stream; one JSON record per line,
// parseable mid-run. Contains no wall-clock data, so identical runs produce
// identical files.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);

  void write_header(const ExperimentConfig& cfg, std::uint64_t run_seed, int n_train_clients,
                    int n_val_clients, double baseline_val_r1);
  void write_round(const RoundRecord& rec);
  void write_hier_round(const HierRoundRecord& rec);
  void write_final(std::uint64_t run_seed, double final_val_r1, double best_val_r1,
                   int best_round);
  void write_recall_table(const RecallResult& result);

 private:
  void emit(const nlohmann::json& j);
  std::ofstream out_;
};

std::string checksum_hex(std::uint64_t checksum);
nlohmann::json stats_to_json(const LocalStats& s);

// Reader side for `report`: one row per metrics file.
struct RunSummary {
  std::string label;
  std::uint64_t run_seed = 0;
  double final_val_r1 = -1.0;
  double best_val_r1 = -1.0;
  double baseline_val_r1 = -1.0;
  int best_round = -1;
};

RunSummary read_run_summary(const std::string& metrics_path);

}  // namespace fedret
