#include "fedret/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace fedret {

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
  if (!out_) throw std::runtime_error("MetricsWriter: cannot open " + path);
}

void MetricsWriter::emit(const nlohmann::json& j) {
  out_ << j.dump() << '\n';
  out_.flush();
}

std::string checksum_hex(std::uint64_t checksum) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(checksum));
  return buf;
}

nlohmann::json stats_to_json(const LocalStats& s) {
  return {{"id", s.client_id},
          {"iters", s.iterations},
          {"n", s.samples_processed},
          {"loss", s.mean_loss},
          {"usable", s.usable_queries},
          {"dropped", s.dropped_queries},
          {"shortfall", s.shortfall_events}};
}

void MetricsWriter::write_header(const ExperimentConfig& cfg, std::uint64_t run_seed,
                                 int n_train_clients, int n_val_clients,
                                 double baseline_val_r1) {
  nlohmann::json j;
  j["type"] = "header";
  j["label"] = cfg.label;
  j["mode"] = to_string(cfg.mode);
  j["run_seed"] = run_seed;
  j["n_train_clients"] = n_train_clients;
  j["n_val_clients"] = n_val_clients;
  j["baseline_val_r1"] = baseline_val_r1;
  j["config"] = to_json(cfg);
  emit(j);
}

void MetricsWriter::write_round(const RoundRecord& rec) {
  nlohmann::json j;
  j["type"] = "round";
  j["t"] = rec.t;
  j["selected"] = rec.selected;
  nlohmann::json clients = nlohmann::json::array();
  for (const LocalStats& s : rec.client_stats) clients.push_back(stats_to_json(s));
  j["clients"] = clients;
  j["checksum"] = checksum_hex(rec.checksum);
  if (rec.skipped) j["skipped"] = true;
  if (rec.val_r1) j["val_r1"] = *rec.val_r1;
  emit(j);
}

void MetricsWriter::write_hier_round(const HierRoundRecord& rec) {
  nlohmann::json j;
  j["type"] = "hier_round";
  j["t"] = rec.t;
  nlohmann::json clusters = nlohmann::json::array();
  for (const ClusterRoundStats& c : rec.clusters) {
    nlohmann::json cj;
    cj["cluster_id"] = c.cluster_id;
    cj["selected"] = c.selected;
    nlohmann::json clients = nlohmann::json::array();
    for (const LocalStats& s : c.client_stats) clients.push_back(stats_to_json(s));
    cj["clients"] = clients;
    cj["checksum"] = checksum_hex(c.checksum);
    clusters.push_back(cj);
  }
  j["clusters"] = clusters;
  j["top_aggregated"] = rec.top_aggregated;
  if (rec.top_checksum) j["top_checksum"] = checksum_hex(*rec.top_checksum);
  if (rec.val_r1) j["val_r1"] = *rec.val_r1;
  emit(j);
}

void MetricsWriter::write_final(std::uint64_t run_seed, double final_val_r1, double best_val_r1,
                                int best_round) {
  nlohmann::json j;
  j["type"] = "final";
  j["run_seed"] = run_seed;
  j["final_val_r1"] = final_val_r1;
  j["best_val_r1"] = best_val_r1;
  j["best_round"] = best_round;
  emit(j);
}

void MetricsWriter::write_recall_table(const RecallResult& result) {
  nlohmann::json j;
  j["type"] = "recall";
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [k, r] : result.recall) table[std::to_string(k)] = r;
  j["recall"] = table;
  j["usable_queries"] = result.usable_queries;
  j["excluded_queries"] = result.excluded_queries;
  emit(j);
}

RunSummary read_run_summary(const std::string& metrics_path) {
  std::ifstream in(metrics_path);
  if (!in) throw std::runtime_error("read_run_summary: cannot open " + metrics_path);
  RunSummary sum;
  bool have_header = false, have_final = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    std::string type = j.value("type", "");
    if (type == "header") {
      sum.label = j.value("label", "");
      sum.run_seed = j.value("run_seed", 0ull);
      sum.baseline_val_r1 = j.value("baseline_val_r1", -1.0);
      have_header = true;
    } else if (type == "final") {
      sum.final_val_r1 = j.value("final_val_r1", -1.0);
      sum.best_val_r1 = j.value("best_val_r1", -1.0);
      sum.best_round = j.value("best_round", -1);
      have_final = true;
    }
  }
  if (!have_header || !have_final) {
    throw std::runtime_error("read_run_summary: incomplete metrics file " + metrics_path);
  }
  return sum;
}

}  // namespace fedret
