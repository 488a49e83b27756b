#include "fedret/config.hpp"

#include <fstream>

namespace fedret {

namespace {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename E, E (*Parse)(const std::string&)>
void get_enum(const nlohmann::json& j, const char* key, E& out) {
  if (j.contains(key)) out = Parse(j.at(key).get<std::string>());
}

[[noreturn]] void bad_enum(const std::string& what, const std::string& value) {
  throw ConfigError("unknown " + what + ": '" + value + "'");
}

}  // namespace

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Centralized: return "centralized";
    case TrainMode::Federated: return "federated";
    default: return "hierarchical";
  }
}
TrainMode train_mode_from(const std::string& s) {
  if (s == "centralized") return TrainMode::Centralized;
  if (s == "federated") return TrainMode::Federated;
  if (s == "hierarchical") return TrainMode::Hierarchical;
  bad_enum("mode", s);
}

std::string to_string(SplitKind k) {
  switch (k) {
    case SplitKind::Proximity: return "proximity";
    case SplitKind::Clustering: return "clustering";
    default: return "random";
  }
}
SplitKind split_kind_from(const std::string& s) {
  if (s == "proximity") return SplitKind::Proximity;
  if (s == "clustering") return SplitKind::Clustering;
  if (s == "random") return SplitKind::Random;
  bad_enum("split", s);
}

std::string to_string(ServerOptimizer o) {
  switch (o) {
    case ServerOptimizer::SGD: return "sgd";
    case ServerOptimizer::SGDm: return "sgdm";
    case ServerOptimizer::Adam: return "adam";
    default: return "adagrad";
  }
}
ServerOptimizer server_optimizer_from(const std::string& s) {
  if (s == "sgd") return ServerOptimizer::SGD;
  if (s == "sgdm") return ServerOptimizer::SGDm;
  if (s == "adam") return ServerOptimizer::Adam;
  if (s == "adagrad") return ServerOptimizer::AdaGrad;
  bad_enum("server optimizer", s);
}

std::string to_string(LocalOptimizer o) {
  return o == LocalOptimizer::Adam ? "adam" : "sgd";
}
LocalOptimizer local_optimizer_from(const std::string& s) {
  if (s == "adam") return LocalOptimizer::Adam;
  if (s == "sgd") return LocalOptimizer::SGD;
  bad_enum("local optimizer", s);
}

std::string to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::None: return "none";
    case AugmentMode::Uniform: return "uniform";
    default: return "client_specific";
  }
}
AugmentMode augment_mode_from(const std::string& s) {
  if (s == "none") return AugmentMode::None;
  if (s == "uniform") return AugmentMode::Uniform;
  if (s == "client_specific") return AugmentMode::ClientSpecific;
  bad_enum("augment mode", s);
}

std::string to_string(ClusterLevel l) {
  return l == ClusterLevel::City ? "city" : "continent";
}
ClusterLevel cluster_level_from(const std::string& s) {
  if (s == "city") return ClusterLevel::City;
  if (s == "continent") return ClusterLevel::Continent;
  bad_enum("cluster level", s);
}

std::string to_string(Nonlinearity n) {
  return n == Nonlinearity::ReLU ? "relu" : "tanh";
}
Nonlinearity nonlinearity_from(const std::string& s) {
  if (s == "relu") return Nonlinearity::ReLU;
  if (s == "tanh") return Nonlinearity::Tanh;
  bad_enum("nonlinearity", s);
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["label"] = cfg.label;
  j["mode"] = to_string(cfg.mode);

  nlohmann::json w;
  w["n_cities"] = cfg.world.n_cities;
  if (!cfg.world.city_centers.empty()) {
    nlohmann::json centers = nlohmann::json::array();
    for (const GeoTag& t : cfg.world.city_centers) centers.push_back({t.lat, t.lon});
    w["city_centers"] = centers;
  }
  if (!cfg.world.continent_of.empty()) w["continent_of"] = cfg.world.continent_of;
  w["sequences_per_city"] = cfg.world.sequences_per_city;
  if (!cfg.world.sequences_per_city_override.empty()) {
    w["sequences_per_city_override"] = cfg.world.sequences_per_city_override;
  }
  w["images_per_sequence"] = cfg.world.images_per_sequence;
  w["place_grid_cell_m"] = cfg.world.place_grid_cell_m;
  w["city_extent_m"] = cfg.world.city_extent_m;
  w["neighborhoods_per_city"] = cfg.world.neighborhoods_per_city;
  w["feature_dim"] = cfg.world.feature_dim;
  w["place_signal_strength"] = cfg.world.place_signal_strength;
  w["noise_scale"] = cfg.world.noise_scale;
  w["condition_scale"] = cfg.world.condition_scale;
  w["condition_dims"] = cfg.world.condition_dims;
  j["world"] = w;

  nlohmann::json p;
  p["kind"] = to_string(cfg.partition.kind);
  p["radius_m"] = cfg.partition.radius_m;
  p["k_total"] = cfg.partition.k_total;
  p["n_clients"] = cfg.partition.n_clients;
  p["min_query_seqs"] = cfg.partition.min_query_seqs;
  p["min_db_seqs"] = cfg.partition.min_db_seqs;
  j["partition"] = p;

  nlohmann::json e;
  e["input_dim"] = cfg.embedder.input_dim;
  e["hidden_dims"] = cfg.embedder.hidden_dims;
  e["output_dim"] = cfg.embedder.output_dim;
  e["nonlinearity"] = to_string(cfg.embedder.nonlinearity);
  e["l2_normalize_output"] = cfg.embedder.l2_normalize_output;
  j["embedder"] = e;

  nlohmann::json m;
  m["tau_m"] = cfg.mining.tau_m;
  m["tau_neg_m"] = cfg.mining.tau_neg_m;
  m["margin"] = cfg.mining.margin;
  m["n_neg"] = cfg.mining.n_neg;
  m["hard_negatives"] = cfg.mining.hard_negatives;
  if (cfg.mining.pool_restriction) {
    m["pool_restriction"] = {{"max_sequences", cfg.mining.pool_restriction->max_sequences},
                             {"images_per_sequence",
                              cfg.mining.pool_restriction->images_per_sequence}};
  }
  j["mining"] = m;

  nlohmann::json a;
  a["mode"] = to_string(cfg.augment.mode);
  a["jitter_scale"] = cfg.augment.jitter_scale;
  a["crop_fraction"] = cfg.augment.crop_fraction;
  j["augment"] = a;

  nlohmann::json l;
  l["batch_triplets"] = cfg.local.batch_triplets;
  l["local_lr"] = cfg.local.local_lr;
  l["local_optimizer"] = to_string(cfg.local.local_optimizer);
  l["max_local_iterations"] = cfg.local.max_local_iterations;
  j["local"] = l;

  nlohmann::json f;
  f["rounds"] = cfg.federation.rounds;
  f["clients_per_round"] = cfg.federation.clients_per_round;
  f["server_optimizer"] = to_string(cfg.federation.server_optimizer);
  f["server_lr"] = cfg.federation.server_lr;
  f["server_momentum"] = cfg.federation.server_momentum;
  if (cfg.federation.fixed_local_iterations) {
    f["fixed_local_iterations"] = *cfg.federation.fixed_local_iterations;
  }
  if (cfg.federation.total_iteration_budget) {
    f["total_iteration_budget"] = *cfg.federation.total_iteration_budget;
  }
  if (cfg.federation.fedvc) f["fedvc_virtual_size"] = cfg.federation.fedvc->virtual_size;
  f["eval_interval"] = cfg.federation.eval_interval;
  j["federation"] = f;

  nlohmann::json h;
  h["level"] = to_string(cfg.hierarchy.level);
  h["clients_per_cluster_per_round"] = cfg.hierarchy.clients_per_cluster_per_round;
  h["aggregation_interval"] = cfg.hierarchy.aggregation_interval;
  j["hierarchy"] = h;

  j["eval_ks"] = cfg.eval_ks;
  j["validation_clients"] = cfg.validation_clients;
  j["workers"] = cfg.workers;
  j["output_dir"] = cfg.output_dir;

  nlohmann::json s;
  s["world"] = cfg.seeds.world;
  s["partition"] = cfg.seeds.partition;
  s["init"] = cfg.seeds.init;
  s["selection"] = cfg.seeds.selection;
  s["augmentation"] = cfg.seeds.augmentation;
  s["local"] = cfg.seeds.local;
  s["runs"] = cfg.seeds.runs;
  j["seeds"] = s;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    get_if(j, "label", cfg.label);
    get_enum<TrainMode, train_mode_from>(j, "mode", cfg.mode);

    if (j.contains("world")) {
      const auto& w = j.at("world");
      get_if(w, "n_cities", cfg.world.n_cities);
      if (w.contains("city_centers")) {
        cfg.world.city_centers.clear();
        for (const auto& c : w.at("city_centers")) {
          cfg.world.city_centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
        }
      }
      get_if(w, "continent_of", cfg.world.continent_of);
      get_if(w, "sequences_per_city", cfg.world.sequences_per_city);
      get_if(w, "sequences_per_city_override", cfg.world.sequences_per_city_override);
      get_if(w, "images_per_sequence", cfg.world.images_per_sequence);
      get_if(w, "place_grid_cell_m", cfg.world.place_grid_cell_m);
      get_if(w, "city_extent_m", cfg.world.city_extent_m);
      get_if(w, "neighborhoods_per_city", cfg.world.neighborhoods_per_city);
      get_if(w, "feature_dim", cfg.world.feature_dim);
      get_if(w, "place_signal_strength", cfg.world.place_signal_strength);
      get_if(w, "noise_scale", cfg.world.noise_scale);
      get_if(w, "condition_scale", cfg.world.condition_scale);
      get_if(w, "condition_dims", cfg.world.condition_dims);
    }

    if (j.contains("partition")) {
      const auto& p = j.at("partition");
      get_enum<SplitKind, split_kind_from>(p, "kind", cfg.partition.kind);
      get_if(p, "radius_m", cfg.partition.radius_m);
      get_if(p, "k_total", cfg.partition.k_total);
      get_if(p, "n_clients", cfg.partition.n_clients);
      get_if(p, "min_query_seqs", cfg.partition.min_query_seqs);
      get_if(p, "min_db_seqs", cfg.partition.min_db_seqs);
    }

    if (j.contains("embedder")) {
      const auto& e = j.at("embedder");
      get_if(e, "input_dim", cfg.embedder.input_dim);
      get_if(e, "hidden_dims", cfg.embedder.hidden_dims);
      get_if(e, "output_dim", cfg.embedder.output_dim);
      get_enum<Nonlinearity, nonlinearity_from>(e, "nonlinearity", cfg.embedder.nonlinearity);
      get_if(e, "l2_normalize_output", cfg.embedder.l2_normalize_output);
    }

    if (j.contains("mining")) {
      const auto& m = j.at("mining");
      get_if(m, "tau_m", cfg.mining.tau_m);
      get_if(m, "tau_neg_m", cfg.mining.tau_neg_m);
      get_if(m, "margin", cfg.mining.margin);
      get_if(m, "n_neg", cfg.mining.n_neg);
      get_if(m, "hard_negatives", cfg.mining.hard_negatives);
      if (m.contains("pool_restriction")) {
        PoolRestriction pr;
        pr.max_sequences = m.at("pool_restriction").at("max_sequences").get<int>();
        pr.images_per_sequence = m.at("pool_restriction").at("images_per_sequence").get<int>();
        cfg.mining.pool_restriction = pr;
      }
    }

    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      get_enum<AugmentMode, augment_mode_from>(a, "mode", cfg.augment.mode);
      get_if(a, "jitter_scale", cfg.augment.jitter_scale);
      get_if(a, "crop_fraction", cfg.augment.crop_fraction);
    }

    if (j.contains("local")) {
      const auto& l = j.at("local");
      get_if(l, "batch_triplets", cfg.local.batch_triplets);
      get_if(l, "local_lr", cfg.local.local_lr);
      get_enum<LocalOptimizer, local_optimizer_from>(l, "local_optimizer",
                                                     cfg.local.local_optimizer);
      get_if(l, "max_local_iterations", cfg.local.max_local_iterations);
    }

    if (j.contains("federation")) {
      const auto& f = j.at("federation");
      get_if(f, "rounds", cfg.federation.rounds);
      get_if(f, "clients_per_round", cfg.federation.clients_per_round);
      get_enum<ServerOptimizer, server_optimizer_from>(f, "server_optimizer",
                                                       cfg.federation.server_optimizer);
      get_if(f, "server_lr", cfg.federation.server_lr);
      get_if(f, "server_momentum", cfg.federation.server_momentum);
      if (f.contains("fixed_local_iterations")) {
        cfg.federation.fixed_local_iterations = f.at("fixed_local_iterations").get<int>();
      }
      if (f.contains("total_iteration_budget")) {
        cfg.federation.total_iteration_budget = f.at("total_iteration_budget").get<long>();
      }
      if (f.contains("fedvc_virtual_size")) {
        cfg.federation.fedvc = FedVCConfig{f.at("fedvc_virtual_size").get<int>()};
      }
      get_if(f, "eval_interval", cfg.federation.eval_interval);
    }

    if (j.contains("hierarchy")) {
      const auto& h = j.at("hierarchy");
      get_enum<ClusterLevel, cluster_level_from>(h, "level", cfg.hierarchy.level);
      get_if(h, "clients_per_cluster_per_round", cfg.hierarchy.clients_per_cluster_per_round);
      get_if(h, "aggregation_interval", cfg.hierarchy.aggregation_interval);
    }

    get_if(j, "eval_ks", cfg.eval_ks);
    get_if(j, "validation_clients", cfg.validation_clients);
    get_if(j, "workers", cfg.workers);
    get_if(j, "output_dir", cfg.output_dir);

    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      get_if(s, "world", cfg.seeds.world);
      get_if(s, "partition", cfg.seeds.partition);
      get_if(s, "init", cfg.seeds.init);
      get_if(s, "selection", cfg.seeds.selection);
      get_if(s, "augmentation", cfg.seeds.augmentation);
      get_if(s, "local", cfg.seeds.local);
      get_if(s, "runs", cfg.seeds.runs);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  try {
    world.validate();
    partition.validate();
    embedder.validate();
    mining.validate();
    augment.validate();
    local.validate();
    federation.validate();
    hierarchy.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (eval_ks.empty()) throw ConfigError("eval_ks must be non-empty");
  for (int k : eval_ks) {
    if (k < 1) throw ConfigError("eval_ks entries must be >= 1");
  }
  if (validation_clients < 0) throw ConfigError("validation_clients must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (seeds.runs.empty()) throw ConfigError("seeds.runs must be non-empty");
  if (embedder.input_dim != world.feature_dim) {
    throw ConfigError("embedder.input_dim must equal world.feature_dim");
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error in ") + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace fedret
