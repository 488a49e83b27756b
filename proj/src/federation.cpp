#include "fedret/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "fedret/parallel.hpp"
#include "fedret/rng.hpp"

namespace fedret {

void FederationConfig::validate() const {
  if (rounds < 0) throw std::invalid_argument("FederationConfig: rounds must be >= 0");
  if (clients_per_round < 1) {
    throw std::invalid_argument("FederationConfig: clients_per_round must be >= 1");
  }
  if (!(server_lr > 0.0)) throw std::invalid_argument("FederationConfig: server_lr must be > 0");
  if (eval_interval < 1) throw std::invalid_argument("FederationConfig: eval_interval must be >= 1");
  if (fixed_local_iterations && *fixed_local_iterations < 0) {
    throw std::invalid_argument("FederationConfig: fixed local iterations must be >= 0");
  }
  if (total_iteration_budget && fixed_local_iterations) {
    long expect = static_cast<long>(*fixed_local_iterations) * rounds * clients_per_round;
    if (expect != *total_iteration_budget) {
      throw std::invalid_argument(
          "FederationConfig: rounds * clients_per_round * I_loc must equal the iteration budget");
    }
  }
  if (fedvc && !fixed_local_iterations) {
    throw std::invalid_argument("FederationConfig: FedVC requires fixed local iterations");
  }
  if (fedvc && fedvc->virtual_size < 0) {
    throw std::invalid_argument("FederationConfig: virtual_size must be >= 0");
  }
}

std::pair<double, double> server_optimizer_defaults(ServerOptimizer opt) {
  switch (opt) {
    case ServerOptimizer::SGD: return {1.0, 0.0};
    case ServerOptimizer::SGDm: return {0.1, 0.9};
    case ServerOptimizer::Adam: return {0.1, 0.9};
    case ServerOptimizer::AdaGrad:
    default: return {0.01, 0.9};
  }
}

namespace {

std::vector<ClientUpdate> canonical(std::span<const ClientUpdate> updates) {
  std::vector<ClientUpdate> sorted(updates.begin(), updates.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  for (const ClientUpdate& u : sorted) {
    if (u.n_k <= 0) throw std::invalid_argument("aggregate: client weight must be > 0");
    if (u.params == nullptr || u.params->values.size() == 0) {
      throw std::invalid_argument("aggregate: missing client parameters");
    }
    if (u.params->values.size() != sorted.front().params->values.size()) {
      throw std::invalid_argument("aggregate: parameter length mismatch");
    }
  }
  return sorted;
}

}  // namespace

ParamVector fedavg_aggregate(const ParamVector& current, std::span<const ClientUpdate> updates) {
  if (updates.empty()) return current;
  std::vector<ClientUpdate> sorted = canonical(updates);
  double total = 0.0;
  for (const ClientUpdate& u : sorted) total += static_cast<double>(u.n_k);

  ParamVector out;
  out.layout = sorted.front().params->layout.empty() ? current.layout
                                                     : sorted.front().params->layout;
  out.values.assign(sorted.front().params->values.size(), 0.0);
  for (const ClientUpdate& u : sorted) {
    double w = static_cast<double>(u.n_k) / total;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += w * u.params->values[i];
  }
  return out;
}

std::vector<double> pseudo_gradient(const ParamVector& current,
                                    std::span<const ClientUpdate> updates) {
  std::vector<double> delta(current.values.size(), 0.0);
  if (updates.empty()) return delta;
  std::vector<ClientUpdate> sorted = canonical(updates);
  double total = 0.0;
  for (const ClientUpdate& u : sorted) total += static_cast<double>(u.n_k);
  for (const ClientUpdate& u : sorted) {
    if (u.params->values.size() != current.values.size()) {
      throw std::invalid_argument("pseudo_gradient: parameter length mismatch");
    }
    double w = static_cast<double>(u.n_k) / total;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] += w * (current.values[i] - u.params->values[i]);
    }
  }
  return delta;
}

ServerOptState ServerOptState::make(ServerOptimizer kind, std::size_t p) {
  ServerOptState st;
  st.kind = kind;
  if (kind == ServerOptimizer::SGDm || kind == ServerOptimizer::Adam) st.m.assign(p, 0.0);
  if (kind == ServerOptimizer::Adam || kind == ServerOptimizer::AdaGrad) st.v.assign(p, 0.0);
  return st;
}

void server_step(ServerOptState& state, ParamVector& theta, std::span<const double> delta,
                 double lr, double momentum) {
  if (delta.size() != theta.values.size()) {
    throw std::invalid_argument("server_step: delta length mismatch");
  }
  for (double d : delta) {
    if (!std::isfinite(d)) {
      throw std::runtime_error("server_step: non-finite pseudo-gradient");
    }
  }
  constexpr double eps = 1e-8;
  switch (state.kind) {
    case ServerOptimizer::SGD:
      for (std::size_t i = 0; i < delta.size(); ++i) theta.values[i] -= lr * delta[i];
      break;
    case ServerOptimizer::SGDm:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        state.m[i] = momentum * state.m[i] + delta[i];
        theta.values[i] -= lr * state.m[i];
      }
      break;
    case ServerOptimizer::Adam: {
      constexpr double b2 = 0.999;
      state.t += 1;
      double c1 = 1.0 - std::pow(momentum, static_cast<double>(state.t));
      double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
      for (std::size_t i = 0; i < delta.size(); ++i) {
        state.m[i] = momentum * state.m[i] + (1.0 - momentum) * delta[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * delta[i] * delta[i];
        double mhat = state.m[i] / c1;
        double vhat = state.v[i] / c2;
        theta.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      break;
    }
    case ServerOptimizer::AdaGrad:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        state.v[i] += delta[i] * delta[i];
        theta.values[i] -= lr * delta[i] / (std::sqrt(state.v[i]) + eps);
      }
      break;
  }
}

std::vector<std::uint64_t> select_clients(std::span<const std::uint64_t> pool, int t, int count,
                                          std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("select_clients: empty pool");
  std::vector<std::uint64_t> ids(pool.begin(), pool.end());
  std::sort(ids.begin(), ids.end());
  std::size_t take = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(count));
  Rng rng(seed_of(seed, 0x73656c63ull, static_cast<std::uint64_t>(t)));
  for (std::size_t k = 0; k < take; ++k) {
    std::size_t j = k + static_cast<std::size_t>(rng.below(ids.size() - k));
    std::swap(ids[k], ids[j]);
  }
  ids.resize(take);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::size_t> select_weighted(std::span<const double> weights, int t, int count,
                                         std::uint64_t seed) {
  if (weights.empty()) throw std::invalid_argument("select_weighted: empty pool");
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("select_weighted: weights must be > 0");
  }
  std::vector<std::size_t> remaining(weights.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  Rng rng(seed_of(seed, 0x73656c77ull, static_cast<std::uint64_t>(t)));

  std::vector<std::size_t> picked;
  std::size_t take = std::min<std::size_t>(weights.size(), static_cast<std::size_t>(count));
  for (std::size_t k = 0; k < take; ++k) {
    double total = 0.0;
    for (std::size_t idx : remaining) total += weights[idx];
    double u = rng.next_double() * total;
    double acc = 0.0;
    std::size_t chosen = remaining.size() - 1;
    for (std::size_t pos = 0; pos < remaining.size(); ++pos) {
      acc += weights[remaining[pos]];
      if (u < acc) {
        chosen = pos;
        break;
      }
    }
    picked.push_back(remaining[chosen]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<VirtualClient> make_virtual_clients(std::span<const ClientDataset> pool,
                                                int virtual_size, std::uint64_t seed) {
  if (virtual_size < 1) throw std::invalid_argument("make_virtual_clients: virtual_size >= 1");

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pool[a].client_id < pool[b].client_id;
  });

  std::vector<VirtualClient> out;
  std::uint64_t next_id = 0;
  const auto vs = static_cast<std::size_t>(virtual_size);
  for (std::size_t pi : order) {
    const ClientDataset& real = pool[pi];
    const std::size_t n = real.queries.size();
    if (n == 0) continue;
    Rng rng(seed_of(seed, 0x76697274ull, real.client_id));

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);

    int shards = n > vs ? static_cast<int>((n + vs - 1) / vs) : 1;
    for (int s = 0; s < shards; ++s) {
      VirtualClient vc;
      vc.virtual_id = next_id++;
      vc.real_client_id = real.client_id;
      vc.shard_index = s;
      vc.shard_count = shards;
      vc.real_n = static_cast<long>(n);
      std::size_t lo = static_cast<std::size_t>(s) * vs;
      std::size_t hi = std::min(lo + vs, n);
      vc.query_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                              idx.begin() + static_cast<std::ptrdiff_t>(hi));
      // Pad to exactly virtual_size by resampling the shard's own queries.
      std::size_t own = vc.query_indices.size();
      while (vc.query_indices.size() < vs) {
        vc.query_indices.push_back(vc.query_indices[rng.below(own)]);
      }
      out.push_back(std::move(vc));
    }
  }
  return out;
}

std::uint64_t local_seed_for(std::uint64_t base, int round, std::uint64_t client_id) {
  return seed_of(base, static_cast<std::uint64_t>(round), client_id);
}

double validation_recall_at_1(const ParamVector& params, const EmbedderSpec& spec,
                              std::span<const ClientDataset> val_clients, int workers) {
  long hits_num = 0;
  long total = 0;
  std::vector<double> recalls(val_clients.size(), -1.0);
  std::vector<int> usable(val_clients.size(), 0);
  parallel_over(val_clients.size(), workers, [&](std::size_t i) {
    const ClientDataset& c = val_clients[i];
    if (c.queries.empty() || c.database.empty()) return;
    EvalSet es{c.queries, c.database, 25.0};
    int ks[] = {1};
    RecallResult r = recall_at_k(params, spec, es, ks, 1);
    recalls[i] = r.recall.at(1);
    usable[i] = r.usable_queries;
  });
  for (std::size_t i = 0; i < val_clients.size(); ++i) {
    if (recalls[i] < 0.0) continue;
    hits_num += std::lround(recalls[i] * usable[i]);
    total += usable[i];
  }
  if (total == 0) throw std::runtime_error("validation_recall_at_1: no usable validation queries");
  return static_cast<double>(hits_num) / static_cast<double>(total);
}

namespace {

struct LocalJob {
  const ClientDataset* data = nullptr;
  std::uint64_t report_id = 0;          // id recorded in metrics (virtual id for FedVC)
  std::uint64_t augment_identity = 0;   // id that keys the fixed per-client jitter
};

// Train the selected jobs in parallel from a common starting point.
std::vector<LocalTrainResult> train_selected(const std::vector<LocalJob>& jobs,
                                             const ParamVector& theta, const RunContext& ctx,
                                             int t, int fixed_iterations) {
  std::vector<LocalTrainResult> results(jobs.size());
  parallel_over(jobs.size(), ctx.workers, [&](std::size_t i) {
    const LocalJob& job = jobs[i];
    LocalRunConfig run;
    run.mining = ctx.mining;
    run.augment = ctx.augment;
    run.train = ctx.local;
    run.train.seed = local_seed_for(ctx.local.seed, t, job.report_id);
    run.fixed_iterations = fixed_iterations;
    run.augment_client_seed = seed_of(ctx.augment_seed, job.augment_identity);
    run.augment_stream_seed =
        seed_of(ctx.augment_seed, job.report_id, static_cast<std::uint64_t>(t));
    results[i] = local_train(theta, ctx.embedder, *job.data, run);
    results[i].stats.client_id = job.report_id;
  });
  return results;
}

}  // namespace

FederationResult run_federation(const FederationConfig& cfg, const RunContext& ctx,
                                std::span<const ClientDataset> train_clients,
                                std::span<const ClientDataset> val_clients,
                                const ParamVector& theta0) {
  cfg.validate();
  if (train_clients.empty()) throw std::invalid_argument("run_federation: no training clients");

  FederationResult res;
  res.final_params = theta0;
  res.best_params = theta0;

  // FedVC: precompute the virtual pool and the datasets backing each shard.
  std::vector<VirtualClient> vpool;
  std::vector<ClientDataset> vdatasets;
  std::vector<double> vweights;
  const bool fedvc = cfg.fedvc.has_value();
  if (fedvc) {
    int vs = cfg.fedvc->virtual_size > 0
                 ? cfg.fedvc->virtual_size
                 : ctx.local.batch_triplets * cfg.fixed_local_iterations.value();
    vpool = make_virtual_clients(train_clients, vs, seed_of(cfg.seed, 0x66766370ull));
    std::vector<std::size_t> by_id(train_clients.size());
    std::iota(by_id.begin(), by_id.end(), 0);
    std::unordered_map<std::uint64_t, std::size_t> real_index;
    for (std::size_t i = 0; i < train_clients.size(); ++i) {
      real_index.emplace(train_clients[i].client_id, i);
    }
    for (const VirtualClient& vc : vpool) {
      const ClientDataset& real = train_clients[real_index.at(vc.real_client_id)];
      ClientDataset shard;
      shard.client_id = vc.virtual_id;
      shard.database = real.database;
      shard.city_ids = real.city_ids;
      shard.continent_ids = real.continent_ids;
      for (std::size_t qi : vc.query_indices) {
        shard.queries.push_back(real.queries[qi]);
        shard.candidates.push_back(real.candidates[qi]);
      }
      vdatasets.push_back(std::move(shard));
      vweights.push_back(vc.weight());
    }
  }

  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < train_clients.size(); ++i) {
    index.emplace(train_clients[i].client_id, i);
  }

  ServerOptState opt = ServerOptState::make(cfg.server_optimizer, theta0.values.size());
  int fixed_iters = cfg.fixed_local_iterations.value_or(-1);

  for (int t = 0; t < cfg.rounds; ++t) {
    std::vector<LocalJob> jobs;
    if (fedvc) {
      std::vector<std::size_t> picked =
          select_weighted(vweights, t, cfg.clients_per_round, cfg.seed);
      for (std::size_t vi : picked) {
        jobs.push_back({&vdatasets[vi], vpool[vi].virtual_id, vpool[vi].real_client_id});
      }
    } else {
      std::vector<std::uint64_t> ids;
      ids.reserve(train_clients.size());
      for (const ClientDataset& c : train_clients) ids.push_back(c.client_id);
      for (std::uint64_t id : select_clients(ids, t, cfg.clients_per_round, cfg.seed)) {
        jobs.push_back({&train_clients[index.at(id)], id, id});
      }
    }

    std::vector<LocalTrainResult> results = train_selected(jobs, res.final_params, ctx, t,
                                                           fixed_iters);

    RoundRecord rec;
    rec.t = t;
    for (const LocalJob& j : jobs) rec.selected.push_back(j.report_id);

    std::vector<ClientUpdate> updates;
    for (const LocalTrainResult& r : results) {
      rec.client_stats.push_back(r.stats);
      if (r.stats.samples_processed > 0) {
        updates.push_back({r.stats.client_id, &r.params, r.stats.samples_processed});
      }
    }

    if (updates.empty()) {
      rec.skipped = true;
    } else {
      std::vector<double> delta = pseudo_gradient(res.final_params, updates);
      server_step(opt, res.final_params, delta, cfg.server_lr, cfg.server_momentum);
    }
    rec.checksum = param_checksum(res.final_params);

    bool scheduled = ((t + 1) % cfg.eval_interval == 0) || (t + 1 == cfg.rounds);
    if (scheduled && !val_clients.empty()) {
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

FederationResult run_centralized(int epochs, const RunContext& ctx, const ClientDataset& data,
                                 std::span<const ClientDataset> val_clients,
                                 const ParamVector& theta0, int eval_interval) {
  if (epochs < 0) throw std::invalid_argument("run_centralized: epochs must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("run_centralized: eval_interval must be >= 1");

  FederationResult res;
  res.final_params = theta0;
  res.best_params = theta0;

  for (int e = 0; e < epochs; ++e) {
    std::vector<LocalJob> jobs = {{&data, data.client_id, data.client_id}};
    std::vector<LocalTrainResult> results = train_selected(jobs, res.final_params, ctx, e, -1);

    RoundRecord rec;
    rec.t = e;
    rec.selected = {data.client_id};
    rec.client_stats = {results[0].stats};
    if (results[0].stats.samples_processed > 0) {
      res.final_params = std::move(results[0].params);
    } else {
      rec.skipped = true;
    }
    rec.checksum = param_checksum(res.final_params);

    bool scheduled = ((e + 1) % eval_interval == 0) || (e + 1 == epochs);
    if (scheduled && !val_clients.empty()) {
      double r1 = validation_recall_at_1(res.final_params, ctx.embedder, val_clients, ctx.workers);
      rec.val_r1 = r1;
      if (r1 > res.best_val_r1) {
        res.best_val_r1 = r1;
        res.best_params = res.final_params;
        res.best_round = e;
      }
    }
    res.records.push_back(std::move(rec));
  }
  if (res.best_round < 0) res.best_params = res.final_params;
  return res;
}

}  // namespace fedret
