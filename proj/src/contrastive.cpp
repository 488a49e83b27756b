#include "fedret/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "fedret/rng.hpp"

namespace fedret {

void MiningConfig::validate() const {
  if (n_neg < 1) throw std::invalid_argument("MiningConfig: n_neg must be >= 1");
  if (margin < 0.0) throw std::invalid_argument("MiningConfig: margin must be >= 0");
  if (!(tau_m <= tau_neg_m)) throw std::invalid_argument("MiningConfig: tau > tau_neg");
  if (pool_restriction) {
    if (pool_restriction->max_sequences < 1 || pool_restriction->images_per_sequence < 1) {
      throw std::invalid_argument("MiningConfig: pool restriction fields must be >= 1");
    }
  }
}

void AugmentSpec::validate() const {
  if (jitter_scale < 0.0) throw std::invalid_argument("AugmentSpec: jitter_scale must be >= 0");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
    throw std::invalid_argument("AugmentSpec: crop_fraction must be in (0, 1]");
  }
}

void LocalTrainConfig::validate() const {
  if (batch_triplets < 1) throw std::invalid_argument("LocalTrainConfig: batch_triplets >= 1");
  if (!(local_lr > 0.0)) throw std::invalid_argument("LocalTrainConfig: local_lr must be > 0");
  if (max_local_iterations < 0) {
    throw std::invalid_argument("LocalTrainConfig: max_local_iterations must be >= 0");
  }
}

ClientDataset ClientDataset::build(std::uint64_t client_id, std::vector<GeoSample> queries,
                                   std::vector<GeoSample> database, const MiningConfig& mining) {
  mining.validate();
  ClientDataset out;
  out.client_id = client_id;
  out.database = std::move(database);

  for (GeoSample& q : queries) {
    CandidateSets cand = candidate_sets(q, out.database, mining.tau_m, mining.tau_neg_m);
    if (mining.pool_restriction) {
      // Restriction applies to the negative pool only; positives keep the
      // full database so geographic ground truth is unaffected.
      std::vector<GeoSample> pool = restrict_mining_pool(
          out.database, q.tag, mining.pool_restriction->max_sequences,
          mining.pool_restriction->images_per_sequence, seed_of(mining.pool_seed, q.id));
      cand.negatives = candidate_sets(q, pool, mining.tau_m, mining.tau_neg_m).negatives;
    }
    if (cand.positives.empty()) {
      out.dropped_queries += 1;
      continue;
    }
    out.candidates.push_back(std::move(cand));
    out.queries.push_back(std::move(q));
  }
  return out;
}

namespace {

Matrix rows_from_samples(const GeoSample& query, std::span<const GeoSample> pool) {
  Matrix x(pool.size() + 1, query.feat.size());
  std::copy(query.feat.begin(), query.feat.end(), x.row(0).begin());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].feat.size() != query.feat.size()) {
      throw std::invalid_argument("mining: feature dimension mismatch in pool");
    }
    std::copy(pool[i].feat.begin(), pool[i].feat.end(), x.row(i + 1).begin());
  }
  return x;
}

// (distance to query, id) for every pool member, under the current model.
std::vector<std::pair<double, std::uint64_t>> embed_distances(const ParamVector& params,
                                                              const EmbedderSpec& spec,
                                                              const GeoSample& query,
                                                              std::span<const GeoSample> pool) {
  Matrix x = rows_from_samples(query, pool);
  DescriptorBatch d = forward(params, spec, x);
  std::vector<std::pair<double, std::uint64_t>> out;
  out.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    out.emplace_back(euclidean_distance(d.row(0), d.row(i + 1)), pool[i].id);
  }
  return out;
}

}  // namespace

std::uint64_t mine_positive(const ParamVector& params, const EmbedderSpec& spec,
                            const GeoSample& query, std::span<const GeoSample> positives) {
  if (positives.empty()) throw std::invalid_argument("mine_positive: empty candidate set");
  auto dist = embed_distances(params, spec, query, positives);
  auto best = std::min_element(dist.begin(), dist.end());
  return best->second;
}

std::vector<std::uint64_t> mine_negatives(const ParamVector& params, const EmbedderSpec& spec,
                                          const GeoSample& query,
                                          std::span<const GeoSample> negatives, int n_neg,
                                          bool* shortfall) {
  if (n_neg < 1) throw std::invalid_argument("mine_negatives: n_neg must be >= 1");
  if (shortfall) *shortfall = static_cast<int>(negatives.size()) < n_neg;
  if (negatives.empty()) return {};
  auto dist = embed_distances(params, spec, query, negatives);
  std::sort(dist.begin(), dist.end());
  std::size_t take = std::min<std::size_t>(negatives.size(), static_cast<std::size_t>(n_neg));
  std::vector<std::uint64_t> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(dist[i].second);
  return out;
}

double triplet_loss(double d_qp, double d_qn, double margin) {
  return std::max(d_qp * d_qp - d_qn * d_qn + margin, 0.0);
}

std::pair<double, ParamVector> triplet_objective_gradient(const ParamVector& params,
                                                          const EmbedderSpec& spec,
                                                          const TripletBatch& batch,
                                                          double margin, double divisor) {
  std::size_t expect_rows = 0;
  for (int k : batch.negatives_per_query) expect_rows += 2 + static_cast<std::size_t>(k);
  if (expect_rows != batch.x.rows) {
    throw std::invalid_argument("triplet_objective_gradient: row layout mismatch");
  }

  DescriptorBatch desc = forward(params, spec, batch.x);
  Matrix upstream(batch.x.rows, desc.dim);
  double loss = 0.0;
  const double inv = 1.0 / divisor;

  std::size_t r = 0;
  for (int k : batch.negatives_per_query) {
    std::size_t rq = r, rp = r + 1;
    std::span<const double> eq = desc.row(rq);
    std::span<const double> ep = desc.row(rp);
    double d_qp = euclidean_distance(eq, ep);
    for (int j = 0; j < k; ++j) {
      std::size_t rn = r + 2 + static_cast<std::size_t>(j);
      std::span<const double> en = desc.row(rn);
      double d_qn = euclidean_distance(eq, en);
      double term = triplet_loss(d_qp, d_qn, margin);
      loss += term * inv;
      if (term > 0.0) {
        for (std::size_t c = 0; c < desc.dim; ++c) {
          double gqp = 2.0 * (eq[c] - ep[c]);
          double gqn = 2.0 * (eq[c] - en[c]);
          upstream.at(rq, c) += (gqp - gqn) * inv;
          upstream.at(rp, c) += -gqp * inv;
          upstream.at(rn, c) += gqn * inv;
        }
      }
    }
    r += 2 + static_cast<std::size_t>(k);
  }
  return {loss, backward(params, spec, batch.x, upstream)};
}

std::vector<double> apply_augmentation(std::span<const double> x, const AugmentSpec& spec,
                                       std::uint64_t client_seed, std::uint64_t sample_seed) {
  spec.validate();
  std::vector<double> out(x.begin(), x.end());
  if (spec.mode == AugmentMode::None) return out;

  Rng sample_rng(sample_seed);
  if (spec.mode == AugmentMode::Uniform) {
    // Jitter applied with probability 0.5, freshly drawn per sample.
    bool apply = sample_rng.next_double() < 0.5;
    if (apply) {
      for (double& v : out) {
        v *= sample_rng.uniform(1.0 - spec.jitter_scale, 1.0 + spec.jitter_scale);
      }
    }
  } else {  // ClientSpecific: one fixed jitter vector per client, always on.
    Rng client_rng(client_seed);
    for (double& v : out) {
      v *= client_rng.uniform(1.0 - spec.jitter_scale, 1.0 + spec.jitter_scale);
    }
  }

  if (spec.crop_fraction < 1.0 && !out.empty()) {
    bool apply = sample_rng.next_double() < 0.5;
    if (apply) {
      std::size_t n = out.size();
      auto zeroed = static_cast<std::size_t>(std::llround((1.0 - spec.crop_fraction) * n));
      zeroed = std::min(zeroed, n);
      if (zeroed > 0) {
        std::size_t start = static_cast<std::size_t>(sample_rng.below(n - zeroed + 1));
        for (std::size_t i = start; i < start + zeroed; ++i) out[i] = 0.0;
      }
    }
  }
  return out;
}

std::vector<GeoSample> restrict_mining_pool(std::span<const GeoSample> db, const GeoTag& center,
                                            int max_sequences, int images_per_sequence,
                                            std::uint64_t pool_seed) {
  if (max_sequences < 1 || images_per_sequence < 1) {
    throw std::invalid_argument("restrict_mining_pool: counts must be >= 1");
  }
  // Group by sequence; map keeps sequence order deterministic.
  std::map<std::uint64_t, std::vector<const GeoSample*>> seqs;
  for (const GeoSample& s : db) seqs[s.seq_id].push_back(&s);

  std::vector<std::pair<double, std::uint64_t>> order;
  order.reserve(seqs.size());
  for (auto& [seq_id, members] : seqs) {
    std::sort(members.begin(), members.end(),
              [](const GeoSample* a, const GeoSample* b) { return a->id < b->id; });
    double lat = 0.0, lon = 0.0;
    for (const GeoSample* s : members) {
      lat += s->tag.lat;
      lon += s->tag.lon;
    }
    GeoTag centroid{lat / members.size(), lon / members.size()};
    order.emplace_back(geo_distance(centroid, center), seq_id);
  }
  std::sort(order.begin(), order.end());

  std::size_t n_seq = std::min<std::size_t>(order.size(), static_cast<std::size_t>(max_sequences));
  std::vector<GeoSample> pool;
  for (std::size_t i = 0; i < n_seq; ++i) {
    const auto& members = seqs[order[i].second];
    auto want = static_cast<std::size_t>(images_per_sequence);
    if (members.size() <= want) {
      for (const GeoSample* s : members) pool.push_back(*s);
    } else {
      // Partial Fisher-Yates over member indices.
      Rng rng(seed_of(pool_seed, order[i].second));
      std::vector<std::size_t> idx(members.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t k = 0; k < want; ++k) {
        std::size_t j = k + static_cast<std::size_t>(rng.below(idx.size() - k));
        std::swap(idx[k], idx[j]);
        pool.push_back(*members[idx[k]]);
      }
    }
  }
  std::sort(pool.begin(), pool.end(),
            [](const GeoSample& a, const GeoSample& b) { return a.id < b.id; });
  return pool;
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
};

void optimizer_step(std::vector<double>& theta, std::span<const double> grad,
                    const LocalTrainConfig& cfg, AdamState& adam) {
  if (cfg.local_optimizer == LocalOptimizer::SGD) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.local_lr * grad[i];
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam.t += 1;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grad[i];
    adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * grad[i] * grad[i];
    double mhat = adam.m[i] / c1;
    double vhat = adam.v[i] / c2;
    theta[i] -= cfg.local_lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

LocalTrainResult local_train(const ParamVector& start, const EmbedderSpec& spec,
                             const ClientDataset& client, const LocalRunConfig& cfg) {
  cfg.mining.validate();
  cfg.augment.validate();
  cfg.train.validate();

  LocalTrainResult result;
  result.params = start;
  result.stats.client_id = client.client_id;
  result.stats.dropped_queries = client.dropped_queries;

  // Queries with an empty negative pool cannot form triplets this round.
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < client.queries.size(); ++i) {
    if (!client.candidates[i].negatives.empty()) trainable.push_back(i);
  }
  result.stats.usable_queries = static_cast<int>(trainable.size());
  if (trainable.empty()) return result;

  std::unordered_map<std::uint64_t, std::size_t> db_index;
  db_index.reserve(client.database.size());
  for (std::size_t i = 0; i < client.database.size(); ++i) {
    db_index.emplace(client.database[i].id, i);
  }

  const int batch = cfg.train.batch_triplets;
  int iterations;
  if (cfg.fixed_iterations >= 0) {
    iterations = cfg.fixed_iterations;
  } else {
    int available = std::max<int>(1, static_cast<int>(trainable.size()) / batch);
    iterations = std::min(available, cfg.train.max_local_iterations);
  }
  if (iterations == 0) return result;

  const std::size_t p = result.params.size();
  AdamState adam;
  if (cfg.train.local_optimizer == LocalOptimizer::Adam) {
    adam.m.assign(p, 0.0);
    adam.v.assign(p, 0.0);
  }
  Rng neg_rng(seed_of(cfg.train.seed, 0x6e656761ull));  // random-negative draws

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto next_query = [&]() -> std::size_t {
    if (cursor == order.size()) {
      order = trainable;
      Rng(seed_of(cfg.train.seed, 0x6f726465ull, epoch)).shuffle(order);
      epoch += 1;
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::size_t f = static_cast<std::size_t>(spec.input_dim);
  double loss_sum = 0.0;

  for (int it = 0; it < iterations; ++it) {
    struct MinedQuery {
      std::size_t query_index;
      std::size_t positive_db;
      std::vector<std::size_t> negative_db;
    };
    std::vector<MinedQuery> mined;
    mined.reserve(batch);

    for (int b = 0; b < batch; ++b) {
      std::size_t qi = next_query();
      const GeoSample& q = client.queries[qi];
      const CandidateSets& cand = client.candidates[qi];

      std::vector<GeoSample> pos, neg;
      pos.reserve(cand.positives.size());
      for (std::uint64_t id : cand.positives) pos.push_back(client.database[db_index.at(id)]);
      neg.reserve(cand.negatives.size());
      for (std::uint64_t id : cand.negatives) neg.push_back(client.database[db_index.at(id)]);

      MinedQuery m;
      m.query_index = qi;
      m.positive_db = db_index.at(mine_positive(result.params, spec, q, pos));

      std::vector<std::uint64_t> neg_ids;
      if (cfg.mining.hard_negatives) {
        bool short_pool = false;
        neg_ids = mine_negatives(result.params, spec, q, neg, cfg.mining.n_neg, &short_pool);
        if (short_pool) result.stats.shortfall_events += 1;
      } else {
        // Uniform draws without replacement, ignoring embedding distances.
        std::vector<std::uint64_t> ids = cand.negatives;
        std::size_t take = std::min<std::size_t>(ids.size(), cfg.mining.n_neg);
        if (ids.size() < static_cast<std::size_t>(cfg.mining.n_neg)) {
          result.stats.shortfall_events += 1;
        }
        for (std::size_t k = 0; k < take; ++k) {
          std::size_t j = k + static_cast<std::size_t>(neg_rng.below(ids.size() - k));
          std::swap(ids[k], ids[j]);
          neg_ids.push_back(ids[k]);
        }
      }
      for (std::uint64_t id : neg_ids) m.negative_db.push_back(db_index.at(id));
      mined.push_back(std::move(m));
    }

    // One combined forward/backward over all triplet members in the batch.
    TripletBatch tb;
    std::size_t total_rows = 0;
    for (const auto& m : mined) {
      tb.negatives_per_query.push_back(static_cast<int>(m.negative_db.size()));
      total_rows += 2 + m.negative_db.size();
    }
    tb.x = Matrix(total_rows, f);

    auto augmented = [&](const GeoSample& s) {
      return apply_augmentation(s.feat, cfg.augment, cfg.augment_client_seed,
                                seed_of(cfg.augment_stream_seed, static_cast<std::uint64_t>(it),
                                        s.id));
    };

    std::size_t r = 0;
    for (const auto& m : mined) {
      const GeoSample& q = client.queries[m.query_index];
      std::vector<double> qa = augmented(q);
      std::copy(qa.begin(), qa.end(), tb.x.row(r++).begin());
      std::vector<double> pa = augmented(client.database[m.positive_db]);
      std::copy(pa.begin(), pa.end(), tb.x.row(r++).begin());
      for (std::size_t ni : m.negative_db) {
        std::vector<double> na = augmented(client.database[ni]);
        std::copy(na.begin(), na.end(), tb.x.row(r++).begin());
      }
    }

    auto [batch_loss, grad] = triplet_objective_gradient(result.params, spec, tb,
                                                         cfg.mining.margin,
                                                         static_cast<double>(batch));
    optimizer_step(result.params.values, grad.values, cfg.train, adam);
    loss_sum += batch_loss;
  }

  result.stats.iterations = iterations;
  result.stats.samples_processed = static_cast<long>(iterations) * batch;
  result.stats.mean_loss = loss_sum / iterations;
  return result;
}

}  // namespace fedret
