#include "fedret/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "fedret/rng.hpp"

namespace fedret {

void PartitionSpec::validate() const {
  if (kind == SplitKind::Proximity && !(radius_m > 0.0)) {
    throw std::invalid_argument("PartitionSpec: radius must be > 0");
  }
  if (kind == SplitKind::Clustering && k_total < 1) {
    throw std::invalid_argument("PartitionSpec: k_total must be >= 1");
  }
  if (kind == SplitKind::Random && n_clients < 1) {
    throw std::invalid_argument("PartitionSpec: n_clients must be >= 1");
  }
  if (min_query_seqs < 0 || min_db_seqs < 0) {
    throw std::invalid_argument("PartitionSpec: min sequence counts must be >= 0");
  }
}

namespace {

struct SeqInfo {
  std::uint64_t seq_id = 0;
  std::uint32_t city_id = 0;
  std::uint32_t continent_id = 0;
  Role role = Role::Database;
  std::vector<const GeoSample*> samples;  // sorted by id
  std::vector<double> feat_centroid;
};

// city_id -> its sequences sorted by seq_id.
std::map<std::uint32_t, std::vector<SeqInfo>> index_sequences(std::span<const GeoSample> manifest,
                                                              bool with_centroids) {
  std::map<std::uint64_t, SeqInfo> by_seq;
  for (const GeoSample& s : manifest) {
    SeqInfo& info = by_seq[s.seq_id];
    if (info.samples.empty()) {
      info.seq_id = s.seq_id;
      info.city_id = s.city_id;
      info.continent_id = s.continent_id;
      info.role = s.role;
    } else if (info.role != s.role || info.city_id != s.city_id) {
      throw std::invalid_argument("partition: sequence " + std::to_string(s.seq_id) +
                                  " mixes roles or cities");
    }
    info.samples.push_back(&s);
  }
  std::map<std::uint32_t, std::vector<SeqInfo>> by_city;
  for (auto& [seq_id, info] : by_seq) {
    std::sort(info.samples.begin(), info.samples.end(),
              [](const GeoSample* a, const GeoSample* b) { return a->id < b->id; });
    if (with_centroids) {
      std::size_t f = info.samples.front()->feat.size();
      info.feat_centroid.assign(f, 0.0);
      for (const GeoSample* s : info.samples) {
        for (std::size_t d = 0; d < f; ++d) info.feat_centroid[d] += s->feat[d];
      }
      for (double& v : info.feat_centroid) v /= static_cast<double>(info.samples.size());
    }
    by_city[info.city_id].push_back(std::move(info));
  }
  return by_city;
}

// Candidate -> client if it meets the validity rule; returns emission.
std::optional<ClientManifest> finish_candidate(const std::vector<const SeqInfo*>& members,
                                               int min_q, int min_db) {
  ClientManifest cm;
  std::set<std::uint32_t> cities, continents;
  for (const SeqInfo* s : members) {
    (s->role == Role::Query ? cm.query_seq_ids : cm.db_seq_ids).push_back(s->seq_id);
    cities.insert(s->city_id);
    continents.insert(s->continent_id);
  }
  if (static_cast<int>(cm.query_seq_ids.size()) < min_q ||
      static_cast<int>(cm.db_seq_ids.size()) < min_db) {
    return std::nullopt;
  }
  std::sort(cm.query_seq_ids.begin(), cm.query_seq_ids.end());
  std::sort(cm.db_seq_ids.begin(), cm.db_seq_ids.end());
  cm.city_ids.assign(cities.begin(), cities.end());
  cm.continent_ids.assign(continents.begin(), continents.end());
  return cm;
}

double min_image_distance(const SeqInfo& seq, const GeoTag& tag) {
  double best = std::numeric_limits<double>::infinity();
  for (const GeoSample* s : seq.samples) best = std::min(best, geo_distance(s->tag, tag));
  return best;
}

}  // namespace

std::vector<ClientManifest> split_proximity(std::span<const GeoSample> manifest, double radius_m,
                                            std::uint64_t seed, int min_query_seqs,
                                            int min_db_seqs) {
  if (!(radius_m > 0.0)) throw std::invalid_argument("split_proximity: radius must be > 0");
  auto by_city = index_sequences(manifest, false);

  std::vector<ClientManifest> clients;
  for (auto& [city_id, seqs] : by_city) {
    std::vector<std::size_t> query_order;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      if (seqs[i].role == Role::Query) query_order.push_back(i);
    }
    Rng(seed_of(seed, 0x70726f78ull, city_id)).shuffle(query_order);

    std::vector<bool> assigned(seqs.size(), false);
    for (std::size_t qi : query_order) {
      if (assigned[qi]) continue;
      const GeoSample* founding = seqs[qi].samples.front();
      std::vector<const SeqInfo*> members;
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (assigned[i]) continue;
        if (min_image_distance(seqs[i], founding->tag) <= radius_m) {
          members.push_back(&seqs[i]);
          assigned[i] = true;  // consumed even if the candidate ends up invalid
        }
      }
      if (auto cm = finish_candidate(members, min_query_seqs, min_db_seqs)) {
        cm->founding_sample_id = founding->id;
        clients.push_back(std::move(*cm));
      }
    }
  }
  for (std::size_t i = 0; i < clients.size(); ++i) clients[i].client_id = i;
  return clients;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// Lloyd's algorithm with k-means++ seeding. Returns cluster index per point.
std::vector<int> kmeans(const std::vector<std::vector<double>>& points, int k, Rng& rng) {
  const int n = static_cast<int>(points.size());
  k = std::min(k, n);

  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.push_back(points[rng.below(static_cast<std::uint64_t>(n))]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      double u = rng.next_double() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centers.push_back(points[pick]);
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<int> next(n);
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        double d = sq_dist(points[i], centers[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      next[i] = arg;
    }
    if (next == assign) break;  // fixed point: centers are the member means
    assign = std::move(next);

    std::vector<std::vector<double>> means(k, std::vector<double>(points[0].size(), 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      counts[assign[i]] += 1;
      for (std::size_t d = 0; d < points[i].size(); ++d) means[assign[i]][d] += points[i][d];
    }
    double max_shift = 0.0;
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its center.
        double far_d = -1.0;
        int far_i = 0;
        for (int i = 0; i < n; ++i) {
          double d = sq_dist(points[i], centers[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        means[c] = points[far_i];
        counts[c] = 1;
        max_shift = std::numeric_limits<double>::infinity();
        continue;
      }
      for (double& v : means[c]) v /= counts[c];
      max_shift = std::max(max_shift, std::sqrt(sq_dist(means[c], centers[c])));
    }
    centers = std::move(means);
    if (max_shift < 1e-6) {
      // Converged; refresh the assignment against the final centers.
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          double d = sq_dist(points[i], centers[c]);
          if (d < best) {
            best = d;
            assign[i] = c;
          }
        }
      }
      break;
    }
  }
  return assign;
}

}  // namespace

std::vector<int> kmeans_assign(const std::vector<std::vector<double>>& points, int k,
                               std::uint64_t seed) {
  if (points.empty() || k < 1) throw std::invalid_argument("kmeans_assign: bad inputs");
  Rng rng(seed);
  return kmeans(points, k, rng);
}

std::vector<ClientManifest> split_clustering(std::span<const GeoSample> manifest, int k_total,
                                             std::uint64_t seed, int min_query_seqs,
                                             int min_db_seqs) {
  if (k_total < 1) throw std::invalid_argument("split_clustering: k_total must be >= 1");
  auto by_city = index_sequences(manifest, true);

  // Allocate K per city proportionally to sequence count.
  std::size_t total_seqs = 0;
  for (const auto& [city, seqs] : by_city) total_seqs += seqs.size();
  std::vector<std::pair<std::uint32_t, int>> alloc;  // (city, K)
  std::vector<std::pair<double, std::uint32_t>> fracs;
  int assigned_total = 0;
  for (const auto& [city, seqs] : by_city) {
    double quota = static_cast<double>(k_total) * seqs.size() / total_seqs;
    int base = static_cast<int>(quota);
    alloc.emplace_back(city, base);
    fracs.emplace_back(-(quota - base), city);  // sort ascending = largest remainder first
    assigned_total += base;
  }
  std::sort(fracs.begin(), fracs.end());
  for (int r = 0; r < k_total - assigned_total && r < static_cast<int>(fracs.size()); ++r) {
    for (auto& [city, k] : alloc) {
      if (city == fracs[r].second) {
        k += 1;
        break;
      }
    }
  }

  std::vector<ClientManifest> clients;
  for (auto& [city, k_city] : alloc) {
    auto& seqs = by_city[city];
    int k = std::clamp(k_city, 1, static_cast<int>(seqs.size()));
    std::vector<std::vector<double>> points;
    points.reserve(seqs.size());
    for (const SeqInfo& s : seqs) points.push_back(s.feat_centroid);
    std::vector<int> assign = kmeans_assign(points, k, seed_of(seed, 0x6b6d6e73ull, city));

    for (int c = 0; c < k; ++c) {
      std::vector<const SeqInfo*> members;
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (assign[i] == c) members.push_back(&seqs[i]);
      }
      if (members.empty()) continue;
      if (auto cm = finish_candidate(members, min_query_seqs, min_db_seqs)) {
        clients.push_back(std::move(*cm));
      }
    }
  }
  for (std::size_t i = 0; i < clients.size(); ++i) clients[i].client_id = i;
  return clients;
}

std::vector<ClientManifest> split_random(std::span<const GeoSample> manifest, int n_clients,
                                         std::uint64_t seed, int min_query_seqs, int min_db_seqs) {
  if (n_clients < 1) throw std::invalid_argument("split_random: n_clients must be >= 1");
  auto by_city = index_sequences(manifest, false);

  std::vector<std::vector<const SeqInfo*>> assigned(n_clients);
  for (auto& [city, seqs] : by_city) {
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(seed_of(seed, 0x726e646dull, city)).shuffle(order);
    // Deal round-robin; cycle the city's sequences when there are fewer
    // than n_clients so every client covers every city.
    std::size_t deals = std::max<std::size_t>(seqs.size(), static_cast<std::size_t>(n_clients));
    for (std::size_t i = 0; i < deals; ++i) {
      assigned[i % n_clients].push_back(&seqs[order[i % order.size()]]);
    }
  }

  std::vector<ClientManifest> clients;
  for (auto& members : assigned) {
    if (auto cm = finish_candidate(members, min_query_seqs, min_db_seqs)) {
      clients.push_back(std::move(*cm));
    }
  }
  for (std::size_t i = 0; i < clients.size(); ++i) clients[i].client_id = i;
  return clients;
}

std::vector<ClientManifest> make_partition(std::span<const GeoSample> manifest,
                                           const PartitionSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case SplitKind::Proximity:
      return split_proximity(manifest, spec.radius_m, spec.seed, spec.min_query_seqs,
                             spec.min_db_seqs);
    case SplitKind::Clustering:
      return split_clustering(manifest, spec.k_total, spec.seed, spec.min_query_seqs,
                              spec.min_db_seqs);
    case SplitKind::Random:
    default:
      return split_random(manifest, spec.n_clients, spec.seed, spec.min_query_seqs,
                          spec.min_db_seqs);
  }
}

PartitionStats partition_stats(std::span<const ClientManifest> clients,
                               std::span<const GeoSample> manifest) {
  if (clients.empty()) throw std::invalid_argument("partition_stats: empty client list");
  std::unordered_map<std::uint64_t, std::size_t> seq_sizes;
  for (const GeoSample& s : manifest) seq_sizes[s.seq_id] += 1;

  auto moments = [](const std::vector<double>& xs) {
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::pair{mean, std::sqrt(var / xs.size())};
  };

  std::vector<double> seq_counts, image_counts;
  for (const ClientManifest& cm : clients) {
    double seqs = static_cast<double>(cm.query_seq_ids.size() + cm.db_seq_ids.size());
    double images = 0.0;
    for (std::uint64_t s : cm.query_seq_ids) images += static_cast<double>(seq_sizes.at(s));
    for (std::uint64_t s : cm.db_seq_ids) images += static_cast<double>(seq_sizes.at(s));
    seq_counts.push_back(seqs);
    image_counts.push_back(images);
  }
  PartitionStats st;
  st.n_clients = static_cast<int>(clients.size());
  std::tie(st.mean_seqs, st.std_seqs) = moments(seq_counts);
  std::tie(st.mean_images, st.std_images) = moments(image_counts);
  return st;
}

std::vector<std::uint64_t> select_validation_clients(std::span<const ClientManifest> clients,
                                                     int n, std::uint64_t seed) {
  if (n < 0 || static_cast<std::size_t>(n) >= clients.size()) {
    throw std::invalid_argument("select_validation_clients: need more clients than holdouts");
  }
  std::vector<std::uint64_t> ids;
  ids.reserve(clients.size());
  for (const ClientManifest& cm : clients) ids.push_back(cm.client_id);
  std::sort(ids.begin(), ids.end());
  Rng(seed_of(seed, 0x76616c69ull)).shuffle(ids);
  ids.resize(static_cast<std::size_t>(n));
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClientDataset materialize_client(const ClientManifest& cm, std::span<const GeoSample> manifest,
                                 const MiningConfig& mining) {
  std::set<std::uint64_t> q_seqs(cm.query_seq_ids.begin(), cm.query_seq_ids.end());
  std::set<std::uint64_t> d_seqs(cm.db_seq_ids.begin(), cm.db_seq_ids.end());
  std::vector<GeoSample> queries, database;
  for (const GeoSample& s : manifest) {
    if (q_seqs.count(s.seq_id)) queries.push_back(s);
    if (d_seqs.count(s.seq_id)) database.push_back(s);
  }
  ClientDataset ds = ClientDataset::build(cm.client_id, std::move(queries), std::move(database),
                                          mining);
  ds.city_ids = cm.city_ids;
  ds.continent_ids = cm.continent_ids;
  return ds;
}

}  // namespace fedret
