#include "fedret/retrieval.hpp"

#include <algorithm>
#include <stdexcept>

#include "fedret/parallel.hpp"

namespace fedret {

namespace {

Matrix features_of(std::span<const GeoSample> samples) {
  if (samples.empty()) return {};
  Matrix m(samples.size(), samples.front().feat.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].feat.size() != m.cols) {
      throw std::invalid_argument("recall_at_k: inconsistent feature dimensions");
    }
    std::copy(samples[i].feat.begin(), samples[i].feat.end(), m.row(i).begin());
  }
  return m;
}

RecallResult recall_core(const Matrix& qdesc, const Matrix& ddesc, const EvalSet& eval_set,
                         std::span<const int> ks, int workers) {
  if (ks.empty()) throw std::invalid_argument("recall_at_k: empty k list");
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  }
  if (eval_set.database.empty()) throw std::invalid_argument("recall_at_k: empty database");

  const std::size_t nq = eval_set.queries.size();
  const std::size_t nd = eval_set.database.size();
  const int max_k = *std::max_element(ks.begin(), ks.end());
  const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(max_k), nd);

  // Geographic ground truth per query; queries without any positive are
  // excluded from the denominator.
  std::vector<char> usable(nq, 0);
  std::vector<char> hit_rank(nq * top, 0);  // per query: geographic hit flag of rank r

  parallel_over(nq, workers, [&](std::size_t qi) {
    const GeoSample& q = eval_set.queries[qi];
    bool any_positive = false;
    for (const GeoSample& d : eval_set.database) {
      if (geo_distance(q.tag, d.tag) <= eval_set.positive_radius_m) {
        any_positive = true;
        break;
      }
    }
    if (!any_positive) return;
    usable[qi] = 1;

    // Exhaustive scan, then partial sort of the top `top` by (distance, id).
    std::vector<std::pair<double, std::uint64_t>> dist(nd);
    std::vector<std::size_t> order(nd);
    for (std::size_t di = 0; di < nd; ++di) {
      dist[di] = {euclidean_distance(qdesc.row(qi), ddesc.row(di)), eval_set.database[di].id};
      order[di] = di;
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top),
                      order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (std::size_t r = 0; r < top; ++r) {
      const GeoSample& d = eval_set.database[order[r]];
      hit_rank[qi * top + r] =
          geo_distance(q.tag, d.tag) <= eval_set.positive_radius_m ? 1 : 0;
    }
  });

  RecallResult res;
  for (std::size_t qi = 0; qi < nq; ++qi) {
    if (usable[qi]) {
      res.usable_queries += 1;
    } else {
      res.excluded_queries += 1;
      res.excluded_ids.push_back(eval_set.queries[qi].id);
    }
  }
  if (res.usable_queries == 0) throw std::runtime_error("recall_at_k: no usable queries");

  for (int k : ks) {
    std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), top);
    int hits = 0;
    for (std::size_t qi = 0; qi < nq; ++qi) {
      if (!usable[qi]) continue;
      bool hit = false;
      for (std::size_t r = 0; r < kk && !hit; ++r) hit = hit_rank[qi * top + r] != 0;
      if (hit) hits += 1;
    }
    res.recall[k] = static_cast<double>(hits) / res.usable_queries;
  }

  for (std::size_t qi = 0; qi < nq; ++qi) {
    if (!usable[qi]) continue;
    bool hit = false;
    for (std::size_t r = 0; r < top && !hit; ++r) hit = hit_rank[qi * top + r] != 0;
    if (!hit) res.missed_at_max_k.push_back(eval_set.queries[qi].id);
  }
  return res;
}

}  // namespace

RecallResult recall_at_k(const ParamVector& params, const EmbedderSpec& spec,
                         const EvalSet& eval_set, std::span<const int> ks, int workers) {
  Matrix qx = features_of(eval_set.queries);
  Matrix dx = features_of(eval_set.database);
  DescriptorBatch qd = forward(params, spec, qx);
  DescriptorBatch dd = forward(params, spec, dx);
  return recall_core(qd.descriptors, dd.descriptors, eval_set, ks, workers);
}

RecallResult recall_at_k_features(const EvalSet& eval_set, std::span<const int> ks, int workers) {
  Matrix qx = features_of(eval_set.queries);
  Matrix dx = features_of(eval_set.database);
  return recall_core(qx, dx, eval_set, ks, workers);
}

}  // namespace fedret
