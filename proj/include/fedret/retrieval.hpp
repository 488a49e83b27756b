#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fedret/geo.hpp"
#include "fedret/model.hpp"

namespace fedret {

struct EvalSet {
  std::vector<GeoSample> queries;
  std::vector<GeoSample> database;
  double positive_radius_m = 25.0;
};

struct RecallResult {
  std::map<int, double> recall;     // k -> fraction of usable queries hit
  int usable_queries = 0;
  int excluded_queries = 0;         // no geographic positive in the database
  std::vector<std::uint64_t> missed_at_max_k;  // query ids, for error analysis
  std::vector<std::uint64_t> excluded_ids;
};

// Exact kNN in descriptor space: for each usable query, its top-k database
// rows by ascending Euclidean distance (ties by sample id); a query is a hit
// at k when any of the top-k lies within positive_radius_m geographically.
// Throws when no query is usable.
RecallResult recall_at_k(const ParamVector& params, const EmbedderSpec& spec,
                         const EvalSet& eval_set, std::span<const int> ks, int workers = 1);

// Same metric on raw feature vectors (no model), the untrained-retrieval
// baseline.
RecallResult recall_at_k_features(const EvalSet& eval_set, std::span<const int> ks,
                                  int workers = 1);

}  // namespace fedret
