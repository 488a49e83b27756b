#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedret/geo.hpp"
#include "fedret/partition.hpp"

namespace fedret {

// Manifest: text, one sample per line after an `f=<dim>` header:
//   id lat lon seq_id city_id continent_id role feat[0] ... feat[f-1]
// Doubles are written with 17 significant digits, so write -> read -> write
// is byte-stable.
void write_manifest(const std::string& path, std::span<const GeoSample> samples);

struct ManifestData {
  int feature_dim = 0;
  std::vector<GeoSample> samples;
};

ManifestData read_manifest(const std::string& path);

// Partition file: one JSON object per line per client, with a
// "split": "train" | "val" label.
struct PartitionRecord {
  ClientManifest client;
  bool validation = false;
};

void write_partition(const std::string& path, std::span<const ClientManifest> clients,
                     std::span<const std::uint64_t> validation_ids);

std::vector<PartitionRecord> read_partition(const std::string& path);

}  // namespace fedret
