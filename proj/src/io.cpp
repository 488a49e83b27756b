#include "fedret/io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fedret {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_manifest(const std::string& path, std::span<const GeoSample> samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  std::size_t f = samples.empty() ? 0 : samples.front().feat.size();
  out << "# id lat lon seq city continent role feat...\n";
  out << "f=" << f << "\n";
  for (const GeoSample& s : samples) {
    if (s.feat.size() != f) {
      throw std::invalid_argument("write_manifest: inconsistent feature dimension");
    }
    out << s.id << ' ' << fmt_double(s.tag.lat) << ' ' << fmt_double(s.tag.lon) << ' ' << s.seq_id
        << ' ' << s.city_id << ' ' << s.continent_id << ' '
        << (s.role == Role::Query ? 'Q' : 'D');
    for (double v : s.feat) out << ' ' << fmt_double(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_manifest: write failed for " + path);
}

ManifestData read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);

  ManifestData data;
  bool have_dim = false;
  std::set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!have_dim) {
      if (line.rfind("f=", 0) != 0) {
        throw std::runtime_error("read_manifest: missing f= header in " + path);
      }
      data.feature_dim = std::stoi(line.substr(2));
      if (data.feature_dim < 1) throw std::runtime_error("read_manifest: bad feature dim");
      have_dim = true;
      continue;
    }
    std::istringstream ss(line);
    GeoSample s;
    char role = 0;
    if (!(ss >> s.id >> s.tag.lat >> s.tag.lon >> s.seq_id >> s.city_id >> s.continent_id >>
          role)) {
      throw std::runtime_error("read_manifest: malformed line " + std::to_string(line_no));
    }
    if (role != 'Q' && role != 'D') {
      throw std::runtime_error("read_manifest: bad role on line " + std::to_string(line_no));
    }
    s.role = role == 'Q' ? Role::Query : Role::Database;
    s.feat.resize(static_cast<std::size_t>(data.feature_dim));
    for (double& v : s.feat) {
      if (!(ss >> v)) {
        throw std::runtime_error("read_manifest: expected " + std::to_string(data.feature_dim) +
                                 " feature values on line " + std::to_string(line_no));
      }
    }
    double extra;
    if (ss >> extra) {
      throw std::runtime_error("read_manifest: too many fields on line " + std::to_string(line_no));
    }
    if (!seen.insert(s.id).second) {
      throw std::runtime_error("read_manifest: duplicate id " + std::to_string(s.id));
    }
    data.samples.push_back(std::move(s));
  }
  if (!have_dim) throw std::runtime_error("read_manifest: empty manifest " + path);
  return data;
}

void write_partition(const std::string& path, std::span<const ClientManifest> clients,
                     std::span<const std::uint64_t> validation_ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_partition: cannot open " + path);
  std::set<std::uint64_t> val(validation_ids.begin(), validation_ids.end());
  for (const ClientManifest& cm : clients) {
    nlohmann::json j;
    j["client_id"] = cm.client_id;
    j["split"] = val.count(cm.client_id) ? "val" : "train";
    j["query_seqs"] = cm.query_seq_ids;
    j["db_seqs"] = cm.db_seq_ids;
    j["city_ids"] = cm.city_ids;
    j["continent_ids"] = cm.continent_ids;
    if (cm.founding_sample_id) j["founding_sample_id"] = *cm.founding_sample_id;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_partition: write failed for " + path);
}

std::vector<PartitionRecord> read_partition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_partition: cannot open " + path);
  std::vector<PartitionRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PartitionRecord rec;
    rec.client.client_id = j.at("client_id").get<std::uint64_t>();
    rec.validation = j.at("split").get<std::string>() == "val";
    rec.client.query_seq_ids = j.at("query_seqs").get<std::vector<std::uint64_t>>();
    rec.client.db_seq_ids = j.at("db_seqs").get<std::vector<std::uint64_t>>();
    rec.client.city_ids = j.at("city_ids").get<std::vector<std::uint32_t>>();
    rec.client.continent_ids = j.at("continent_ids").get<std::vector<std::uint32_t>>();
    if (j.contains("founding_sample_id")) {
      rec.client.founding_sample_id = j["founding_sample_id"].get<std::uint64_t>();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace fedret
