#pragma once

// Run records: one JSON object per evaluation point, a header line carrying
// the only non-deterministic field (timestamp), and CSV summaries.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace era::run {

struct RunRecord {
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  /// Each point has at least "step"; remaining keys are numeric metrics.
  std::vector<nlohmann::json> points;

  const nlohmann::json& final_point() const;
};

/// JSON-lines: header {"type":"header",...,"timestamp":...} then one
/// {"type":"point",...} per evaluation point.
void write_jsonl(const std::filesystem::path& path, const RunRecord& record, const std::string& timestamp);
RunRecord read_jsonl(const std::filesystem::path& path);

/// Mean and population std over records of every numeric metric at the final
/// point: columns metric,mean,std,n.
std::string summary_csv(const std::vector<RunRecord>& records);

/// Aligned deltas of each record against the first: columns
/// step,metric,<base>,<other>,delta... Throws if step grids differ.
std::string compare_csv(const std::vector<RunRecord>& records, const std::vector<std::string>& labels);

std::string utc_timestamp();

}  // namespace era::run
