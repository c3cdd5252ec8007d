#include "era/run_record.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace era::run {

using nlohmann::json;

const json& RunRecord::final_point() const {
  if (points.empty()) throw std::logic_error("RunRecord: no evaluation points");
  return points.back();
}

void write_jsonl(const std::filesystem::path& path, const RunRecord& record, const std::string& timestamp) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  json header = {{"type", "header"}, {"kind", record.kind}, {"seed", record.seed}, {"config", record.config},
                 {"timestamp", timestamp}};
  os << header.dump() << '\n';
  for (const auto& p : record.points) {
    json line = p;
    line["type"] = "point";
    os << line.dump() << '\n';
  }
}

RunRecord read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  RunRecord r;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      r.kind = j.value("kind", "");
      r.seed = j.value("seed", std::uint64_t{0});
      r.config = j.value("config", json::object());
      header = true;
    } else if (type == "point") {
      j.erase("type");
      r.points.push_back(std::move(j));
    } else {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": unknown record type");
    }
  }
  if (!header) throw std::runtime_error(path.string() + ": missing header line");
  return r;
}

namespace {

std::vector<std::string> numeric_keys(const json& point) {
  std::vector<std::string> keys;
  for (auto it = point.begin(); it != point.end(); ++it)
    if (it.value().is_number() && it.key() != "step") keys.push_back(it.key());
  return keys;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

}  // namespace

std::string summary_csv(const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("summary_csv: no records");
  std::ostringstream os;
  os << "metric,mean,std,n\n";
  for (const auto& key : numeric_keys(records.front().final_point())) {
    std::vector<double> xs;
    for (const auto& r : records) {
      const auto& p = r.final_point();
      if (p.contains(key) && p[key].is_number()) xs.push_back(p[key].get<double>());
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    os << key << ',' << fmt(mean) << ',' << fmt(std::sqrt(var / static_cast<double>(xs.size()))) << ','
       << xs.size() << '\n';
  }
  return os.str();
}

std::string compare_csv(const std::vector<RunRecord>& records, const std::vector<std::string>& labels) {
  if (records.size() < 2) throw std::invalid_argument("compare: need at least two run records");
  if (labels.size() != records.size()) throw std::invalid_argument("compare: one label per record");
  const auto& base = records.front();
  for (const auto& r : records) {
    if (r.points.size() != base.points.size()) throw std::runtime_error("compare: evaluation grids differ in length");
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      if (r.points[i].value("step", -1L) != base.points[i].value("step", -1L)) {
        throw std::runtime_error("compare: evaluation steps differ at point " + std::to_string(i));
      }
    }
  }
  std::ostringstream os;
  os << "step,metric," << labels[0];
  for (std::size_t k = 1; k < records.size(); ++k) os << ',' << labels[k] << ",delta_" << labels[k];
  os << '\n';
  for (std::size_t i = 0; i < base.points.size(); ++i) {
    for (const auto& key : numeric_keys(base.points[i])) {
      const double b = base.points[i][key].get<double>();
      os << base.points[i].value("step", 0L) << ',' << key << ',' << fmt(b);
      for (std::size_t k = 1; k < records.size(); ++k) {
        const auto& p = records[k].points[i];
        if (p.contains(key) && p[key].is_number()) {
          const double v = p[key].get<double>();
          os << ',' << fmt(v) << ',' << fmt(v - b);
        } else {
          os << ",,";
        }
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

}  // namespace era::run
