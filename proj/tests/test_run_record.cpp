#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <string>

#include "era/run_record.hpp"

using namespace era::run;
namespace fs = std::filesystem;

namespace {

RunRecord make(std::uint64_t seed, double offset) {
  RunRecord r;
  r.kind = "sac-era";
  r.seed = seed;
  r.config = {{"steps", 4000}};
  r.points.push_back({{"step", 2000}, {"return", -50.0 + offset}});
  r.points.push_back({{"step", 4000}, {"return", -20.0 + offset}});
  return r;
}

}  // namespace

TEST_CASE("json lines round trip") {
  const fs::path path = fs::temp_directory_path() / "era_record_test.jsonl";
  write_jsonl(path, make(3, 1.0), "2026-01-01T00:00:00Z");
  const auto back = read_jsonl(path);
  CHECK(back.kind == "sac-era");
  CHECK(back.seed == 3);
  CHECK(back.points.size() == 2);
  CHECK(back.final_point()["return"].get<double>() == -19.0);
  CHECK(back.config["steps"].get<int>() == 4000);
  fs::remove(path);
}

TEST_CASE("summary csv") {
  const std::string csv = summary_csv({make(0, 0.0), make(1, 2.0)});
  CHECK(csv.rfind("metric,mean,std,n\n", 0) == 0);
  CHECK(csv.find("return,-19,1,2") != std::string::npos);
}

TEST_CASE("compare csv") {
  const std::string same = compare_csv({make(0, 0.0), make(0, 0.0)}, {"a", "b"});
  CHECK(same.find("step,metric,a,b,delta_b") != std::string::npos);
  std::istringstream is(same);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) CHECK(line.substr(line.rfind(',') + 1) == "0");

  const std::string diff = compare_csv({make(0, 0.0), make(0, 5.0)}, {"sac", "sac-era"});
  CHECK(diff.find("4000,return,-20,-15,5") != std::string::npos);

  RunRecord other = make(0, 0.0);
  other.points.pop_back();
  CHECK_THROWS(compare_csv({make(0, 0.0), other}, {"a", "b"}));
}
