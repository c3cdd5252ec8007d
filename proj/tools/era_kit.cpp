// era-kit: verification suites, training runs and run comparison.

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "era/classifier.hpp"
#include "era/error.hpp"
#include "era/grpo_toy.hpp"
#include "era/nn.hpp"
#include "era/run_record.hpp"
#include "era/sac.hpp"
#include "era/verify.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

// Typed access to the merged config with the offending key in every error.
class Config {
 public:
  explicit Config(pt::ptree tree) : tree_(std::move(tree)) {}

  template <typename T>
  T get(const std::string& key, T fallback) const {
    auto v = tree_.get_optional<std::string>(key);
    return v ? convert<T>(key, *v) : fallback;
  }

  template <typename T>
  std::optional<T> find(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return convert<T>(key, *v);
  }

  template <typename T>
  T require(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) throw era::ConfigError("missing config field '" + key + "'");
    return convert<T>(key, *v);
  }

  bool has(const std::string& key) const { return tree_.get_optional<std::string>(key).has_value(); }
  void put(const std::string& key, const std::string& value) { tree_.put(key, value); }

 private:
  template <typename T>
  static T convert(const std::string& key, const std::string& raw) {
    if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
      if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
      throw era::ConfigError("config field '" + key + "': expected a boolean, got '" + raw + "'");
    } else {
      std::istringstream ss(raw);
      T v{};
      if (raw == "inf" || raw == "+inf") {
        if constexpr (std::numeric_limits<T>::has_infinity) return std::numeric_limits<T>::infinity();
      }
      if (!(ss >> v) || !(ss >> std::ws).eof()) {
        throw era::ConfigError("config field '" + key + "': cannot parse '" + raw + "'");
      }
      return v;
    }
  }

  pt::ptree tree_;
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoull(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw era::ConfigError("config field 'run.seeds': bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw era::ConfigError("config field 'run.seeds': no seeds");
  return out;
}

std::size_t thread_cap() {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ERA_KIT_THREADS")) {
    try {
      cap = std::max<std::size_t>(1, std::stoul(env));
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring malformed ERA_KIT_THREADS='" << env << "'\n";
    }
  }
  return cap;
}

// Runs fn(i) for every index on at most thread_cap() threads.
template <typename F>
void fan_out(std::size_t n, F&& fn) {
  const std::size_t workers = std::min(n, thread_cap());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// --- verify ----------------------------------------------------------------

int cmd_verify(const std::string& suite, const fs::path& out_dir, std::uint64_t seed) {
  const auto reports = era::verify::run_suite(suite, seed);
  fs::create_directories(out_dir);
  const fs::path path = out_dir / ("verify_" + suite + ".jsonl");
  std::ofstream os(path);
  bool ok = true;
  for (const auto& rep : reports) {
    for (const auto& p : rep.properties) {
      std::cout << rep.suite << "." << p.name << ": " << (p.pass ? "pass" : "FAIL") << " (measured " << p.measured
                << ", threshold " << p.threshold << ", trials " << p.trials << ", " << p.seconds << " s)";
      if (!p.detail.empty()) std::cout << " -- " << p.detail;
      std::cout << '\n';
      os << era::verify::to_json(p, rep.suite).dump() << '\n';
      ok = ok && p.pass;
    }
  }
  std::cout << "report: " << path.string() << '\n';
  return ok ? 0 : kExitFail;
}

// --- train -----------------------------------------------------------------

era::sac::SacConfig sac_config(const Config& c, era::env::EnvKind env) {
  auto s = era::sac::SacConfig::for_env(env);
  s.gamma = c.get("sac.gamma", s.gamma);
  s.tau = c.get("sac.polyak_tau", s.tau);
  s.alpha = c.get("sac.alpha", s.alpha);
  s.batch_size = c.get("sac.batch_size", s.batch_size);
  s.grad_steps = c.get("sac.grad_steps", s.grad_steps);
  s.warmup_steps = c.get("sac.warmup_steps", s.warmup_steps);
  s.hidden = c.get("sac.hidden", s.hidden);
  s.layer_norm = c.get("sac.layer_norm", s.layer_norm);
  s.lr = c.get("sac.lr", s.lr);
  s.buffer_capacity = c.get("sac.buffer_capacity", s.buffer_capacity);
  s.eval_every = c.get("sac.eval_every", s.eval_every);
  s.eval_episodes = c.get("sac.eval_episodes", s.eval_episodes);
  if (auto v = c.find<double>("era.sigma_min")) s.log_sigma_min = std::log(*v);
  if (auto v = c.find<double>("era.sigma_max")) s.log_sigma_max = std::log(*v);
  s.target_entropy = c.find<double>("era.h0");
  s.learned_delta = c.get("era.learned_delta", s.learned_delta);
  s.delta = c.get("era.delta", s.delta);
  s.delta_lr = c.get("era.delta_lr", s.delta_lr);
  s.validate();
  return s;
}

era::clf::ClassifierConfig classifier_config(const Config& c, std::size_t classes) {
  era::clf::ClassifierConfig k;
  k.use_era = c.get("classifier.use_era", k.use_era);
  k.era.target_entropy = c.get("era.h0", k.era.target_entropy);
  k.era.tau = c.get("classifier.tau", k.era.tau);
  k.era.classes = classes;
  const auto inv = c.get<std::string>("classifier.inverse", "approx");
  if (inv != "approx" && inv != "exact") throw era::ConfigError("config field 'classifier.inverse': expected approx or exact");
  k.inverse = inv == "approx" ? era::disc::Inverse::approx : era::disc::Inverse::exact;
  k.epochs = c.get("run.steps", k.epochs);
  k.batch_size = c.get("classifier.batch_size", k.batch_size);
  k.hidden = c.get("classifier.hidden", k.hidden);
  k.lr = c.get("classifier.lr", k.lr);
  if (k.use_era) k.era.validate();
  return k;
}

era::grpo::ToyGrpoConfig grpo_config(const Config& c, bool use_era) {
  era::grpo::ToyGrpoConfig g;
  g.use_era = use_era;
  g.vocab = c.get("grpo.vocab", g.vocab);
  g.length = c.get("grpo.length", g.length);
  g.patterns = c.get("grpo.patterns", g.patterns);
  g.allowed_per_position = c.get("grpo.allowed_per_position", g.allowed_per_position);
  g.group_size = c.get("grpo.group_size", g.group_size);
  g.groups_per_step = c.get("grpo.groups_per_step", g.groups_per_step);
  g.steps = c.get("run.steps", g.steps);
  g.embed = c.get("grpo.embed", g.embed);
  g.hidden = c.get("grpo.hidden", g.hidden);
  g.lr = c.get("grpo.lr", g.lr);
  g.success_prob = c.get("grpo.success_prob", g.success_prob);
  g.task_seed = c.get("grpo.task_seed", g.task_seed);
  g.era.omega_low = c.get("grpo.omega_low", g.era.omega_low);
  if (auto hi = c.find<double>("grpo.omega_high"); hi && std::isfinite(*hi)) g.era.omega_high = *hi;
  g.era.k = c.get("grpo.k", g.era.k);
  g.era.top_frac = c.get("grpo.top_frac", g.era.top_frac);
  g.era.scale_advantages = c.get("grpo.scale_advantages", g.era.scale_advantages);
  g.validate();
  return g;
}

void write_hresp_trace(const fs::path& path, const era::run::RunRecord& rec) {
  std::ofstream os(path);
  os << "step,h_resp,mean_reward,frac_below_low,frac_above_high,frac_sharpen,frac_flatten\n";
  for (const auto& p : rec.points) {
    os << p["step"].get<long>() << ',' << p["h_resp"].get<double>() << ',' << p["mean_reward"].get<double>() << ','
       << p["frac_below_low"].get<double>() << ',' << p["frac_above_high"].get<double>() << ','
       << p["frac_sharpen"].get<double>() << ',' << p["frac_flatten"].get<double>() << '\n';
  }
}

int cmd_train(const std::string& kind, Config cfg) {
  const auto seeds = parse_seeds(cfg.get<std::string>("run.seeds", "0"));
  const fs::path out_dir = cfg.get<std::string>("run.out_dir", "era-runs");
  fs::create_directories(out_dir);
  std::vector<era::run::RunRecord> records(seeds.size());
  const std::string stamp = era::run::utc_timestamp();

  std::function<era::run::RunRecord(std::uint64_t, const fs::path&)> run_one;
  if (kind == "sac" || kind == "sac-era") {
    const auto env = era::env::parse_env_kind(cfg.get<std::string>("run.env", "pointmass"));
    const auto s = sac_config(cfg, env);
    const auto steps = cfg.get<std::size_t>("run.steps", 20000);
    const auto variant = era::sac::parse_variant(kind);
    run_one = [=](std::uint64_t seed, const fs::path& ckpt) {
      return era::sac::train_sac(env, s, variant, seed, steps, ckpt);
    };
  } else if (kind == "classifier") {
    era::clf::BlobSpec blobs;
    blobs.classes = cfg.get("classifier.classes", blobs.classes);
    blobs.dim = cfg.get("classifier.dim", blobs.dim);
    const auto k = classifier_config(cfg, blobs.classes);
    run_one = [=](std::uint64_t seed, const fs::path& ckpt) { return era::clf::train_classifier(k, blobs, seed, ckpt); };
  } else {
    const auto g = grpo_config(cfg, kind == "grpo-era-toy");
    run_one = [=](std::uint64_t seed, const fs::path& ckpt) { return era::grpo::train_toy_grpo(g, seed, ckpt); };
  }

  auto stem_of = [&](std::size_t i) { return kind + "_seed" + std::to_string(seeds[i]); };
  fan_out(seeds.size(), [&](std::size_t i) { records[i] = run_one(seeds[i], out_dir / (stem_of(i) + ".ckpt")); });

  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const std::string stem = stem_of(i);
    era::run::write_jsonl(out_dir / (stem + ".jsonl"), records[i], stamp);
    if (kind.rfind("grpo", 0) == 0) write_hresp_trace(out_dir / (stem + "_hresp.csv"), records[i]);
    std::cout << stem << ": ";
    const auto& last = records[i].final_point();
    for (const char* key : {"return", "test_accuracy", "mean_entropy", "h_resp", "mean_reward"})
      if (last.contains(key)) std::cout << key << '=' << last[key].get<double>() << ' ';
    std::cout << '\n';
  }
  const fs::path summary = out_dir / (kind + "_summary.csv");
  std::ofstream(summary) << era::run::summary_csv(records);
  std::cout << "summary: " << summary.string() << '\n';
  return 0;
}

// --- compare -----------------------------------------------------------------

int cmd_compare(const std::vector<std::string>& paths, const std::string& out) {
  std::vector<era::run::RunRecord> recs;
  std::vector<std::string> labels;
  for (const auto& p : paths) {
    recs.push_back(era::run::read_jsonl(p));
    labels.push_back(fs::path(p).stem().string());
  }
  const std::string csv = era::run::compare_csv(recs, labels);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream(out) << csv;
    std::cout << "comparison: " << out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"era-kit: entropy regularizing activation toolkit"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand("verify", "Run randomized property suites");
  std::string suite = "all";
  std::string verify_out = "era-runs";
  std::uint64_t verify_seed = 0;
  verify->add_option("--suite", suite, "numerics | continuous | discrete | llm | all")
      ->check(CLI::IsMember(era::verify::suite_names()));
  verify->add_option("--out-dir", verify_out, "Directory for the JSON-lines report");
  verify->add_option("--seed", verify_seed, "Base seed for random draws");

  auto* train = app.add_subcommand("train", "Train one of the demonstration tasks");
  std::string kind;
  std::string config_path;
  train->add_option("kind", kind, "sac | sac-era | classifier | grpo-toy | grpo-era-toy")
      ->required()
      ->check(CLI::IsMember({"sac", "sac-era", "classifier", "grpo-toy", "grpo-era-toy"}));
  train->add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  // Flags override config keys.
  const std::vector<std::pair<std::string, std::string>> flag_keys = {
      {"--env", "run.env"},           {"--steps", "run.steps"},       {"--seeds", "run.seeds"},
      {"--out-dir", "run.out_dir"},   {"--omega-low", "grpo.omega_low"}, {"--omega-high", "grpo.omega_high"},
      {"--k", "grpo.k"},              {"--h0", "era.h0"},             {"--sigma-min", "era.sigma_min"},
      {"--sigma-max", "era.sigma_max"}, {"--tau", "classifier.tau"}};
  std::vector<std::string> flag_values(flag_keys.size());
  for (std::size_t i = 0; i < flag_keys.size(); ++i) {
    train->add_option(flag_keys[i].first, flag_values[i], "Overrides " + flag_keys[i].second);
  }

  auto* compare = app.add_subcommand("compare", "Align run records and emit metric deltas as CSV");
  std::vector<std::string> paths;
  std::string compare_out;
  compare->add_option("records", paths, "Run record files (JSON lines)")->required()->expected(2, -1)
      ->check(CLI::ExistingFile);
  compare->add_option("--out", compare_out, "Write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*verify) return cmd_verify(suite, verify_out, verify_seed);
    if (*train) {
      pt::ptree tree;
      if (!config_path.empty()) {
        try {
          pt::read_ini(config_path, tree);
        } catch (const pt::ini_parser_error& e) {
          std::cerr << "error: " << e.filename() << ":" << e.line() << ": " << e.message() << '\n';
          return kExitUsage;
        }
      }
      Config cfg(std::move(tree));
      if (!config_path.empty()) cfg.require<std::size_t>("run.steps");
      for (std::size_t i = 0; i < flag_keys.size(); ++i) {
        if (!flag_values[i].empty()) cfg.put(flag_keys[i].second, flag_values[i]);
      }
      return cmd_train(kind, std::move(cfg));
    }
    if (*compare) return cmd_compare(paths, compare_out);
  } catch (const era::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFail;
  }
  return kExitUsage;
}
