#include "era/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "era/distributions.hpp"
#include "era/error.hpp"
#include "era/nn.hpp"

namespace era::clf {

std::pair<Dataset, Dataset> make_blobs(const BlobSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2 || spec.dim == 0) throw ConfigError("make_blobs: need >= 2 classes and dim > 0");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> centres(spec.classes, std::vector<double>(spec.dim));
  for (auto& c : centres)
    for (double& v : c) v = spec.center_scale * normal(rng);
  auto draw = [&](std::size_t per_class) {
    const std::size_t n = per_class * spec.classes;
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % spec.classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    Dataset d{ad::Tensor(n, spec.dim), labels};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < spec.dim; ++j) d.x(i, j) = centres[labels[i]][j] + spec.noise * normal(rng);
    return d;
  };
  Dataset train = draw(spec.train_per_class);
  Dataset test = draw(spec.test_per_class);
  return {std::move(train), std::move(test)};
}

namespace {

ad::Var head(ad::Var logits, const ClassifierConfig& cfg) {
  return cfg.use_era ? disc::era_logits(logits, cfg.era, cfg.inverse) : logits;
}

struct TestStats {
  double accuracy = 0.0;
  double mean_entropy = 0.0;
  double min_entropy = std::numeric_limits<double>::infinity();
};

TestStats evaluate(nn::Mlp& net, const Dataset& d, const ClassifierConfig& cfg) {
  ad::Tape tape;
  ad::Var z = head(net.forward(tape, tape.constant(d.x), false), cfg);
  const ad::Tensor& v = z.value();
  TestStats s;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const auto row = v.row_span(r);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (pred == d.y[r]) ++correct;
    const double h = dist::categorical_entropy(row);
    s.mean_entropy += h / static_cast<double>(v.rows());
    s.min_entropy = std::min(s.min_entropy, h);
  }
  s.accuracy = static_cast<double>(correct) / static_cast<double>(v.rows());
  return s;
}

}  // namespace

run::RunRecord train_classifier(const ClassifierConfig& cfg, const BlobSpec& blobs, std::uint64_t seed,
                                const std::filesystem::path& checkpoint) {
  if (cfg.use_era) {
    cfg.era.validate();
    if (cfg.era.classes != blobs.classes) throw ConfigError("train_classifier: era.classes must equal blob classes");
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ConfigError("train_classifier: batch_size and epochs must be positive");
  const auto [train, test] = make_blobs(blobs, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  nn::Mlp net("clf", {{blobs.dim, cfg.hidden, cfg.hidden, blobs.classes}, nn::Activation::relu, false}, rng);
  nn::Adam opt(net.parameters(), {cfg.lr});

  run::RunRecord rec;
  rec.kind = cfg.use_era ? "classifier-era" : "classifier";
  rec.seed = seed;
  rec.config = {{"use_era", cfg.use_era},   {"h0", cfg.era.target_entropy},
                {"tau", cfg.era.tau},       {"inverse", cfg.inverse == disc::Inverse::approx ? "approx" : "exact"},
                {"epochs", cfg.epochs},     {"batch_size", cfg.batch_size},
                {"hidden", cfg.hidden},     {"lr", cfg.lr}};

  auto record = [&](std::size_t epoch, double loss) {
    const auto s = evaluate(net, test, cfg);
    rec.points.push_back({{"step", epoch},
                          {"train_loss", loss},
                          {"test_accuracy", s.accuracy},
                          {"mean_entropy", s.mean_entropy},
                          {"min_entropy", s.min_entropy}});
  };
  record(0, std::numeric_limits<double>::quiet_NaN());

  const std::size_t n = train.y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t m = std::min(cfg.batch_size, n - start);
      ad::Tensor xb(m, blobs.dim);
      std::vector<std::size_t> yb(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t k = order[start + i];
        std::copy(train.x.row_span(k).begin(), train.x.row_span(k).end(), xb.row_span(i).begin());
        yb[i] = train.y[k];
      }
      opt.zero_grad();
      ad::Tape tape;
      ad::Var z = head(net.forward(tape, tape.constant(std::move(xb))), cfg);
      ad::Var loss = ad::neg(ad::mean(ad::gather_cols(ad::log_softmax_rows(z), yb)));
      tape.backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    record(epoch, loss_sum / static_cast<double>(batches));
  }
  if (!checkpoint.empty()) nn::save_checkpoint(checkpoint, std::as_const(net).parameters());
  return rec;
}

}  // namespace era::clf
