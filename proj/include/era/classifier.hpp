#pragma once

// Synthetic softmax classification with an ERA output head.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "era/autodiff.hpp"
#include "era/discrete.hpp"
#include "era/run_record.hpp"

namespace era::clf {

/// Balanced isotropic Gaussian blobs; class centres ~ N(0, center_scale^2 I).
struct BlobSpec {
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  double center_scale = 1.0;
  double noise = 1.0;
};

struct Dataset {
  ad::Tensor x;
  std::vector<std::size_t> y;
};

/// (train, test), deterministic in seed.
std::pair<Dataset, Dataset> make_blobs(const BlobSpec& spec, std::uint64_t seed);

struct ClassifierConfig {
  bool use_era = true;
  disc::EraDiscreteConfig era{0.6, 4.0, 10};
  disc::Inverse inverse = disc::Inverse::approx;
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  std::size_t hidden = 64;
  double lr = 1e-3;
};

/// Points: epoch 0 (before training) through epochs, each with test accuracy,
/// mean test predictive entropy and its minimum, and mean train loss.
/// Writes the final network to `checkpoint` when it is non-empty.
run::RunRecord train_classifier(const ClassifierConfig& cfg, const BlobSpec& blobs, std::uint64_t seed,
                                const std::filesystem::path& checkpoint = {});

}  // namespace era::clf
