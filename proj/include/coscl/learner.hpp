#pragma once

// One small continual learner: a ReLU MLP feature extractor followed by a
// linear mixing layer that maps into the ensemble's common feature space.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "coscl/tensor.hpp"

namespace coscl {

struct LearnerConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;
  std::size_t feature_dim = 0;
  double dropout_rate = 0.0;
  std::uint64_t init_seed = 0;

  // Throws ConfigError on zero widths, empty hidden stack or dropout outside [0,1).
  void validate() const;
  bool operator==(const LearnerConfig&) const = default;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct Learner {
  std::vector<Linear> layers;
  Linear mix;
  LearnerConfig config;

  // Weight, bias per hidden layer, then the mixing layer.
  std::vector<Tensor> parameters() const;
};

// Controls dropout. In train mode the mask for each layer is a pure function
// of (seed, step, learner init_seed, layer index).
struct ForwardMode {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

Learner init_learner(const LearnerConfig& cfg);

// x: [B x input_dim] -> [B x feature_dim].
Tensor features(const Learner& learner, const Tensor& x, const ForwardMode& mode = {});

std::size_t parameter_count(const LearnerConfig& cfg);
std::size_t parameter_count(const Learner& learner);

// Largest uniform width scaling of `tmpl` such that K * parameter_count fits
// in `total_budget`. Widths are rounded down and never drop below 1.
LearnerConfig budget_match(std::size_t total_budget, std::size_t K, const LearnerConfig& tmpl);

}  // namespace coscl
