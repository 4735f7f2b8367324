#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "coscl/tensor.hpp"

namespace coscl {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// First-order update over a fixed parameter list. Parameters without a
// gradient in a given step are left untouched (their moments do not decay).
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, const OptimizerConfig& cfg);

  void zero_grad();
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace coscl
