#pragma once

// Cooperation of K small learners: a gated sum of per-learner features feeds
// a per-task output head. Gates are g[t][i] = sigmoid(s * alpha[t][i]).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coscl/learner.hpp"
#include "coscl/tensor.hpp"

namespace coscl {

enum class EnsembleMode { kFeatureEnsemble, kClassifierEnsemble, kSingle };

std::string to_string(EnsembleMode mode);
EnsembleMode parse_ensemble_mode(const std::string& name);

struct EnsembleConfig {
  std::size_t K = 5;
  double gate_scale = 100.0;
  double gamma = 0.02;  // may be negative
  bool use_gates = true;
  bool use_ec = true;
  EnsembleMode mode = EnsembleMode::kFeatureEnsemble;
  LearnerConfig learner_template;

  void validate() const;
};

struct Head {
  Tensor weight;  // [D x C_t]
  Tensor bias;    // [C_t]
};

struct Batch {
  Tensor x;  // [B x input_dim]
  std::vector<int> labels;
};

class EnsembleModel {
 public:
  // Learner i is initialised from derive_seed(seed, i); heads for every task
  // are created up front so that not-yet-trained tasks can be evaluated.
  static EnsembleModel create(const EnsembleConfig& cfg, std::span<const std::size_t> classes_per_task,
                              std::uint64_t seed);

  std::size_t K() const { return learners.size(); }
  std::size_t num_tasks() const { return heads.size(); }
  std::size_t feature_dim() const { return learners.front().config.feature_dim; }

  // g[t][i]; throws TaskError for an unknown task.
  Tensor gate(std::size_t task, std::size_t learner) const;
  double gate_value(std::size_t task, std::size_t learner) const;
  void check_task(std::size_t task) const;

  // Learner parameters, then alphas (task-major), then heads. Stable order.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  // Learners only; this is what budgets are matched on.
  std::size_t backbone_parameter_count() const;

  std::vector<Learner> learners;
  std::vector<std::vector<Tensor>> alphas;  // [T][K] single-element tensors
  std::vector<Head> heads;
  double gate_scale = 100.0;
  bool use_gates = true;
  EnsembleMode mode = EnsembleMode::kFeatureEnsemble;
};

Tensor apply_head(const Head& head, const Tensor& z);

// head_t(sum_i g[t][i] * f_i(x)); gates are the constant 1 when disabled.
Tensor forward_joint(const EnsembleModel& m, const Tensor& x, std::size_t task,
                     const ForwardMode& mode = {});

// softmax(head_t(g[t][i] * f_i(x))) for every learner i.
std::vector<Tensor> forward_per_learner(const EnsembleModel& m, const Tensor& x, std::size_t task,
                                        const ForwardMode& mode = {});

// (1/K)(1/B) sum over ordered pairs i != j of KL(p_i || p_j). Zero for K < 2.
Tensor ec_loss(std::span<const Tensor> probs);

// cross_entropy(forward_joint) + strategy_penalty + gamma * ec_loss.
// `strategy_penalty` may be an undefined Tensor meaning no penalty. The EC
// term is skipped entirely when gamma == 0 or K < 2.
Tensor coscl_objective(const EnsembleModel& m, const Batch& batch, std::size_t task,
                       const Tensor& strategy_penalty, double gamma, const ForwardMode& mode = {});

// Mean of the members' softmax outputs.
Tensor forward_classifier_ensemble(std::span<const EnsembleModel> models, const Tensor& x,
                                   std::size_t task);

}  // namespace coscl
