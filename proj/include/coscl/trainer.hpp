#pragma once

// Sequential task training for one model under one continual strategy.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "coscl/ensemble.hpp"
#include "coscl/optim.hpp"
#include "coscl/strategies.hpp"
#include "coscl/streams.hpp"

namespace coscl {

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kNone;
  double lambda = 1.0;
  std::size_t buffer_capacity = 20;

  void validate() const;
};

// Shuffled minibatch index lists for one epoch of a task.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_samples, std::size_t batch,
                                                    std::uint64_t seed, std::size_t head,
                                                    std::size_t epoch);

class ContinualTrainer {
 public:
  // The model is borrowed and must outlive the trainer.
  ContinualTrainer(EnsembleModel& model, const EnsembleConfig& ensemble, const StrategyConfig& strategy,
                   const OptimizerConfig& optimizer, std::uint64_t seed);

  // Resets optimizer state, then runs optimizer.epochs epochs on task.train.
  void train_task(const Task& task, std::size_t head);
  // One optimizer update on the given rows; returns the objective value.
  double train_step(Optimizer& opt, const Task& task, std::size_t head,
                    std::span<const std::size_t> rows);
  // Task-boundary bookkeeping: importance (ewc/mas) or buffer (er).
  void consolidate(const Task& task, std::size_t head);

  Optimizer make_optimizer() const;

  const ImportanceState& importance() const { return importance_; }
  void set_importance(ImportanceState s) { importance_ = std::move(s); }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::uint64_t step_count() const { return step_; }

 private:
  EnsembleModel& model_;
  EnsembleConfig ensemble_;
  StrategyConfig strategy_;
  OptimizerConfig optimizer_;
  std::uint64_t seed_;
  std::uint64_t step_ = 0;
  ImportanceState importance_;
  ReplayBuffer buffer_;
  Rng replay_rng_;
};

// Fraction of `samples` whose argmax prediction under head `head` is correct.
double accuracy(const EnsembleModel& m, const Task& task, std::size_t head,
                std::span<const Sample> samples);
double accuracy(std::span<const EnsembleModel> members, const Task& task, std::size_t head,
                std::span<const Sample> samples);

// Per-learner accuracy of head_t(g[t][i] * f_i(x)).
double learner_accuracy(const EnsembleModel& m, std::size_t learner, const Task& task,
                        std::size_t head, std::span<const Sample> samples);

}  // namespace coscl
