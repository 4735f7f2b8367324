#include "coscl/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "coscl/errors.hpp"
#include "coscl/rng.hpp"

namespace coscl {

void StrategyConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("strategy lambda must be finite and >= 0");
  if (kind == StrategyKind::kEr && buffer_capacity == 0) {
    throw ConfigError("experience replay needs buffer_capacity >= 1");
  }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_samples, std::size_t batch,
                                                    std::uint64_t seed, std::size_t head,
                                                    std::size_t epoch) {
  Rng rng(derive_seed({seed, 0xe90cULL, head, epoch}));
  auto order = permutation(n_samples, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n_samples; b += batch) {
    const std::size_t e = std::min(n_samples, b + batch);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

ContinualTrainer::ContinualTrainer(EnsembleModel& model, const EnsembleConfig& ensemble,
                                   const StrategyConfig& strategy, const OptimizerConfig& optimizer,
                                   std::uint64_t seed)
    : model_(model),
      ensemble_(ensemble),
      strategy_(strategy),
      optimizer_(optimizer),
      seed_(seed),
      replay_rng_(derive_seed({seed, 0x2e91a7ULL})) {
  strategy_.validate();
  optimizer_.validate();
  importance_.lambda = strategy_.lambda;
  buffer_.per_class_capacity = strategy_.buffer_capacity;
}

Optimizer ContinualTrainer::make_optimizer() const { return Optimizer(model_.parameters(), optimizer_); }

double ContinualTrainer::train_step(Optimizer& opt, const Task& task, std::size_t head,
                                    std::span<const std::size_t> rows) {
  const Batch batch = make_batch(task, task.train, rows);
  const ForwardMode mode{true, seed_, step_};
  Tensor reg;
  if ((strategy_.kind == StrategyKind::kEwc || strategy_.kind == StrategyKind::kMas) &&
      !importance_.empty()) {
    reg = penalty(importance_, model_);
  }
  const double gamma = ensemble_.use_ec ? ensemble_.gamma : 0.0;
  Tensor loss = coscl_objective(model_, batch, head, reg, gamma, mode);
  if (strategy_.kind == StrategyKind::kEr && head > 0) {
    loss = add(loss, replay_loss(model_, buffer_, head, mode, optimizer_.batch, &replay_rng_));
  }
  opt.zero_grad();
  backward(loss);
  opt.step();
  ++step_;
  return loss.item();
}

void ContinualTrainer::train_task(const Task& task, std::size_t head) {
  model_.check_task(head);
  if (task.train.empty()) throw ContractError("task " + std::to_string(task.id) + " has no training data");
  Optimizer opt = make_optimizer();
  for (std::size_t epoch = 0; epoch < optimizer_.epochs; ++epoch) {
    for (const auto& rows : epoch_batches(task.train.size(), optimizer_.batch, seed_, head, epoch)) {
      train_step(opt, task, head, rows);
    }
  }
}

void ContinualTrainer::consolidate(const Task& task, std::size_t head) {
  switch (strategy_.kind) {
    case StrategyKind::kEwc:
      importance_ = ewc_consolidate(model_, task, head, std::move(importance_));
      break;
    case StrategyKind::kMas:
      importance_ = mas_consolidate(model_, task, head, std::move(importance_));
      break;
    case StrategyKind::kEr:
      buffer_ = replay_update(std::move(buffer_), task, head, derive_seed({seed_, head}));
      break;
    case StrategyKind::kNone:
      break;
  }
}

namespace {

double argmax_accuracy(const Tensor& scores, std::span<const int> labels) {
  const std::size_t c = scores.cols();
  auto d = scores.data();
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    auto row = d.subspan(n * c, c);
    const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
    if (pred == labels[n]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

double accuracy(const EnsembleModel& m, const Task& task, std::size_t head, std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("accuracy on empty sample set");
  const Batch b = make_batch(task, samples);
  return argmax_accuracy(forward_joint(m, b.x, head), b.labels);
}

double accuracy(std::span<const EnsembleModel> members, const Task& task, std::size_t head,
                std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("accuracy on empty sample set");
  const Batch b = make_batch(task, samples);
  return argmax_accuracy(forward_classifier_ensemble(members, b.x, head), b.labels);
}

double learner_accuracy(const EnsembleModel& m, std::size_t learner, const Task& task, std::size_t head,
                        std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("accuracy on empty sample set");
  m.check_task(head);
  const Batch b = make_batch(task, samples);
  Tensor f = features(m.learners.at(learner), b.x);
  if (m.use_gates) f = mul(f, m.gate(head, learner));
  return argmax_accuracy(apply_head(m.heads[head], f), b.labels);
}

}  // namespace coscl
