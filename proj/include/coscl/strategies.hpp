#pragma once

// Old-task regularisers: quadratic importance penalties (EWC, MAS) and
// class-balanced experience replay.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coscl/ensemble.hpp"
#include "coscl/rng.hpp"
#include "coscl/streams.hpp"

namespace coscl {

enum class StrategyKind { kNone, kEwc, kMas, kEr };

std::string to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(const std::string& name);

// Flat snapshot of the consolidated parameters and their accumulated
// importance, in EnsembleModel::parameters() order.
struct ImportanceState {
  std::vector<double> anchor;
  std::vector<double> importance;
  double lambda = 1.0;

  bool empty() const { return anchor.empty(); }
};

std::vector<double> flatten(std::span<const Tensor> params);
std::vector<double> flatten_parameters(const EnsembleModel& m);
// Overwrites parameter data from a flat vector of matching length.
void assign_parameters(const EnsembleModel& m, std::span<const double> flat);

// Mean over samples of the squared gradient of `log_prob(n)` w.r.t. params.
// Gradients of params are cleared afterwards.
std::vector<double> empirical_fisher(std::span<const Tensor> params, std::size_t n_samples,
                                     const std::function<Tensor(std::size_t)>& log_prob);

// Mean over samples of |d ||output(n)||^2 / d theta|.
std::vector<double> output_sensitivity(std::span<const Tensor> params, std::size_t n_samples,
                                       const std::function<Tensor(std::size_t)>& output);

// Diagonal Fisher of the joint prediction, using each sample's predicted
// (argmax) label. Adds to `prior.importance` and refreshes the anchor.
ImportanceState ewc_consolidate(const EnsembleModel& m, const Task& task, std::size_t head,
                                ImportanceState prior = {});

// MAS importance of the squared L2 norm of the joint logits.
ImportanceState mas_consolidate(const EnsembleModel& m, const Task& task, std::size_t head,
                                ImportanceState prior = {});

// lambda * sum_i I_i (theta_i - anchor_i)^2, differentiable in the params.
Tensor penalty(const ImportanceState& state, std::span<const Tensor> params);
Tensor penalty(const ImportanceState& state, const EnsembleModel& m);

struct ReplayItem {
  Sample sample;
  std::size_t head = 0;  // task position whose head classifies this sample
  int local_label = 0;   // output index within that head
  bool operator==(const ReplayItem&) const = default;
};

struct ReplayBuffer {
  std::size_t per_class_capacity = 20;
  std::map<int, std::vector<ReplayItem>> samples;  // keyed by global class id

  std::size_t size() const;
  bool empty() const { return size() == 0; }
};

// Keeps a seeded uniform subsample of at most per_class_capacity training
// samples for every class of `task`.
ReplayBuffer replay_update(ReplayBuffer buf, const Task& task, std::size_t head, std::uint64_t seed);

// Mean cross-entropy over buffered samples from heads < current_head, each
// routed through its own head. With max_samples > 0 and a larger buffer, a
// uniform draw (without replacement) of max_samples items is used.
// Returns a zero scalar when nothing qualifies.
Tensor replay_loss(const EnsembleModel& m, const ReplayBuffer& buf, std::size_t current_head,
                   const ForwardMode& mode = {},
                   std::size_t max_samples = 0, Rng* rng = nullptr);

}  // namespace coscl
