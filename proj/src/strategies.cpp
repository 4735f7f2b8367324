#include "coscl/strategies.hpp"

#include <algorithm>
#include <cmath>

#include "coscl/errors.hpp"

namespace coscl {

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kNone:
      return "none";
    case StrategyKind::kEwc:
      return "ewc";
    case StrategyKind::kMas:
      return "mas";
    case StrategyKind::kEr:
      return "er";
  }
  return "?";
}

StrategyKind parse_strategy_kind(const std::string& name) {
  if (name == "none") return StrategyKind::kNone;
  if (name == "ewc") return StrategyKind::kEwc;
  if (name == "mas") return StrategyKind::kMas;
  if (name == "er") return StrategyKind::kEr;
  throw ConfigError("unknown strategy '" + name + "'");
}

std::vector<double> flatten(std::span<const Tensor> params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

std::vector<double> flatten_parameters(const EnsembleModel& m) { return flatten(m.parameters()); }

void assign_parameters(const EnsembleModel& m, std::span<const double> flat) {
  auto params = m.parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();
  if (total != flat.size()) {
    throw ContractError("assign_parameters: " + std::to_string(flat.size()) + " values for " +
                        std::to_string(total) + " parameters");
  }
  std::size_t off = 0;
  for (auto& p : params) {
    auto d = p.mutable_data();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + d.size()), d.begin());
    off += d.size();
  }
}

namespace {

std::size_t total_size(std::span<const Tensor> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

void clear_grads(std::span<const Tensor> params) {
  for (auto p : params) p.clear_grad();
}

// Runs `loss_of(n)` backward per sample and folds each parameter gradient
// entry through `fold` into the accumulator.
template <typename Fold>
std::vector<double> per_sample_grad_mean(std::span<const Tensor> params, std::size_t n_samples,
                                         const std::function<Tensor(std::size_t)>& loss_of, Fold fold) {
  if (n_samples == 0) throw ContractError("importance estimation needs at least one sample");
  std::vector<double> acc(total_size(params), 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    clear_grads(params);
    backward(loss_of(n));
    std::size_t off = 0;
    for (const auto& p : params) {
      auto g = p.grad();
      if (!g.empty()) {
        for (std::size_t k = 0; k < g.size(); ++k) acc[off + k] += fold(g[k]);
      }
      off += p.numel();
    }
  }
  clear_grads(params);
  for (auto& v : acc) v /= static_cast<double>(n_samples);
  return acc;
}

ImportanceState accumulate(const EnsembleModel& m, std::vector<double> fresh, ImportanceState prior) {
  ImportanceState out;
  out.lambda = prior.lambda;
  out.anchor = flatten_parameters(m);
  if (!prior.importance.empty() && prior.importance.size() != fresh.size()) {
    throw ContractError("importance state does not match the model's parameter count");
  }
  out.importance = std::move(fresh);
  if (!prior.importance.empty()) {
    for (std::size_t k = 0; k < out.importance.size(); ++k) out.importance[k] += prior.importance[k];
  }
  return out;
}

void require_samples(const Task& task) {
  if (task.train.empty()) throw ContractError("consolidation needs task training data");
}

}  // namespace

std::vector<double> empirical_fisher(std::span<const Tensor> params, std::size_t n_samples,
                                     const std::function<Tensor(std::size_t)>& log_prob) {
  return per_sample_grad_mean(params, n_samples, log_prob, [](double g) { return g * g; });
}

std::vector<double> output_sensitivity(std::span<const Tensor> params, std::size_t n_samples,
                                       const std::function<Tensor(std::size_t)>& output) {
  return per_sample_grad_mean(
      params, n_samples,
      [&](std::size_t n) {
        Tensor y = output(n);
        return sum(mul(y, y));
      },
      [](double g) { return std::abs(g); });
}

ImportanceState ewc_consolidate(const EnsembleModel& m, const Task& task, std::size_t head,
                                ImportanceState prior) {
  require_samples(task);
  m.check_task(head);
  const auto params = m.parameters();
  auto fisher = empirical_fisher(params, task.train.size(), [&](std::size_t n) {
    Batch b = make_batch(task, std::span(&task.train[n], 1));
    Tensor logits = forward_joint(m, b.x, head);
    auto row = logits.data();
    const int predicted = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    const int label[1] = {predicted};
    return scale(softmax_cross_entropy(logits, label), -1.0);
  });
  return accumulate(m, std::move(fisher), std::move(prior));
}

ImportanceState mas_consolidate(const EnsembleModel& m, const Task& task, std::size_t head,
                                ImportanceState prior) {
  require_samples(task);
  m.check_task(head);
  const auto params = m.parameters();
  auto sens = output_sensitivity(params, task.train.size(), [&](std::size_t n) {
    Batch b = make_batch(task, std::span(&task.train[n], 1));
    return forward_joint(m, b.x, head);
  });
  return accumulate(m, std::move(sens), std::move(prior));
}

Tensor penalty(const ImportanceState& state, std::span<const Tensor> params) {
  const std::size_t n = total_size(params);
  if (state.anchor.size() != n || state.importance.size() != n) {
    throw ContractError("penalty: importance state covers " + std::to_string(state.anchor.size()) +
                        " parameters, model has " + std::to_string(n));
  }
  Tensor total;
  std::size_t off = 0;
  const std::span<const double> anchor(state.anchor);
  const std::span<const double> imp(state.importance);
  for (const auto& p : params) {
    Tensor term = weighted_sq_distance(p, anchor.subspan(off, p.numel()), imp.subspan(off, p.numel()));
    total = total.defined() ? add(total, term) : term;
    off += p.numel();
  }
  return scale(total, state.lambda);
}

Tensor penalty(const ImportanceState& state, const EnsembleModel& m) {
  const auto params = m.parameters();
  return penalty(state, params);
}

std::size_t ReplayBuffer::size() const {
  std::size_t n = 0;
  for (const auto& [cls, items] : samples) n += items.size();
  return n;
}

ReplayBuffer replay_update(ReplayBuffer buf, const Task& task, std::size_t head, std::uint64_t seed) {
  for (int cls : task.classes) {
    std::vector<std::size_t> idx;
    for (std::size_t n = 0; n < task.train.size(); ++n) {
      if (task.train[n].label == cls) idx.push_back(n);
    }
    if (idx.size() > buf.per_class_capacity) {
      Rng rng(derive_seed({seed, static_cast<std::uint64_t>(cls), 0x2e91ULL}));
      // Partial Fisher-Yates: the first `capacity` slots are a uniform subset.
      for (std::size_t i = 0; i < buf.per_class_capacity; ++i) {
        std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      }
      idx.resize(buf.per_class_capacity);
      std::sort(idx.begin(), idx.end());
    }
    auto& slot = buf.samples[cls];
    slot.clear();
    for (auto n : idx) slot.push_back({task.train[n], head, task.local_label(cls)});
  }
  return buf;
}

Tensor replay_loss(const EnsembleModel& m, const ReplayBuffer& buf, std::size_t current_head,
                   const ForwardMode& mode, std::size_t max_samples, Rng* rng) {
  std::vector<const ReplayItem*> pool;
  for (const auto& [cls, items] : buf.samples) {
    for (const auto& it : items) {
      if (it.head < current_head) pool.push_back(&it);
    }
  }
  if (pool.empty()) return Tensor::scalar(0.0);
  if (max_samples > 0 && pool.size() > max_samples) {
    if (rng == nullptr) throw ContractError("replay_loss: sampling requires an rng");
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < max_samples; ++i) std::swap(idx[i], idx[i + uniform_index(*rng, idx.size() - i)]);
    idx.resize(max_samples);
    std::sort(idx.begin(), idx.end());
    std::vector<const ReplayItem*> picked;
    for (auto i : idx) picked.push_back(pool[i]);
    pool = std::move(picked);
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const ReplayItem* a, const ReplayItem* b) { return a->head < b->head; });
  Tensor total;
  for (std::size_t begin = 0; begin < pool.size();) {
    const std::size_t head = pool[begin]->head;
    std::size_t end = begin;
    std::vector<double> xs;
    std::vector<int> labels;
    while (end < pool.size() && pool[end]->head == head) {
      xs.insert(xs.end(), pool[end]->sample.x.begin(), pool[end]->sample.x.end());
      labels.push_back(pool[end]->local_label);
      ++end;
    }
    const std::size_t n = end - begin;
    const std::size_t width = xs.size() / n;
    Tensor x = Tensor::from({n, width}, std::move(xs));
    Tensor ce = scale(softmax_cross_entropy(forward_joint(m, x, head, mode), labels), static_cast<double>(n));
    total = total.defined() ? add(total, ce) : ce;
    begin = end;
  }
  return scale(total, 1.0 / static_cast<double>(pool.size()));
}

}  // namespace coscl
