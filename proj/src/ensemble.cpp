#include "coscl/ensemble.hpp"

#include <cmath>

#include "coscl/errors.hpp"
#include "coscl/rng.hpp"

namespace coscl {

std::string to_string(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::kFeatureEnsemble:
      return "feature_ensemble";
    case EnsembleMode::kClassifierEnsemble:
      return "classifier_ensemble";
    case EnsembleMode::kSingle:
      return "single";
  }
  return "?";
}

EnsembleMode parse_ensemble_mode(const std::string& name) {
  if (name == "feature_ensemble") return EnsembleMode::kFeatureEnsemble;
  if (name == "classifier_ensemble") return EnsembleMode::kClassifierEnsemble;
  if (name == "single") return EnsembleMode::kSingle;
  throw ConfigError("unknown ensemble mode '" + name + "'");
}

void EnsembleConfig::validate() const {
  if (K == 0) throw ConfigError("ensemble K must be >= 1");
  if (!std::isfinite(gate_scale) || gate_scale <= 0.0) throw ConfigError("gate_scale must be positive");
  if (!std::isfinite(gamma)) throw ConfigError("gamma must be finite");
  learner_template.validate();
}

EnsembleModel EnsembleModel::create(const EnsembleConfig& cfg,
                                    std::span<const std::size_t> classes_per_task,
                                    std::uint64_t seed) {
  cfg.validate();
  if (classes_per_task.empty()) throw ConfigError("ensemble needs at least one task head");
  EnsembleModel m;
  m.gate_scale = cfg.gate_scale;
  m.use_gates = cfg.use_gates;
  m.mode = cfg.mode;
  for (std::size_t i = 0; i < cfg.K; ++i) {
    LearnerConfig lc = cfg.learner_template;
    lc.init_seed = derive_seed({seed, i});
    m.learners.push_back(init_learner(lc));
  }
  m.alphas.resize(classes_per_task.size());
  for (auto& row : m.alphas) {
    for (std::size_t i = 0; i < cfg.K; ++i) row.push_back(Tensor::scalar(0.0, true));
  }
  const std::size_t d = cfg.learner_template.feature_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t t = 0; t < classes_per_task.size(); ++t) {
    const std::size_t c = classes_per_task[t];
    if (c == 0) throw ConfigError("task head needs at least one class");
    Rng rng(derive_seed({seed, 0x4eadULL, t}));
    std::vector<double> w(d * c);
    for (auto& v : w) v = uniform(rng, -bound, bound);
    m.heads.push_back({Tensor::from({d, c}, std::move(w), true), Tensor::zeros({c}, true)});
  }
  return m;
}

void EnsembleModel::check_task(std::size_t task) const {
  if (task >= heads.size()) {
    throw TaskError("no head for task " + std::to_string(task) + " (model has " +
                    std::to_string(heads.size()) + ")");
  }
}

Tensor EnsembleModel::gate(std::size_t task, std::size_t learner) const {
  check_task(task);
  if (!use_gates) return Tensor::scalar(1.0);
  return sigmoid(scale(alphas[task][learner], gate_scale));
}

double EnsembleModel::gate_value(std::size_t task, std::size_t learner) const {
  check_task(task);
  if (!use_gates) return 1.0;
  return sigmoid(scale(alphas[task][learner].detach(), gate_scale)).item();
}

std::vector<Tensor> EnsembleModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : learners) {
    for (auto& p : l.parameters()) out.push_back(p);
  }
  for (const auto& row : alphas) {
    for (const auto& a : row) out.push_back(a);
  }
  for (const auto& h : heads) {
    out.push_back(h.weight);
    out.push_back(h.bias);
  }
  return out;
}

std::size_t EnsembleModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

std::size_t EnsembleModel::backbone_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : learners) n += coscl::parameter_count(l);
  return n;
}

Tensor apply_head(const Head& head, const Tensor& z) { return add(matmul(z, head.weight), head.bias); }

namespace {

std::vector<Tensor> all_features(const EnsembleModel& m, const Tensor& x, const ForwardMode& mode) {
  std::vector<Tensor> out;
  out.reserve(m.K());
  for (const auto& l : m.learners) out.push_back(features(l, x, mode));
  return out;
}

Tensor gated(const EnsembleModel& m, const Tensor& f, std::size_t task, std::size_t i) {
  if (!m.use_gates) return f;
  return mul(f, m.gate(task, i));
}

Tensor joint_from(const EnsembleModel& m, std::span<const Tensor> feats, std::size_t task) {
  Tensor z = gated(m, feats[0], task, 0);
  for (std::size_t i = 1; i < feats.size(); ++i) z = add(z, gated(m, feats[i], task, i));
  return apply_head(m.heads[task], z);
}

std::vector<Tensor> per_learner_from(const EnsembleModel& m, std::span<const Tensor> feats,
                                     std::size_t task) {
  std::vector<Tensor> out;
  out.reserve(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    out.push_back(softmax(apply_head(m.heads[task], gated(m, feats[i], task, i))));
  }
  return out;
}

}  // namespace

Tensor forward_joint(const EnsembleModel& m, const Tensor& x, std::size_t task, const ForwardMode& mode) {
  m.check_task(task);
  auto feats = all_features(m, x, mode);
  return joint_from(m, feats, task);
}

std::vector<Tensor> forward_per_learner(const EnsembleModel& m, const Tensor& x, std::size_t task,
                                        const ForwardMode& mode) {
  m.check_task(task);
  auto feats = all_features(m, x, mode);
  return per_learner_from(m, feats, task);
}

Tensor ec_loss(std::span<const Tensor> probs) {
  const std::size_t k = probs.size();
  if (k < 2) return Tensor::scalar(0.0);
  for (const auto& p : probs) {
    if (p.shape() != probs[0].shape()) {
      throw DimensionError("ec_loss: probability shapes differ: " + shape_str(p.shape()) + " vs " +
                           shape_str(probs[0].shape()));
    }
  }
  std::vector<Tensor> logs;
  logs.reserve(k);
  for (const auto& p : probs) logs.push_back(log(p));
  Tensor total;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      Tensor kl = sum(mul(probs[i], sub(logs[i], logs[j])));
      total = total.defined() ? add(total, kl) : kl;
    }
  }
  const double batch = static_cast<double>(probs[0].rows());
  return scale(total, 1.0 / (static_cast<double>(k) * batch));
}

Tensor coscl_objective(const EnsembleModel& m, const Batch& batch, std::size_t task,
                       const Tensor& strategy_penalty, double gamma, const ForwardMode& mode) {
  m.check_task(task);
  if (batch.labels.empty()) throw ContractError("coscl_objective: empty batch");
  auto feats = all_features(m, batch.x, mode);
  Tensor loss = softmax_cross_entropy(joint_from(m, feats, task), batch.labels);
  if (strategy_penalty.defined()) loss = add(loss, strategy_penalty);
  if (gamma != 0.0 && m.K() >= 2) {
    auto probs = per_learner_from(m, feats, task);
    loss = add(loss, scale(ec_loss(probs), gamma));
  }
  return loss;
}

Tensor forward_classifier_ensemble(std::span<const EnsembleModel> models, const Tensor& x,
                                   std::size_t task) {
  if (models.empty()) throw ContractError("classifier ensemble needs at least one model");
  Tensor total;
  for (const auto& m : models) {
    Tensor p = softmax(forward_joint(m, x, task));
    if (total.defined() && p.shape() != total.shape()) {
      throw DimensionError("classifier ensemble members disagree on output shape: " +
                           shape_str(p.shape()) + " vs " + shape_str(total.shape()));
    }
    total = total.defined() ? add(total, p) : p;
  }
  if (models.size() == 1) return total;
  return scale(total, 1.0 / static_cast<double>(models.size()));
}

}  // namespace coscl
