#include "coscl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coscl/errors.hpp"
#include "coscl/rng.hpp"

namespace coscl {

namespace {

Linear make_linear(std::size_t in, std::size_t out, double gain, Rng& rng) {
  const double bound = std::sqrt(gain / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = uniform(rng, -bound, bound);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

Tensor affine(const Tensor& x, const Linear& layer) { return add(matmul(x, layer.weight), layer.bias); }

std::size_t count_with_widths(const LearnerConfig& cfg, const std::vector<std::size_t>& widths) {
  std::size_t total = 0;
  std::size_t prev = cfg.input_dim;
  for (auto w : widths) {
    total += prev * w + w;
    prev = w;
  }
  return total + prev * cfg.feature_dim + cfg.feature_dim;
}

// Widths of `tmpl` scaled by num/den, rounded down, floored at 1.
std::vector<std::size_t> scaled_widths(const std::vector<std::size_t>& tmpl, std::size_t num,
                                       std::size_t den) {
  std::vector<std::size_t> out(tmpl.size());
  for (std::size_t j = 0; j < tmpl.size(); ++j) out[j] = std::max<std::size_t>(1, num * tmpl[j] / den);
  return out;
}

}  // namespace

void LearnerConfig::validate() const {
  if (input_dim == 0) throw ConfigError("learner input_dim must be >= 1");
  if (feature_dim == 0) throw ConfigError("learner feature_dim must be >= 1");
  if (hidden_widths.empty()) throw ConfigError("learner needs at least one hidden layer");
  for (auto w : hidden_widths) {
    if (w == 0) throw ConfigError("learner hidden widths must be >= 1");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  }
}

std::vector<Tensor> Learner::parameters() const {
  std::vector<Tensor> out;
  out.reserve(2 * layers.size() + 2);
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(mix.weight);
  out.push_back(mix.bias);
  return out;
}

Learner init_learner(const LearnerConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed({cfg.init_seed, 0x1ea7e5ULL}));
  Learner l;
  l.config = cfg;
  std::size_t prev = cfg.input_dim;
  for (auto w : cfg.hidden_widths) {
    l.layers.push_back(make_linear(prev, w, 6.0, rng));
    prev = w;
  }
  l.mix = make_linear(prev, cfg.feature_dim, 3.0, rng);
  return l;
}

Tensor features(const Learner& learner, const Tensor& x, const ForwardMode& mode) {
  const auto& cfg = learner.config;
  if (x.dim() != 2 || x.cols() != cfg.input_dim) {
    throw DimensionError("learner expects [B x " + std::to_string(cfg.input_dim) + "] input, got " +
                         shape_str(x.shape()));
  }
  const bool drop = mode.train && cfg.dropout_rate > 0.0;
  const double keep_scale = 1.0 / (1.0 - cfg.dropout_rate);
  Tensor h = x;
  for (std::size_t li = 0; li < learner.layers.size(); ++li) {
    h = relu(affine(h, learner.layers[li]));
    if (drop) {
      Rng rng(derive_seed({mode.seed, mode.step, cfg.init_seed, li}));
      std::vector<double> mask(h.numel());
      for (auto& m : mask) m = uniform01(rng) < cfg.dropout_rate ? 0.0 : keep_scale;
      h = mul_const(h, mask);
    }
  }
  return affine(h, learner.mix);
}

std::size_t parameter_count(const LearnerConfig& cfg) { return count_with_widths(cfg, cfg.hidden_widths); }

std::size_t parameter_count(const Learner& learner) {
  std::size_t n = 0;
  for (const auto& p : learner.parameters()) n += p.numel();
  return n;
}

LearnerConfig budget_match(std::size_t total_budget, std::size_t K, const LearnerConfig& tmpl) {
  tmpl.validate();
  if (K == 0) throw ConfigError("budget_match: K must be >= 1");
  const auto& w = tmpl.hidden_widths;
  auto fits = [&](const std::vector<std::size_t>& widths) {
    return K * count_with_widths(tmpl, widths) <= total_budget;
  };
  if (!fits(std::vector<std::size_t>(w.size(), 1))) {
    throw ConfigError("budget " + std::to_string(total_budget) + " cannot hold " + std::to_string(K) +
                      " learners of minimum width");
  }
  // Integer factor bound beyond which the budget is certainly exceeded.
  std::size_t f_hi = 1;
  while (fits(scaled_widths(w, f_hi, 1))) f_hi *= 2;

  // Every width changes only at factors m / w_j; the count is monotone in
  // the factor, so the answer is the largest feasible breakpoint.
  struct Frac {
    std::size_t num, den;
  };
  std::vector<Frac> cands;
  for (auto wj : w) {
    for (std::size_t m = 1; m <= f_hi * wj; ++m) cands.push_back({m, wj});
  }
  std::sort(cands.begin(), cands.end(),
            [](const Frac& a, const Frac& b) { return a.num * b.den < b.num * a.den; });
  std::size_t lo = 0, hi = cands.size();  // invariant: answer index in [lo, hi)
  if (!fits(scaled_widths(w, cands[0].num, cands[0].den))) {
    LearnerConfig out = tmpl;
    out.hidden_widths.assign(w.size(), 1);
    return out;
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (fits(scaled_widths(w, cands[mid].num, cands[mid].den))) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  LearnerConfig out = tmpl;
  out.hidden_widths = scaled_widths(w, cands[lo].num, cands[lo].den);
  return out;
}

}  // namespace coscl
