#include "coscl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "coscl/errors.hpp"
#include "coscl/optim.hpp"
#include "coscl/rng.hpp"
#include "coscl/strategies.hpp"
#include "coscl/trainer.hpp"

namespace coscl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double need(const AccuracyMatrix& m, std::size_t t, std::size_t i) {
  const double v = m.A[t][i];
  if (std::isnan(v)) {
    throw ContractError("accuracy matrix entry A[" + std::to_string(t) + "][" + std::to_string(i) +
                        "] is missing");
  }
  return v;
}

std::vector<double> rows_of(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t w = t.cols();
  std::vector<double> out;
  out.reserve(idx.size() * w);
  auto d = t.data();
  for (auto r : idx) out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(r * w),
                                d.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
  return out;
}

}  // namespace

AccuracyMatrix AccuracyMatrix::unmeasured(std::size_t T) {
  AccuracyMatrix m;
  m.A.assign(T, std::vector<double>(T, kNaN));
  return m;
}

TransferMetrics acc_metrics(const AccuracyMatrix& m) {
  const std::size_t T = m.T();
  if (T < 2) throw ContractError("acc_metrics needs T >= 2");
  for (const auto& row : m.A) {
    if (row.size() != T) throw ContractError("accuracy matrix must be square");
  }
  TransferMetrics out;
  double s = 0.0;
  for (std::size_t i = 0; i < T; ++i) s += need(m, T - 1, i);
  out.aac = s / static_cast<double>(T);
  s = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) s += need(m, T - 1, i) - need(m, i, i);
  out.bwt = s / static_cast<double>(T - 1);
  if (!m.baseline.empty()) {
    if (m.baseline.size() != T) throw ContractError("baseline length must equal T");
    s = 0.0;
    for (std::size_t i = 1; i < T; ++i) {
      if (std::isnan(m.baseline[i])) throw ContractError("baseline entry " + std::to_string(i) + " is missing");
      s += need(m, i - 1, i) - m.baseline[i];
    }
    out.fwt = s / static_cast<double>(T - 1);
  }
  return out;
}

DivergenceProbeResult hdiv_probe(const Tensor& a, const Tensor& b, std::uint64_t seed, const HdivOptions& opts) {
  if (a.dim() != 2 || b.dim() != 2) throw DimensionError("hdiv_probe expects 2-D feature matrices");
  if (a.cols() != b.cols()) {
    throw DimensionError("hdiv_probe: feature widths differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t n = std::min(a.rows(), b.rows());
  if (n < 2) throw ContractError("hdiv_probe needs at least two rows per side");
  const std::size_t w = a.cols();

  Rng rng(derive_seed({seed, 0xd15cULL}));
  auto pick = [&](const Tensor& t) {
    auto idx = permutation(t.rows(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return rows_of(t, idx);
  };
  const auto xa = pick(a);
  const auto xb = pick(b);
  // One split shared by both sides keeps identical inputs symmetric.
  auto split = permutation(n, rng);
  std::size_t n_train = static_cast<std::size_t>(std::lround(opts.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  auto gather = [&](std::size_t begin, std::size_t end, std::vector<double>& xs, std::vector<double>& ys) {
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t r = split[k];
      xs.insert(xs.end(), xa.begin() + static_cast<std::ptrdiff_t>(r * w),
                xa.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
      ys.push_back(1.0);
      xs.insert(xs.end(), xb.begin() + static_cast<std::ptrdiff_t>(r * w),
                xb.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
      ys.push_back(0.0);
    }
  };
  std::vector<double> x_train, y_train, x_test, y_test;
  gather(0, n_train, x_train, y_train);
  gather(n_train, n, x_test, y_test);

  Tensor weight = Tensor::zeros({w, 1}, true);
  Tensor bias = Tensor::zeros({1}, true);
  OptimizerConfig oc;
  oc.lr = opts.lr;
  oc.batch = opts.batch;
  oc.epochs = opts.epochs;
  Optimizer opt({weight, bias}, oc);
  const std::size_t rows = y_train.size();
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(rows, opts.batch, seed, 0, epoch)) {
      std::vector<double> xs, ys;
      for (auto r : batch) {
        xs.insert(xs.end(), x_train.begin() + static_cast<std::ptrdiff_t>(r * w),
                  x_train.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
        ys.push_back(y_train[r]);
      }
      Tensor x = Tensor::from({batch.size(), w}, std::move(xs));
      opt.zero_grad();
      backward(sigmoid_bce(add(matmul(x, weight), bias), ys));
      opt.step();
    }
  }

  const std::size_t n_test = y_test.size();
  Tensor logits = add(matmul(Tensor::from({n_test, w}, std::move(x_test)), weight.detach()), bias.detach());
  DivergenceProbeResult out;
  out.test_bce = sigmoid_bce(logits, y_test).item();
  std::size_t wrong = 0;
  auto z = logits.data();
  for (std::size_t k = 0; k < n_test; ++k) {
    const double pred = z[k] > 0.0 ? 1.0 : 0.0;
    if (pred != y_test[k]) ++wrong;
  }
  out.test_error = static_cast<double>(wrong) / static_cast<double>(n_test);
  out.divergence = std::clamp(2.0 * (1.0 - 2.0 * out.test_error), 0.0, 2.0);
  return out;
}

FlatnessResult flatness_probe(std::span<const Tensor> params, const std::function<double()>& loss,
                              std::size_t directions, std::span<const double> radius_grid,
                              std::uint64_t seed) {
  if (radius_grid.empty() || radius_grid.front() != 0.0) {
    throw ContractError("flatness radius grid must start at 0");
  }
  if (!std::is_sorted(radius_grid.begin(), radius_grid.end())) {
    throw ContractError("flatness radius grid must be ascending");
  }
  const std::vector<double> theta = flatten(params);
  auto write = [&](const std::vector<double>& flat) {
    std::size_t off = 0;
    for (auto p : params) {
      auto d = p.mutable_data();
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + d.size()), d.begin());
      off += d.size();
    }
  };

  FlatnessResult out;
  out.radii.assign(radius_grid.begin(), radius_grid.end());
  out.base_loss = loss();
  out.envelope.assign(radius_grid.size(), -std::numeric_limits<double>::infinity());
  std::vector<double> moved(theta.size());
  for (std::size_t dir = 0; dir < directions; ++dir) {
    Rng rng(derive_seed({seed, 0xf1a7ULL, dir}));
    std::vector<double> d(theta.size());
    double norm = 0.0;
    for (auto& v : d) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : d) v /= norm;
    std::vector<double> curve;
    for (double r : radius_grid) {
      double value;
      if (r == 0.0) {
        value = out.base_loss;
      } else {
        for (std::size_t k = 0; k < theta.size(); ++k) moved[k] = theta[k] + r * d[k];
        write(moved);
        value = loss();
      }
      curve.push_back(value);
    }
    write(theta);
    for (std::size_t j = 0; j < curve.size(); ++j) out.envelope[j] = std::max(out.envelope[j], curve[j]);
    out.curves.push_back(std::move(curve));
  }
  if (directions == 0) out.envelope.assign(radius_grid.size(), out.base_loss);
  return out;
}

double stream_test_loss(const EnsembleModel& m, std::span<const Task> tasks) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < tasks.size(); ++p) {
    if (tasks[p].test.empty()) continue;
    const Batch b = make_batch(tasks[p], tasks[p].test);
    const double ce = softmax_cross_entropy(forward_joint(m, b.x.detach(), p), b.labels).item();
    total += ce * static_cast<double>(b.labels.size());
    count += b.labels.size();
  }
  if (count == 0) throw ContractError("stream has no test samples");
  return total / static_cast<double>(count);
}

FlatnessResult flatness_probe(const EnsembleModel& m, std::span<const Task> tasks,
                              std::span<const double> radius_grid, std::uint64_t seed,
                              std::size_t directions) {
  const auto params = m.parameters();
  return flatness_probe(
      params, [&] { return stream_test_loss(m, tasks); }, directions, radius_grid, seed);
}

std::vector<std::vector<double>> diversity_matrix(const EnsembleModel& m, std::span<const Task> tasks) {
  const std::size_t K = m.K();
  const std::size_t T = std::min(tasks.size(), m.num_tasks());
  std::vector<std::vector<double>> acc(K, std::vector<double>(T, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      acc[i][t] = learner_accuracy(m, i, tasks[t], t, tasks[t].test);
      mean += acc[i][t];
    }
    mean /= static_cast<double>(K);
    for (std::size_t i = 0; i < K; ++i) acc[i][t] -= mean;
  }
  return acc;
}

Tensor joint_features(const EnsembleModel& m, std::span<const Sample> samples, std::size_t head) {
  m.check_task(head);
  if (samples.empty()) throw ContractError("joint_features: no samples");
  const std::size_t d = samples.front().x.size();
  std::vector<double> xs;
  for (const auto& s : samples) xs.insert(xs.end(), s.x.begin(), s.x.end());
  Tensor x = Tensor::from({samples.size(), d}, std::move(xs));
  Tensor z;
  for (std::size_t i = 0; i < m.K(); ++i) {
    Tensor f = features(m.learners[i], x);
    if (m.use_gates) f = mul(f, Tensor::scalar(m.gate_value(head, i)));
    z = z.defined() ? add(z, f) : f;
  }
  return z.detach();
}

}  // namespace coscl
