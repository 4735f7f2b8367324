#pragma once

// Measurement tools: transfer metrics over an accuracy matrix, a linear
// discriminator estimate of feature-space H-divergence, random-direction
// loss flatness, and per-learner relative accuracy.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "coscl/ensemble.hpp"
#include "coscl/streams.hpp"

namespace coscl {

// A[t][i]: test accuracy on task i after training task t (0-based). Entries
// that were never measured are NaN. `baseline[i]` is task i's accuracy when
// trained alone from random initialisation (empty when unavailable).
struct AccuracyMatrix {
  std::vector<std::vector<double>> A;
  std::vector<double> baseline;

  static AccuracyMatrix unmeasured(std::size_t T);
  std::size_t T() const { return A.size(); }
};

struct TransferMetrics {
  double aac = 0.0;
  double bwt = 0.0;
  std::optional<double> fwt;  // requires a baseline
};

// AAC = mean_i A[T-1][i]
// BWT = mean_{i<T-1} (A[T-1][i] - A[i][i])
// FWT = mean_{i>=1} (A[i-1][i] - baseline[i])
TransferMetrics acc_metrics(const AccuracyMatrix& m);

struct HdivOptions {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-2;
  double train_fraction = 0.8;
};

struct DivergenceProbeResult {
  double test_bce = 0.0;
  double test_error = 0.0;
  double divergence = 0.0;  // 2 (1 - 2 err), clipped to [0, 2]
};

// Trains a single linear unit + sigmoid to tell rows of `a` from rows of `b`
// (both [n x w]); the larger set is subsampled to balance the classes.
DivergenceProbeResult hdiv_probe(const Tensor& a, const Tensor& b, std::uint64_t seed,
                                 const HdivOptions& opts = {});

struct FlatnessResult {
  std::vector<double> radii;
  std::vector<std::vector<double>> curves;  // [direction][radius]
  std::vector<double> envelope;             // max over directions per radius
  double base_loss = 0.0;
};

inline constexpr std::size_t kDefaultFlatnessDirections = 10;

// Loss at theta + r d for unit-norm Gaussian directions d over the full
// parameter vector. Parameters are restored exactly afterwards.
FlatnessResult flatness_probe(std::span<const Tensor> params, const std::function<double()>& loss,
                              std::size_t directions, std::span<const double> radius_grid,
                              std::uint64_t seed);

// Mean test cross-entropy over all tasks, task at position p scored by head p.
double stream_test_loss(const EnsembleModel& m, std::span<const Task> tasks);

FlatnessResult flatness_probe(const EnsembleModel& m, std::span<const Task> tasks,
                              std::span<const double> radius_grid, std::uint64_t seed,
                              std::size_t directions = kDefaultFlatnessDirections);

// [K][T]: accuracy of learner i alone on task t minus the learners' mean.
std::vector<std::vector<double>> diversity_matrix(const EnsembleModel& m, std::span<const Task> tasks);

// Gated joint features sum_i g[t][i] f_i(x) of `samples` for head t.
Tensor joint_features(const EnsembleModel& m, std::span<const Sample> samples, std::size_t head);

}  // namespace coscl
