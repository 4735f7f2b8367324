#pragma once

// Experiment runner: trains a model over a task stream once per seed, fills
// the accuracy matrix, runs the enabled probes and persists the results.
//
// Output layout of a run directory:
//   summary.json       config hash, canonical config, aggregates, per-seed records
//   accuracy.csv       seed,trained_task,eval_task,accuracy
//   metrics.csv        seed,aac,bwt,fwt (+ mean and std rows)
//   hdiv.csv / flatness.csv / diversity.csv   when the probe is enabled
//   timing.json        wall-clock per seed (not covered by determinism)
//   checkpoints/seed_<s>/task_<t>.ckpt

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coscl/config.hpp"
#include "coscl/diagnostics.hpp"

namespace coscl {

struct HdivEntry {
  std::size_t task = 0;  // position; compared against all earlier positions
  DivergenceProbeResult result;
};

struct SeedRecord {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<int> task_order;
  AccuracyMatrix acc;
  TransferMetrics metrics;
  std::vector<HdivEntry> hdiv;
  std::optional<FlatnessResult> flatness;
  std::vector<std::vector<double>> diversity;
  double wall_seconds = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 when n < 2
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> xs);

struct RunRecord {
  std::string config_hash;
  std::string canonical_config;
  std::size_t K = 1;
  std::size_t members = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t params_backbone = 0;  // summed over members
  std::size_t params_total = 0;
  std::vector<SeedRecord> seeds;
  MeanStd aac, bwt;
  std::optional<MeanStd> fwt;
  std::size_t failures = 0;
  bool partial() const { return failures > 0; }
};

struct RunOptions {
  std::size_t workers = 1;  // parallel seed workers; results do not depend on it
  bool write_outputs = true;
};

// Trains one seed; errors are captured in the record, not thrown.
SeedRecord run_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool write_checkpoints);

RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

void write_run_outputs(const RunRecord& record, const std::filesystem::path& dir);
std::string summary_json(const RunRecord& record);
RunRecord load_run_record(const std::filesystem::path& dir);

// Throws ConfigError when |a - b| / b exceeds `tolerance`.
void check_budget_parity(std::size_t params_coscl, std::size_t params_scl, double tolerance = 0.10);

enum class SweepAxis { kKVsWidth, kGamma, kGateScale, kTotalBudget };
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct SweepPoint {
  double value = 0.0;
  std::string variant;  // "coscl" or "scl" for budget sweeps, else "run"
  bool feasible = true;
  std::string note;
  std::optional<RunRecord> record;
};

// Runs one experiment per grid value (two per value for total_budget).
// Infeasible points are recorded and skipped. Outputs go under
// <output_dir>/sweep_<axis>/.
std::vector<SweepPoint> sweep(SweepAxis axis, std::span<const double> grid, const ExperimentConfig& base,
                              const RunOptions& opts = {});

void write_sweep_outputs(std::span<const SweepPoint> points, SweepAxis axis, const std::filesystem::path& dir);

enum class PlotKind { kCurve, kSweep, kFlatness, kDiversity };
PlotKind parse_plot_kind(const std::string& name);

// Writes plotting CSVs for the run (or sweep) directory `records_dir` into
// `out_dir`; returns the files written.
std::vector<std::filesystem::path> emit_plotdata(const std::filesystem::path& records_dir, PlotKind kind,
                                                 const std::filesystem::path& out_dir);

// Loads the tasks a config describes, in stream order.
std::vector<Task> load_stream(const ExperimentConfig& cfg);

}  // namespace coscl
