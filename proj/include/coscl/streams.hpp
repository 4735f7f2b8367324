#pragma once

// Task sequences: seeded synthetic generators and CSV ingestion.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coscl/ensemble.hpp"

namespace coscl {

struct Sample {
  std::vector<double> x;
  int label = 0;  // global class id
  bool operator==(const Sample&) const = default;
};

struct Task {
  int id = 0;
  std::vector<int> classes;  // global class ids; head output j predicts classes[j]
  std::vector<Sample> train;
  std::vector<Sample> test;

  std::size_t input_dim() const;
  // Position of a global class id within `classes`; throws TaskError if absent.
  int local_label(int global_label) const;
};

enum class StreamKind { kGaussianBlobs, kRotatedMoons, kPermutedFeatures };

std::string to_string(StreamKind kind);
StreamKind parse_stream_kind(const std::string& name);

struct StreamSpec {
  StreamKind kind = StreamKind::kGaussianBlobs;
  std::size_t T = 10;
  std::size_t classes_per_task = 2;
  std::size_t n_train = 50;  // per class
  std::size_t n_test = 50;   // per class
  std::size_t input_dim = 16;
  std::uint64_t seed = 0;
  double difficulty = 0.5;

  void validate() const;
};

// gaussian_blobs: each class is a two-mode mixture on seeded vertices of the
//   {-1,+1}^d lattice; noise std = 0.35 + 0.5 * difficulty.
// rotated_moons: two interleaved half-circles rotated by t * difficulty * pi/6
//   for task t; extra input dimensions carry small Gaussian noise.
// permuted_features: a fixed blob base distribution; task t >= 1 permutes a
//   seeded subset of round(difficulty * d) coordinates.
std::vector<Task> generate(const StreamSpec& spec);

struct CsvSchema {
  std::vector<std::string> feature_columns;  // empty: every other column
  std::string label_column = "label";
  std::string task_column = "task";
};

// Tasks ordered by task column; each task split 80/20 (train/test) by a
// seeded shuffle, with round(0.2 n) test rows.
std::vector<Task> ingest_csv(const std::filesystem::path& path, const CsvSchema& schema,
                             std::uint64_t seed = 0);

// Writes feature columns f0..f{d-1}, label, task, split. Deterministic bytes.
void write_stream_csv(std::span<const Task> tasks, const std::filesystem::path& path);

// Reorders tasks with a seeded permutation (task ids are preserved).
std::vector<Task> shuffle_task_order(std::vector<Task> tasks, std::uint64_t seed);

std::vector<std::size_t> classes_per_task(std::span<const Task> tasks);

// Rows [begin, end) of `samples` (or the given indices) as a batch with labels
// local to `task`.
Batch make_batch(const Task& task, std::span<const Sample> samples);
Batch make_batch(const Task& task, std::span<const Sample> samples, std::span<const std::size_t> indices);

}  // namespace coscl
