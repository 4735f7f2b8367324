#pragma once

// Experiment configuration: a sectioned key = value text format.
//
//   # comment
//   [stream]
//   kind = gaussian_blobs
//   T = 10
//
// Keys are addressed as "section.key". The canonical form of a config is the
// fully resolved (defaults included) key set, one "section.key=value" line
// per entry in sorted order; its FNV-1a hash identifies the config. Settings
// that cannot change results (run.workers, run.output_dir) are not included.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coscl/ensemble.hpp"
#include "coscl/optim.hpp"
#include "coscl/streams.hpp"
#include "coscl/trainer.hpp"

namespace coscl {

using KeyValues = std::map<std::string, std::string>;

// Throws ConfigError (with line number) on malformed lines or duplicates.
KeyValues parse_key_values(const std::string& text);
std::string canonical_text(const KeyValues& kv);
std::uint64_t fnv1a64(const std::string& text);
std::string hex64(std::uint64_t v);

struct ProbeFlags {
  bool hdiv = false;
  bool flatness = false;
  bool diversity = false;
  std::vector<double> flatness_radii{0.0, 0.25, 0.5, 1.0, 2.0};
  std::size_t flatness_directions = 10;
};

struct ExperimentConfig {
  StreamSpec stream;
  std::optional<std::filesystem::path> csv_path;
  CsvSchema csv_schema;
  std::uint64_t csv_split_seed = 0;
  bool shuffle_task_order = true;

  EnsembleConfig ensemble;
  // 0: every learner uses the template widths; otherwise widths come from
  // budget_match(total_budget, K, template).
  std::size_t total_budget = 0;

  StrategyConfig strategy;
  OptimizerConfig optimizer;

  std::vector<std::uint64_t> seeds{1};
  std::size_t workers = 1;
  std::filesystem::path output_dir = "coscl_out";
  bool checkpoints = true;
  bool fwt_baseline = true;
  ProbeFlags probes;

  void validate() const;

  // Resolved learner config used for every member (after budget matching).
  LearnerConfig resolved_learner() const;
  // K actually instantiated per model (1 for single/classifier members).
  std::size_t model_K() const;
  std::size_t member_count() const;

  KeyValues to_key_values() const;
  std::string canonical() const { return canonical_text(to_key_values()); }
  std::string hash() const { return hex64(fnv1a64(canonical())); }
};

ExperimentConfig config_from_key_values(const KeyValues& kv);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Output root override read by the CLI: relative output_dir values resolve
// under this directory when it is set.
inline constexpr const char* kOutputRootEnv = "COSCL_OUTPUT_ROOT";

std::string format_double(double v);

}  // namespace coscl
