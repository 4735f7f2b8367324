#pragma once

// Model checkpoints as flat text.
//
//   coscl-checkpoint 1
//   seed <u64>
//   task_boundary <t>            # last task trained (0-based position)
//   task_order <id> <id> ...     # stream task ids in training order
//   config <n>                   # followed by n canonical "section.key=value" lines
//   members <m>
//   model <mode> <K> <T> <gate_scale> <use_gates>
//   learner <input_dim> <feature_dim> <dropout> <init_seed> <hidden...>
//   head_classes <c_0> ... <c_{T-1}>
//   tensor <ndim> <dims...>       # one per parameter, EnsembleModel::parameters() order,
//   <row-major values>            # each followed by its values on one line
//   importance <lambda> <n>       # optional
//   <anchor values>
//   <importance values>
//   end
//
// Doubles use the shortest representation that round-trips, so save/load is
// bit-exact.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coscl/ensemble.hpp"
#include "coscl/strategies.hpp"

namespace coscl {

struct Checkpoint {
  std::uint64_t seed = 0;
  std::size_t task_boundary = 0;
  std::vector<int> task_order;
  std::string config_text;  // canonical config
  std::vector<EnsembleModel> members;
  std::optional<ImportanceState> importance;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace coscl
