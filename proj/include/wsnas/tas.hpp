/* Copyright 2026 The WS-NAS Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Progressive multi-stage search over a shrinking candidate set. Each stage
// builds a deeper network from scratch over the surviving ops, searches, and
// hands its α to the next pruning step. The last stage is not discretized.

#include "wsnas/darts.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wsnas {

struct Stage {
  int cells = 0;
  /// Admissible ops per edge while this stage searches.
  int ops = 0;
  int epochs = 0;
  int warmup = 0;

  bool operator==(const Stage&) const = default;
};

struct StagePlan {
  std::vector<Stage> stages;

  /// Cells strictly increasing, ops strictly decreasing, warmup <= epochs.
  void validate() const;
  int final_width() const { return stages.back().ops; }

  /// "L:O:E[:W],..." with W defaulting to floor(3E/8).
  static StagePlan parse(const std::string& text);
  std::string to_string() const;
  /// (2,4,6) cells, (8,5,3) ops, 8 epochs with 3 warm-up.
  static StagePlan desk_default();
};

Json stage_plan_to_json(const StagePlan& plan);
StagePlan stage_plan_from_json(const Json& j);

/// Per edge keeps the `keep` ops with the largest softmax weight (ties go to
/// the lower op index), in their original order, with α reset to zero.
std::pair<CellSpec, Alpha> prune_ops(const CellSpec& space, const Alpha& alpha, int keep);

struct TasConfig {
  StagePlan plan = StagePlan::desk_default();
  /// Optimizer, batch and dropout settings; epochs/warmup come from the plan.
  DartsConfig darts{};
  int init_channels = 4;
  double val_fraction = 1.0 / 3.0;
  std::uint64_t seed = 0;
};

struct StageRecord {
  Stage stage;
  CellSpec normal;
  CellSpec reduce;
  SearchReport report;
};

/// λ carries the pruned spaces only; λ̂ adds the last stage's α and weights.
struct TransferArchitecture {
  CellSpec normal;
  CellSpec reduce;
  /// Network layout of the final stage.
  NetworkSpec net_spec;
  std::optional<Alpha> normal_alpha;
  std::optional<Alpha> reduce_alpha;
  std::optional<WeightMap> weights;
  std::vector<std::string> source_tasks;
  StagePlan plan;
  std::uint64_t seed = 0;
  std::vector<StageRecord> history;

  bool trained() const { return weights.has_value(); }
  /// Common edge width of both cells; throws when edges differ.
  int width() const;
  /// The same architecture without α and weights.
  TransferArchitecture structure_only() const;
  /// Summed reports of every stage.
  SearchReport total_report() const;
  void validate() const;
};

/// Stages run over `space`; the first stage's width must equal the space's.
TransferArchitecture tas_single(const TaskBundle& task, const CellSpec& normal_space, const CellSpec& reduce_space,
                                const TasConfig& cfg);
/// Shared trunk and α over several tasks, each with its own head keyed by
/// task id. Within a stage, epochs cycle through the tasks in ascending size.
TransferArchitecture tas_meta(const std::vector<const TaskBundle*>& tasks, const CellSpec& normal_space,
                              const CellSpec& reduce_space, const TasConfig& cfg);

/// Indices of `tasks` in processing order (stable by size).
std::vector<int> meta_task_order(const std::vector<const TaskBundle*>& tasks);

/// JSON at `path`; weights of λ̂ go to transfer_weights_path(path).
void save_transfer(const std::filesystem::path& path, const TransferArchitecture& arch);
TransferArchitecture load_transfer(const std::filesystem::path& path);
std::filesystem::path transfer_weights_path(const std::filesystem::path& path);

}  // namespace wsnas
