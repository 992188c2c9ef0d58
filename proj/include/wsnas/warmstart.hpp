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

// Warm-started search: pick a transfer architecture by task similarity, run
// DARTS on its restricted space, derive the genotype, and account for cost.

#include "wsnas/eval.hpp"
#include "wsnas/tas.hpp"
#include "wsnas/task2vec.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wsnas {

struct ArchiveEntry {
  std::string task_id;
  TaskEmbedding embedding;
  std::filesystem::path lambda_path;
  std::filesystem::path lambda_hat_path;
};

/// Entry whose embedding is nearest in d_sym; ties go to the smallest
/// task_id. Every embedding must come from the probe of `query`.
const ArchiveEntry& select_transfer(const std::vector<ArchiveEntry>& archive, const TaskEmbedding& query);

/// Same rule over a precomputed matrix. `candidates` empty means every other
/// id of the matrix.
std::string select_transfer(const SimilarityMatrix& m, const std::string& query,
                            const std::vector<std::string>& candidates = {});

enum class WarmStartMode { Lambda, LambdaHat, Meta };
std::string_view warm_start_mode_name(WarmStartMode m);
WarmStartMode warm_start_mode_from_name(std::string_view name);

struct WarmStartConfig {
  WarmStartMode mode = WarmStartMode::Lambda;
  DartsConfig darts{};
  /// Skip-connect cap in the normal cell.
  int max_skips = 2;
  /// Cap skips at derivation; off gives the plain discretization.
  bool refine = true;
  /// Required edge width of λ; 0 accepts any uniform width.
  int expected_width = 3;
  double val_fraction = 1.0 / 3.0;
  std::vector<double> dropout_sweep{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  /// Short retrain used to rank the sweep.
  EvalConfig sweep_eval{.epochs = 10};

  void validate() const;
};

struct WarmStartResult {
  Genotype genotype;
  SearchReport report;
  Alpha normal_alpha;
  Alpha reduce_alpha;
};

/// Network for a warm start: λ's final-stage layout with `task`'s classes.
/// Trunk weights come from λ̂ in the λ̂ and meta modes; the classifier head
/// is always fresh.
Network warm_start_network(const TaskBundle& task, const TransferArchitecture& lambda, const WarmStartConfig& cfg);

/// Throws std::logic_error when the genotype leaves λ's space.
WarmStartResult warm_start_search(const TaskBundle& task, const TransferArchitecture& lambda,
                                  const WarmStartConfig& cfg);

struct SweepPoint {
  double dropout0 = 0.0;
  WarmStartResult search;
  EvalResult retrain;
};

struct SweepResult {
  double best_dropout0 = 0.0;
  Genotype genotype;
  std::vector<SweepPoint> points;
};

/// One warm start per dropout0, each followed by a short retrain on the
/// w-train part of the split, scored on the α-train part. Ties go to the
/// smaller dropout0. Branches share cfg.darts.seed and may run on
/// WSNAS_THREADS threads.
SweepResult dropout_sweep(const TaskBundle& task, const TransferArchitecture& lambda, const WarmStartConfig& cfg);

struct Savings {
  double op_eval_reduction = 0.0;
  double wall_reduction = 0.0;
  Json to_json() const;
};

Savings report_savings(const SearchReport& ws, const SearchReport& baseline);

struct BaselineResult {
  Genotype genotype;
  SearchReport report;
};

/// Full TAS on the task followed by derivation of the final genotype.
BaselineResult baseline_search(const TaskBundle& task, const CellSpec& normal_space, const CellSpec& reduce_space,
                               const TasConfig& cfg, int max_skips = 2);

/// Threads requested through WSNAS_THREADS (at least 1).
int worker_threads();

}  // namespace wsnas
