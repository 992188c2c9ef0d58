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

// First-order bilevel search: alternating Adam steps on α (alpha_train
// batches) and SGD steps on w (w_train batches), with warm-up epochs and a
// decaying skip-connect dropout.

#include "wsnas/io.hpp"
#include "wsnas/network.hpp"
#include "wsnas/taskgen.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace wsnas {

enum class DropoutDecay { Linear };

struct DartsConfig {
  int epochs = 8;
  int warmup_epochs = 3;
  int batch_size = 16;
  // 0.025 at batch 64, scaled linearly to the default batch of 16.
  diff::SgdConfig w_opt{0.025 * 16 / 64};
  diff::AdamConfig alpha_opt{};
  // Inner-step learning rate of the unrolled gradient; only 0 is supported.
  double xi = 0.0;
  double dropout0 = 0.0;
  DropoutDecay dropout_decay = DropoutDecay::Linear;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Json darts_config_to_json(const DartsConfig& cfg);
DartsConfig darts_config_from_json(const Json& j);

/// dropout0·(1 - epoch/epochs).
double dropout_at(const DartsConfig& cfg, int epoch);
/// Same schedule over an arbitrary step count.
double dropout_schedule(double dropout0, long step, long total);

enum class AlphaInit { Zeros, SmallNoise };
/// Zeros, or N(0, 1e-3) per logit drawn from `seed`.
Alpha init_alpha(const CellSpec& space, AlphaInit mode, std::uint64_t seed);

struct SearchReport {
  int epochs = 0;
  long op_evals = 0;
  double wall_seconds = 0.0;
  double final_train_loss = 0.0;
  double final_val_acc = 0.0;

  Json to_json() const;
  static SearchReport from_json(const Json& j);
};

/// A task bound to its split.
struct SearchTask {
  const TaskBundle* bundle = nullptr;
  Split split;
  std::string head_key = "default";
};

/// Optimizer state for one search run over a network and its α. Per-head
/// momentum buffers are keyed by head name so several tasks can share the
/// trunk.
class SearchSession {
 public:
  SearchSession(Network& net, ArchParams& arch, const DartsConfig& cfg);

  struct EpochStats {
    double train_loss = 0.0;
    int batches = 0;
  };

  /// One pass over the task's w_train batches. `step` seeds the batch order
  /// and dropout draws.
  EpochStats epoch(const SearchTask& task, long step, bool update_alpha, double dropout);

  /// Adam step on α only; network weights are held constant.
  double alpha_step(const SearchTask& task, std::span<const int> batch, const ForwardContext& ctx);
  /// SGD step on the trunk and the task head only; α is held constant.
  double w_step(const SearchTask& task, std::span<const int> batch, const ForwardContext& ctx);

  long op_evals() const { return op_evals_; }

 private:
  Network& net_;
  ArchParams& arch_;
  DartsConfig cfg_;
  diff::SgdState trunk_state_;
  std::map<std::string, diff::SgdState> head_states_;
  diff::AdamState alpha_state_;
  long alpha_steps_ = 0;
  long op_evals_ = 0;
};

/// Accuracy in eval mode over `idx`, in chunks.
double accuracy(const Network& net, const ArchParams& arch, const TaskBundle& task, std::span<const int> idx,
                const std::string& head_key = "default");
double mean_loss(const Network& net, const ArchParams& arch, const TaskBundle& task, std::span<const int> idx,
                 const std::string& head_key = "default");

/// Runs cfg.epochs epochs on `net`/`arch` in place.
SearchReport search(Network& net, ArchParams& arch, const SearchTask& task, const DartsConfig& cfg);

/// ceil(n / batch)
int batches_per_epoch(int n, int batch_size);

}  // namespace wsnas
