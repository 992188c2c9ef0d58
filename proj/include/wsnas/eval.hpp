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

// From-scratch training of a discrete genotype.

#include "wsnas/darts.hpp"

#include <cstdint>
#include <vector>

namespace wsnas {

struct EvalConfig {
  int cells = 8;
  int init_channels = 8;
  int epochs = 40;
  int batch_size = 16;
  diff::SgdConfig opt{0.025, 0.9, 3e-4};
  double grad_clip = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Json eval_config_to_json(const EvalConfig& cfg);
EvalConfig eval_config_from_json(const Json& j);

struct EvalResult {
  int epochs = 0;
  int n_train = 0;
  int n_eval = 0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
  /// 95% Wilson interval for eval_acc.
  double ci_low = 0.0;
  double ci_high = 0.0;
  double wall_seconds = 0.0;

  Json to_json() const;
};

/// 95% Wilson score interval for k successes out of n.
std::pair<double, double> wilson_interval(int k, int n);

/// Network whose cells admit exactly the genotype's ops.
Network genotype_network(const Genotype& genotype, const TaskBundle& task, const EvalConfig& cfg);

/// Trains genotype_network on `train` with SGD and reports accuracy on `train`
/// and `eval`.
EvalResult retrain(const Genotype& genotype, const TaskBundle& task, const std::vector<int>& train,
                   const std::vector<int>& eval, const EvalConfig& cfg);

}  // namespace wsnas
