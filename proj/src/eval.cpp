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
#include "wsnas/eval.hpp"

#include "wsnas/rng.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace wsnas {

void EvalConfig::validate() const {
  if (cells < 1) throw std::invalid_argument("eval: cells must be >= 1");
  if (init_channels < 1) throw std::invalid_argument("eval: init_channels must be >= 1");
  if (epochs < 0) throw std::invalid_argument("eval: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("eval: batch_size must be >= 1");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("eval: grad_clip must be > 0");
  opt.validate();
}

Json eval_config_to_json(const EvalConfig& cfg) {
  return Json{{"cells", cfg.cells},
              {"init_channels", cfg.init_channels},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"opt", {{"lr", cfg.opt.lr}, {"momentum", cfg.opt.momentum}, {"weight_decay", cfg.opt.weight_decay}}},
              {"grad_clip", cfg.grad_clip},
              {"seed", cfg.seed}};
}

EvalConfig eval_config_from_json(const Json& j) {
  EvalConfig c;
  c.cells = j.at("cells").get<int>();
  c.init_channels = j.at("init_channels").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  const Json& o = j.at("opt");
  c.opt = {o.at("lr").get<double>(), o.at("momentum").get<double>(), o.at("weight_decay").get<double>()};
  c.grad_clip = j.at("grad_clip").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

Json EvalResult::to_json() const {
  return Json{{"epochs", epochs},   {"n_train", n_train}, {"n_eval", n_eval},   {"train_acc", train_acc},
              {"eval_acc", eval_acc}, {"ci_low", ci_low},   {"ci_high", ci_high}, {"wall_seconds", wall_seconds}};
}

std::pair<double, double> wilson_interval(int k, int n) {
  if (n < 1 || k < 0 || k > n) throw std::invalid_argument("wilson_interval: need 0 <= k <= n, n >= 1");
  const double z = 1.959963984540054, p = static_cast<double>(k) / n, z2n = z * z / n;
  const double centre = (p + z2n / 2) / (1 + z2n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2n / (4 * n)) / (1 + z2n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

Network genotype_network(const Genotype& genotype, const TaskBundle& task, const EvalConfig& cfg) {
  cfg.validate();
  const NetworkSpec spec{cfg.cells, cfg.init_channels, task.c, task.classes, true};
  return Network(spec, genes_to_spec(genotype.normal, CellKind::Normal, genotype.steps),
                 genes_to_spec(genotype.reduce, CellKind::Reduction, genotype.steps),
                 derive_seed(cfg.seed, "eval.weights"));
}

EvalResult retrain(const Genotype& genotype, const TaskBundle& task, const std::vector<int>& train,
                   const std::vector<int>& eval, const EvalConfig& cfg) {
  if (train.empty() || eval.empty()) throw std::invalid_argument("eval: empty train or eval set");
  const auto t0 = std::chrono::steady_clock::now();
  Network net = genotype_network(genotype, task, cfg);
  ArchParams arch = ArchParams::from_alpha(zero_alpha(net.normal_spec()), zero_alpha(net.reduce_spec()), false);

  // A search session that never updates α is plain SGD on the weights.
  DartsConfig dc;
  dc.epochs = cfg.epochs;
  dc.warmup_epochs = cfg.epochs;
  dc.batch_size = cfg.batch_size;
  dc.w_opt = cfg.opt;
  dc.grad_clip = cfg.grad_clip;
  dc.seed = derive_seed(cfg.seed, "eval.order");
  SearchTask st{&task, {}, "default"};
  st.split.train_w = train;
  SearchSession session(net, arch, dc);
  for (int e = 0; e < cfg.epochs; ++e) session.epoch(st, e, false, 0.0);

  EvalResult r;
  r.epochs = cfg.epochs;
  r.n_train = static_cast<int>(train.size());
  r.n_eval = static_cast<int>(eval.size());
  r.train_acc = accuracy(net, arch, task, train);
  r.eval_acc = accuracy(net, arch, task, eval);
  const int correct = static_cast<int>(std::lround(r.eval_acc * r.n_eval));
  std::tie(r.ci_low, r.ci_high) = wilson_interval(correct, r.n_eval);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace wsnas
