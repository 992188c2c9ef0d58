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
#include "wsnas/warmstart.hpp"

#include "wsnas/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

namespace wsnas {

namespace {

// Smallest distance, then smallest id.
bool better(double d, const std::string& id, double best_d, const std::string& best_id) {
  return d < best_d || (d == best_d && id < best_id);
}

}  // namespace

const ArchiveEntry& select_transfer(const std::vector<ArchiveEntry>& archive, const TaskEmbedding& query) {
  if (archive.empty()) throw std::invalid_argument("select_transfer: empty archive");
  const ArchiveEntry* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& e : archive) {
    if (e.embedding.probe_checksum != query.probe_checksum)
      throw std::invalid_argument("select_transfer: archive entry '" + e.task_id +
                                  "' was embedded with a different probe");
    const double d = d_sym(e.embedding, query);
    if (!best || better(d, e.task_id, best_d, best->task_id)) {
      best = &e;
      best_d = d;
    }
  }
  return *best;
}

std::string select_transfer(const SimilarityMatrix& m, const std::string& query,
                            const std::vector<std::string>& candidates) {
  std::vector<std::string> pool = candidates;
  if (pool.empty())
    for (const auto& id : m.ids)
      if (id != query) pool.push_back(id);
  if (pool.empty()) throw std::invalid_argument("select_transfer: no candidates besides '" + query + "'");
  std::string best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& id : pool) {
    if (id == query) throw std::invalid_argument("select_transfer: '" + query + "' cannot be its own source");
    const double d = m.at(query, id);
    if (best.empty() || better(d, id, best_d, best)) {
      best = id;
      best_d = d;
    }
  }
  return best;
}

std::string_view warm_start_mode_name(WarmStartMode m) {
  switch (m) {
    case WarmStartMode::Lambda: return "lambda";
    case WarmStartMode::LambdaHat: return "lambda_hat";
    case WarmStartMode::Meta: return "meta";
  }
  return "?";
}

WarmStartMode warm_start_mode_from_name(std::string_view name) {
  for (auto m : {WarmStartMode::Lambda, WarmStartMode::LambdaHat, WarmStartMode::Meta})
    if (warm_start_mode_name(m) == name) return m;
  throw std::invalid_argument("unknown warm-start mode '" + std::string(name) + "'");
}

void WarmStartConfig::validate() const {
  darts.validate();
  sweep_eval.validate();
  if (max_skips < 0) throw std::invalid_argument("warmstart: max_skips must be >= 0");
  if (expected_width < 0) throw std::invalid_argument("warmstart: expected_width must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("warmstart: val_fraction must lie in (0,1)");
  if (dropout_sweep.empty()) throw std::invalid_argument("warmstart: dropout sweep is empty");
  for (double d : dropout_sweep)
    if (!(d >= 0.0 && d < 1.0)) throw std::invalid_argument("warmstart: dropout sweep values must lie in [0,1)");
}

namespace {

bool transfers_weights(const TransferArchitecture& lambda, WarmStartMode mode) {
  if (mode == WarmStartMode::Lambda) return false;
  if (mode == WarmStartMode::LambdaHat && !lambda.trained())
    throw std::invalid_argument("warmstart: mode lambda_hat needs a trained transfer architecture");
  return lambda.trained();
}

void check_compatible(const TaskBundle& task, const TransferArchitecture& lambda, const WarmStartConfig& cfg) {
  cfg.validate();
  lambda.validate();
  if (cfg.expected_width > 0 && lambda.width() != cfg.expected_width)
    throw std::invalid_argument("warmstart: transfer architecture has " + std::to_string(lambda.width()) +
                                " ops per edge, expected " + std::to_string(cfg.expected_width));
  if (task.c != lambda.net_spec.in_channels)
    throw std::invalid_argument("warmstart: task '" + task.task_id + "' has " + std::to_string(task.c) +
                                " input channels, transfer architecture expects " +
                                std::to_string(lambda.net_spec.in_channels));
}

}  // namespace

Network warm_start_network(const TaskBundle& task, const TransferArchitecture& lambda, const WarmStartConfig& cfg) {
  check_compatible(task, lambda, cfg);
  NetworkSpec spec = lambda.net_spec;
  spec.num_classes = task.classes;
  Network net(spec, lambda.normal, lambda.reduce, derive_seed(cfg.darts.seed, "warmstart.weights"));
  if (transfers_weights(lambda, cfg.mode)) net.load_trunk(*lambda.weights);
  return net;
}

WarmStartResult warm_start_search(const TaskBundle& task, const TransferArchitecture& lambda,
                                  const WarmStartConfig& cfg) {
  Network net = warm_start_network(task, lambda, cfg);
  const bool hat = transfers_weights(lambda, cfg.mode);
  ArchParams arch = hat ? ArchParams::from_alpha(*lambda.normal_alpha, *lambda.reduce_alpha)
                        : ArchParams::from_alpha(zero_alpha(lambda.normal), zero_alpha(lambda.reduce));
  const SearchTask st{&task, stratified_split(task, cfg.val_fraction, cfg.darts.seed), "default"};

  WarmStartResult r;
  r.report = search(net, arch, st, cfg.darts);
  r.normal_alpha = arch.normal_alpha();
  r.reduce_alpha = arch.reduce_alpha();
  r.genotype = cfg.refine ? refine_genotype(lambda.normal, r.normal_alpha, lambda.reduce, r.reduce_alpha, cfg.max_skips)
                          : derive_genotype(lambda.normal, r.normal_alpha, lambda.reduce, r.reduce_alpha);
  if (!is_subgraph(r.genotype, lambda.normal, lambda.reduce))
    throw std::logic_error("warmstart: derived genotype uses an (edge, op) pair outside the transfer architecture");
  return r;
}

int worker_threads() {
  const char* env = std::getenv("WSNAS_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw std::invalid_argument("WSNAS_THREADS must be a positive integer");
  return static_cast<int>(std::min<long>(n, 256));
}

SweepResult dropout_sweep(const TaskBundle& task, const TransferArchitecture& lambda, const WarmStartConfig& cfg) {
  cfg.validate();
  const Split split = stratified_split(task, cfg.val_fraction, cfg.darts.seed);
  SweepResult out;
  out.points.resize(cfg.dropout_sweep.size());

  auto run = [&](std::size_t i) {
    WarmStartConfig c = cfg;
    c.darts.dropout0 = cfg.dropout_sweep[i];
    SweepPoint& p = out.points[i];
    p.dropout0 = c.darts.dropout0;
    p.search = warm_start_search(task, lambda, c);
    p.retrain = retrain(p.search.genotype, task, split.train_w, split.train_alpha, cfg.sweep_eval);
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), out.points.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < out.points.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(out.points.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < out.points.size();) {
          try {
            run(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const SweepPoint* best = nullptr;
  for (const auto& p : out.points)
    if (!best || p.retrain.eval_acc > best->retrain.eval_acc ||
        (p.retrain.eval_acc == best->retrain.eval_acc && p.dropout0 < best->dropout0))
      best = &p;
  out.best_dropout0 = best->dropout0;
  out.genotype = best->search.genotype;
  return out;
}

Json Savings::to_json() const {
  return Json{{"op_eval_reduction", op_eval_reduction}, {"wall_reduction", wall_reduction}};
}

Savings report_savings(const SearchReport& ws, const SearchReport& baseline) {
  if (baseline.op_evals <= 0) throw std::invalid_argument("report_savings: baseline has zero op_evals");
  if (!(baseline.wall_seconds > 0.0)) throw std::invalid_argument("report_savings: baseline has zero wall time");
  return {1.0 - static_cast<double>(ws.op_evals) / static_cast<double>(baseline.op_evals),
          1.0 - ws.wall_seconds / baseline.wall_seconds};
}

BaselineResult baseline_search(const TaskBundle& task, const CellSpec& normal_space, const CellSpec& reduce_space,
                               const TasConfig& cfg, int max_skips) {
  const TransferArchitecture t = tas_single(task, normal_space, reduce_space, cfg);
  return {refine_genotype(t.normal, *t.normal_alpha, t.reduce, *t.reduce_alpha, max_skips), t.total_report()};
}

}  // namespace wsnas
