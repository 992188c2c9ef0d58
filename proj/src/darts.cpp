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
#include "wsnas/darts.hpp"

#include "wsnas/rng.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <stdexcept>

namespace wsnas {

void DartsConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("darts: epochs must be >= 0");
  if (warmup_epochs < 0 || warmup_epochs > epochs)
    throw std::invalid_argument("darts: warmup_epochs must lie in [0, epochs]");
  if (batch_size < 1) throw std::invalid_argument("darts: batch_size must be >= 1");
  if (xi != 0.0) throw std::invalid_argument("darts: only the first-order scheme (xi = 0) is supported");
  if (!(dropout0 >= 0.0 && dropout0 < 1.0)) throw std::invalid_argument("darts: dropout0 must lie in [0,1)");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("darts: grad_clip must be > 0");
  w_opt.validate();
  alpha_opt.validate();
}

Json darts_config_to_json(const DartsConfig& cfg) {
  return Json{{"epochs", cfg.epochs},
              {"warmup_epochs", cfg.warmup_epochs},
              {"batch_size", cfg.batch_size},
              {"w_opt", {{"lr", cfg.w_opt.lr}, {"momentum", cfg.w_opt.momentum}, {"weight_decay", cfg.w_opt.weight_decay}}},
              {"alpha_opt",
               {{"lr", cfg.alpha_opt.lr},
                {"beta1", cfg.alpha_opt.beta1},
                {"beta2", cfg.alpha_opt.beta2},
                {"weight_decay", cfg.alpha_opt.weight_decay},
                {"eps", cfg.alpha_opt.eps}}},
              {"xi", cfg.xi},
              {"dropout0", cfg.dropout0},
              {"dropout_decay", "linear"},
              {"grad_clip", cfg.grad_clip},
              {"seed", cfg.seed}};
}

DartsConfig darts_config_from_json(const Json& j) {
  DartsConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.warmup_epochs = j.at("warmup_epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  const auto& w = j.at("w_opt");
  c.w_opt = {w.at("lr").get<double>(), w.at("momentum").get<double>(), w.at("weight_decay").get<double>()};
  const auto& a = j.at("alpha_opt");
  c.alpha_opt = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                 a.at("weight_decay").get<double>(), a.at("eps").get<double>()};
  c.xi = j.at("xi").get<double>();
  c.dropout0 = j.at("dropout0").get<double>();
  if (j.value("dropout_decay", std::string("linear")) != "linear")
    throw std::invalid_argument("darts: unknown dropout_decay schedule");
  c.grad_clip = j.at("grad_clip").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

double dropout_schedule(double dropout0, long step, long total) {
  if (step < 0 || step >= total)
    throw std::invalid_argument("dropout schedule: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total) + ")");
  return dropout0 * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

double dropout_at(const DartsConfig& cfg, int epoch) { return dropout_schedule(cfg.dropout0, epoch, cfg.epochs); }

Alpha init_alpha(const CellSpec& space, AlphaInit mode, std::uint64_t seed) {
  Alpha a = zero_alpha(space);
  if (mode == AlphaInit::Zeros) return a;
  std::mt19937_64 rng(derive_seed(seed, std::string("alpha.") + std::string(cell_kind_name(space.kind()))));
  std::normal_distribution<double> n(0.0, 1e-3);
  for (auto& e : a)
    for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = n(rng);
  return a;
}

Json SearchReport::to_json() const {
  return Json{{"epochs", epochs},
              {"op_evals", op_evals},
              {"wall_seconds", wall_seconds},
              {"final_train_loss", final_train_loss},
              {"final_val_acc", final_val_acc}};
}

SearchReport SearchReport::from_json(const Json& j) {
  SearchReport r;
  r.epochs = j.at("epochs").get<int>();
  r.op_evals = j.at("op_evals").get<long>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.final_train_loss = j.at("final_train_loss").get<double>();
  r.final_val_acc = j.at("final_val_acc").get<double>();
  return r;
}

int batches_per_epoch(int n, int batch_size) { return (n + batch_size - 1) / batch_size; }

// Session ----------------------------------------------------------------------

namespace {

void set_requires_grad(std::vector<Tensor>& ts, bool on) {
  for (auto& t : ts) t.set_requires_grad(on);
}

}  // namespace

SearchSession::SearchSession(Network& net, ArchParams& arch, const DartsConfig& cfg)
    : net_(net), arch_(arch), cfg_(cfg) {
  cfg_.validate();
}

double SearchSession::alpha_step(const SearchTask& task, std::span<const int> batch, const ForwardContext& ctx) {
  std::vector<Tensor> weights = net_.trunk_parameters();
  for (auto& t : net_.head_parameters(task.head_key)) weights.push_back(t);
  std::vector<Tensor> alphas = arch_.tensors();
  set_requires_grad(weights, false);
  set_requires_grad(alphas, true);
  diff::zero_grad(alphas);
  Graph g;
  const auto labels = task.bundle->labels_of(batch);
  const Tensor loss = diff::cross_entropy(g, net_.logits(g, task.bundle->images(batch), arch_, ctx, task.head_key), labels);
  g.backward(loss);
  diff::adam_step(alphas, cfg_.alpha_opt, alpha_state_, ++alpha_steps_);
  set_requires_grad(weights, true);
  return loss.item();
}

double SearchSession::w_step(const SearchTask& task, std::span<const int> batch, const ForwardContext& ctx) {
  std::vector<Tensor> trunk = net_.trunk_parameters();
  std::vector<Tensor> head = net_.head_parameters(task.head_key);
  std::vector<Tensor> weights = trunk;
  weights.insert(weights.end(), head.begin(), head.end());
  std::vector<Tensor> alphas = arch_.tensors();
  set_requires_grad(alphas, false);
  set_requires_grad(weights, true);
  diff::zero_grad(weights);
  Graph g;
  const auto labels = task.bundle->labels_of(batch);
  const Tensor loss = diff::cross_entropy(g, net_.logits(g, task.bundle->images(batch), arch_, ctx, task.head_key), labels);
  g.backward(loss);
  diff::clip_grad_norm(weights, cfg_.grad_clip);
  diff::sgd_step(trunk, cfg_.w_opt, trunk_state_);
  diff::sgd_step(head, cfg_.w_opt, head_states_[task.head_key]);
  set_requires_grad(alphas, true);
  return loss.item();
}

SearchSession::EpochStats SearchSession::epoch(const SearchTask& task, long step, bool update_alpha, double dropout) {
  const auto& w_idx = task.split.train_w;
  const auto& a_idx = task.split.train_alpha;
  if (w_idx.empty()) throw std::invalid_argument("search: empty w_train partition");
  if (update_alpha && a_idx.empty()) throw std::invalid_argument("search: empty alpha_train partition");
  if (!net_.has_head(task.head_key)) throw std::invalid_argument("search: network has no head '" + task.head_key + "'");

  const std::uint64_t step_seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(step));
  std::mt19937_64 order(derive_seed(step_seed, "order"));
  std::mt19937_64 drop_rng(derive_seed(step_seed, "dropout"));
  std::vector<int> perm_w = w_idx, perm_a = a_idx;
  std::shuffle(perm_w.begin(), perm_w.end(), order);
  std::shuffle(perm_a.begin(), perm_a.end(), order);

  const ForwardContext ctx{true, dropout, &drop_rng, &op_evals_};
  const int bs = cfg_.batch_size;
  const int nb = batches_per_epoch(static_cast<int>(perm_w.size()), bs);
  EpochStats stats;
  for (int b = 0; b < nb; ++b) {
    if (update_alpha) {
      // α batches wrap around when alpha_train is shorter than w_train.
      const int na = static_cast<int>(perm_a.size());
      std::vector<int> batch;
      for (int i = 0; i < std::min(bs, na); ++i) batch.push_back(perm_a[static_cast<size_t>((b * bs + i) % na)]);
      alpha_step(task, batch, ctx);
    }
    const int lo = b * bs, hi = std::min(lo + bs, static_cast<int>(perm_w.size()));
    const std::vector<int> batch(perm_w.begin() + lo, perm_w.begin() + hi);
    stats.train_loss += w_step(task, batch, ctx);
    ++stats.batches;
  }
  stats.train_loss /= stats.batches;
  return stats;
}

// Evaluation -------------------------------------------------------------------

namespace {

template <typename Fn>
void eval_chunks(const Network& net, const ArchParams& arch, const TaskBundle& task, std::span<const int> idx,
                 const std::string& head_key, Fn&& fn) {
  ArchParams frozen = ArchParams::from_alpha(arch.normal_alpha(), arch.reduce_alpha(), false);
  std::vector<Tensor> params = net.trunk_parameters();
  for (auto& t : net.head_parameters(head_key)) params.push_back(t);
  std::vector<bool> saved;
  for (auto& t : params) {
    saved.push_back(t.requires_grad());
    t.set_requires_grad(false);
  }
  constexpr std::size_t kChunk = 64;
  for (std::size_t lo = 0; lo < idx.size(); lo += kChunk) {
    const auto batch = idx.subspan(lo, std::min(kChunk, idx.size() - lo));
    Graph g;
    const Tensor logits = net.logits(g, task.images(batch), frozen, {}, head_key);
    fn(g, logits, task.labels_of(batch));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(saved[i]);
}

}  // namespace

double accuracy(const Network& net, const ArchParams& arch, const TaskBundle& task, std::span<const int> idx,
                const std::string& head_key) {
  if (idx.empty()) throw std::invalid_argument("accuracy: empty index set");
  long correct = 0;
  eval_chunks(net, arch, task, idx, head_key, [&](Graph&, const Tensor& logits, const std::vector<int>& y) {
    const diff::Index k = logits.dim(1);
    for (std::size_t r = 0; r < y.size(); ++r) {
      diff::Index best = 0;
      logits.value().segment(static_cast<diff::Index>(r) * k, k).maxCoeff(&best);
      correct += best == y[r];
    }
  });
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

double mean_loss(const Network& net, const ArchParams& arch, const TaskBundle& task, std::span<const int> idx,
                 const std::string& head_key) {
  if (idx.empty()) throw std::invalid_argument("mean_loss: empty index set");
  double total = 0.0;
  eval_chunks(net, arch, task, idx, head_key, [&](Graph& g, const Tensor& logits, const std::vector<int>& y) {
    total += diff::cross_entropy(g, logits, y).item() * static_cast<double>(y.size());
  });
  return total / static_cast<double>(idx.size());
}

SearchReport search(Network& net, ArchParams& arch, const SearchTask& task, const DartsConfig& cfg) {
  cfg.validate();
  if (!task.bundle) throw std::invalid_argument("search: no task data");
  if (task.split.train_w.empty()) throw std::invalid_argument("search: empty w_train partition");
  if (task.split.train_alpha.empty()) throw std::invalid_argument("search: empty alpha_train partition");
  if (task.split.validation.empty()) throw std::invalid_argument("search: empty validation partition");
  check_alpha(net.normal_spec(), arch.normal_alpha());
  check_alpha(net.reduce_spec(), arch.reduce_alpha());

  const auto t0 = std::chrono::steady_clock::now();
  SearchSession session(net, arch, cfg);
  SearchReport report;
  report.epochs = cfg.epochs;
  double last_loss = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) last_loss = session.epoch(task, e, e >= cfg.warmup_epochs, dropout_at(cfg, e)).train_loss;
  report.op_evals = session.op_evals();
  report.final_train_loss =
      cfg.epochs > 0 ? last_loss : mean_loss(net, arch, *task.bundle, task.split.train_w, task.head_key);
  report.final_val_acc = accuracy(net, arch, *task.bundle, task.split.validation, task.head_key);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace wsnas
