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
#include "wsnas/tas.hpp"

#include "wsnas/rng.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace wsnas {

// Stage plans ------------------------------------------------------------------

void StagePlan::validate() const {
  if (stages.empty()) throw std::invalid_argument("stage plan: no stages");
  for (size_t k = 0; k < stages.size(); ++k) {
    const Stage& s = stages[k];
    const std::string at = "stage plan: stage " + std::to_string(k + 1);
    if (s.cells < 1) throw std::invalid_argument(at + " needs at least one cell");
    if (s.ops < 1 || s.ops > kNumOps) throw std::invalid_argument(at + " keeps " + std::to_string(s.ops) + " ops");
    if (s.epochs < 0 || s.warmup < 0 || s.warmup > s.epochs)
      throw std::invalid_argument(at + " needs 0 <= warmup <= epochs");
    if (k > 0 && s.cells <= stages[k - 1].cells) throw std::invalid_argument(at + ": cell counts must increase");
    if (k > 0 && s.ops >= stages[k - 1].ops) throw std::invalid_argument(at + ": op counts must decrease");
  }
}

StagePlan StagePlan::parse(const std::string& text) {
  StagePlan plan;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::vector<int> f;
    std::stringstream is(item);
    std::string tok;
    while (std::getline(is, tok, ':')) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != tok.size())
        throw std::invalid_argument("stage plan: '" + item + "' is not of the form L:O:E[:W]");
      f.push_back(v);
    }
    if (f.size() != 3 && f.size() != 4)
      throw std::invalid_argument("stage plan: '" + item + "' is not of the form L:O:E[:W]");
    plan.stages.push_back({f[0], f[1], f[2], f.size() == 4 ? f[3] : 3 * f[2] / 8});
  }
  plan.validate();
  return plan;
}

std::string StagePlan::to_string() const {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ",";
    out += std::to_string(s.cells) + ":" + std::to_string(s.ops) + ":" + std::to_string(s.epochs) + ":" +
           std::to_string(s.warmup);
  }
  return out;
}

StagePlan StagePlan::desk_default() { return StagePlan{{{2, 8, 8, 3}, {4, 5, 8, 3}, {6, 3, 8, 3}}}; }

Json stage_plan_to_json(const StagePlan& plan) {
  Json j = Json::array();
  for (const auto& s : plan.stages)
    j.push_back({{"cells", s.cells}, {"ops", s.ops}, {"epochs", s.epochs}, {"warmup", s.warmup}});
  return j;
}

StagePlan stage_plan_from_json(const Json& j) {
  StagePlan p;
  for (const auto& s : j)
    p.stages.push_back(
        {s.at("cells").get<int>(), s.at("ops").get<int>(), s.at("epochs").get<int>(), s.at("warmup").get<int>()});
  p.validate();
  return p;
}

// Pruning ----------------------------------------------------------------------

std::pair<CellSpec, Alpha> prune_ops(const CellSpec& space, const Alpha& alpha, int keep) {
  check_alpha(space, alpha);
  if (keep < 1) throw std::invalid_argument("prune_ops: keep must be >= 1");
  std::vector<std::vector<Op>> edges;
  Alpha out;
  for (int e = 0; e < space.num_edges(); ++e) {
    const auto& ops = space.edge_ops(e);
    const int width = static_cast<int>(ops.size());
    if (keep > width)
      throw std::invalid_argument("prune_ops: keep " + std::to_string(keep) + " exceeds width " +
                                  std::to_string(width) + " of edge " + std::to_string(e));
    const Eigen::VectorXd w = edge_softmax(alpha[static_cast<size_t>(e)]);
    std::vector<int> pos(static_cast<size_t>(width));
    std::iota(pos.begin(), pos.end(), 0);
    std::stable_sort(pos.begin(), pos.end(), [&](int a, int b) {
      if (w[a] != w[b]) return w[a] > w[b];
      return op_index(ops[static_cast<size_t>(a)]) < op_index(ops[static_cast<size_t>(b)]);
    });
    pos.resize(static_cast<size_t>(keep));
    std::sort(pos.begin(), pos.end());
    std::vector<Op> kept;
    for (int p : pos) kept.push_back(ops[static_cast<size_t>(p)]);
    edges.push_back(std::move(kept));
    out.push_back(Eigen::VectorXd::Zero(keep));
  }
  return {CellSpec(space.kind(), space.steps(), std::move(edges)), std::move(out)};
}

// Transfer architectures -------------------------------------------------------

int TransferArchitecture::width() const {
  const auto a = normal.width(), b = reduce.width();
  if (!a || !b || *a != *b) throw std::invalid_argument("transfer architecture: edges differ in width");
  return *a;
}

TransferArchitecture TransferArchitecture::structure_only() const {
  TransferArchitecture t = *this;
  t.normal_alpha.reset();
  t.reduce_alpha.reset();
  t.weights.reset();
  return t;
}

SearchReport TransferArchitecture::total_report() const {
  SearchReport r;
  for (const auto& h : history) {
    r.epochs += h.report.epochs;
    r.op_evals += h.report.op_evals;
    r.wall_seconds += h.report.wall_seconds;
    r.final_train_loss = h.report.final_train_loss;
    r.final_val_acc = h.report.final_val_acc;
  }
  return r;
}

void TransferArchitecture::validate() const {
  width();
  if (normal.kind() != CellKind::Normal || reduce.kind() != CellKind::Reduction)
    throw std::invalid_argument("transfer architecture: cell kinds swapped");
  if (normal_alpha.has_value() != weights.has_value() || reduce_alpha.has_value() != weights.has_value())
    throw std::invalid_argument("transfer architecture: alpha and weights must be present together");
  if (normal_alpha) {
    check_alpha(normal, *normal_alpha);
    check_alpha(reduce, *reduce_alpha);
  }
  net_spec.validate();
}

// Search -----------------------------------------------------------------------

namespace {

struct BoundTask {
  const TaskBundle* bundle;
  SearchTask search;
};

SearchReport run_stage(Network& net, ArchParams& arch, const std::vector<BoundTask>& tasks, const Stage& stage,
                       const DartsConfig& base, std::uint64_t seed) {
  const long n = static_cast<long>(tasks.size());
  DartsConfig cfg = base;
  cfg.epochs = static_cast<int>(n * stage.epochs);
  cfg.warmup_epochs = static_cast<int>(n * stage.warmup);
  cfg.seed = seed;
  cfg.validate();

  const auto t0 = std::chrono::steady_clock::now();
  SearchSession session(net, arch, cfg);
  double last_loss = 0.0;
  for (long g = 0; g < cfg.epochs; ++g) {
    const auto& t = tasks[static_cast<size_t>(g % n)];
    last_loss = session.epoch(t.search, g, g >= cfg.warmup_epochs, dropout_at(cfg, static_cast<int>(g))).train_loss;
  }
  SearchReport r;
  r.epochs = cfg.epochs;
  r.op_evals = session.op_evals();
  if (cfg.epochs == 0) {
    for (const auto& t : tasks) last_loss += mean_loss(net, arch, *t.bundle, t.search.split.train_w, t.search.head_key);
    last_loss /= static_cast<double>(n);
  }
  r.final_train_loss = last_loss;
  for (const auto& t : tasks)
    r.final_val_acc += accuracy(net, arch, *t.bundle, t.search.split.validation, t.search.head_key);
  r.final_val_acc /= static_cast<double>(n);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

TransferArchitecture run_tas(const std::vector<const TaskBundle*>& input, const CellSpec& normal_space,
                             const CellSpec& reduce_space, const TasConfig& cfg) {
  cfg.plan.validate();
  if (input.empty()) throw std::invalid_argument("tas: no tasks");
  for (const auto* t : input) {
    if (!t) throw std::invalid_argument("tas: null task");
    if (t->c != input[0]->c || t->h != input[0]->h || t->w != input[0]->w)
      throw std::invalid_argument("tas: task '" + t->task_id + "' has input shape " + std::to_string(t->c) + "x" +
                                  std::to_string(t->h) + "x" + std::to_string(t->w) + ", expected " +
                                  std::to_string(input[0]->c) + "x" + std::to_string(input[0]->h) + "x" +
                                  std::to_string(input[0]->w));
  }
  const auto w0 = normal_space.width(), r0 = reduce_space.width();
  const int first = cfg.plan.stages.front().ops;
  if (!w0 || !r0 || *w0 != first || *r0 != first)
    throw std::invalid_argument("tas: the first stage keeps " + std::to_string(first) +
                                " ops but the initial space is not uniformly that wide");

  std::vector<BoundTask> tasks;
  for (int i : meta_task_order(input)) {
    const TaskBundle* t = input[static_cast<size_t>(i)];
    tasks.push_back({t, SearchTask{t, stratified_split(*t, cfg.val_fraction, cfg.seed), t->task_id}});
  }

  TransferArchitecture out;
  out.plan = cfg.plan;
  out.seed = cfg.seed;
  for (const auto& t : tasks)
    if (std::find(out.source_tasks.begin(), out.source_tasks.end(), t.bundle->task_id) == out.source_tasks.end())
      out.source_tasks.push_back(t.bundle->task_id);

  CellSpec normal = normal_space, reduce = reduce_space;
  Alpha na = zero_alpha(normal), ra = zero_alpha(reduce);
  for (size_t k = 0; k < cfg.plan.stages.size(); ++k) {
    const Stage& stage = cfg.plan.stages[k];
    if (k > 0) {
      std::tie(normal, na) = prune_ops(normal, na, stage.ops);
      std::tie(reduce, ra) = prune_ops(reduce, ra, stage.ops);
    }
    const NetworkSpec ns{stage.cells, cfg.init_channels, tasks[0].bundle->c, tasks[0].bundle->classes, true};
    Network net(ns, normal, reduce, derive_seed(cfg.seed, "stage" + std::to_string(k) + ".weights"),
                tasks[0].search.head_key);
    for (const auto& t : tasks) {
      if (!net.has_head(t.search.head_key))
        net.reset_head(t.search.head_key, t.bundle->classes, derive_seed(cfg.seed, "stage" + std::to_string(k) + ".weights"));
      else if (net.head_classes(t.search.head_key) != t.bundle->classes)
        throw std::invalid_argument("tas: task id '" + t.search.head_key + "' appears with different class counts");
    }
    ArchParams arch = ArchParams::from_alpha(na, ra);
    const SearchReport rep = run_stage(net, arch, tasks, stage, cfg.darts, derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    na = arch.normal_alpha();
    ra = arch.reduce_alpha();
    out.history.push_back({stage, normal, reduce, rep});
    if (k + 1 == cfg.plan.stages.size()) {
      out.normal = normal;
      out.reduce = reduce;
      out.net_spec = ns;
      out.normal_alpha = na;
      out.reduce_alpha = ra;
      out.weights = net.weights();
    }
  }
  return out;
}

}  // namespace

std::vector<int> meta_task_order(const std::vector<const TaskBundle*>& tasks) {
  std::vector<int> order(tasks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return tasks[static_cast<size_t>(a)]->n < tasks[static_cast<size_t>(b)]->n; });
  return order;
}

TransferArchitecture tas_single(const TaskBundle& task, const CellSpec& normal_space, const CellSpec& reduce_space,
                                const TasConfig& cfg) {
  return run_tas({&task}, normal_space, reduce_space, cfg);
}

TransferArchitecture tas_meta(const std::vector<const TaskBundle*>& tasks, const CellSpec& normal_space,
                              const CellSpec& reduce_space, const TasConfig& cfg) {
  return run_tas(tasks, normal_space, reduce_space, cfg);
}

// Files ------------------------------------------------------------------------

std::filesystem::path transfer_weights_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".weights");
  return p;
}

void save_transfer(const std::filesystem::path& path, const TransferArchitecture& arch) {
  arch.validate();
  Json j{{"format", "wsnas-transfer"},
         {"version", 1},
         {"normal", cell_spec_to_json(arch.normal)},
         {"reduce", cell_spec_to_json(arch.reduce)},
         {"net_spec", network_spec_to_json(arch.net_spec)},
         {"source_tasks", arch.source_tasks},
         {"plan", stage_plan_to_json(arch.plan)},
         {"seed", arch.seed}};
  Json hist = Json::array();
  for (const auto& h : arch.history)
    hist.push_back({{"cells", h.stage.cells},
                    {"ops", h.stage.ops},
                    {"epochs", h.stage.epochs},
                    {"warmup", h.stage.warmup},
                    {"normal", cell_spec_to_json(h.normal)},
                    {"reduce", cell_spec_to_json(h.reduce)},
                    {"report", h.report.to_json()}});
  j["history"] = hist;
  if (arch.trained()) {
    const auto bytes = encode_weights(*arch.weights);
    const auto wpath = transfer_weights_path(path);
    j["alpha"] = {{"normal", alpha_to_json(*arch.normal_alpha)}, {"reduce", alpha_to_json(*arch.reduce_alpha)}};
    j["weights"] = {{"file", wpath.filename().string()}, {"crc32", crc32(bytes)}};
    write_file(wpath, bytes);
  }
  write_text(path, j.dump(2) + "\n");
}

TransferArchitecture load_transfer(const std::filesystem::path& path) {
  const Json j = Json::parse(read_text(path));
  if (j.value("format", std::string()) != "wsnas-transfer")
    throw FormatError("transfer architecture: '" + path.string() + "' is not a transfer architecture file");
  if (j.at("version").get<int>() != 1)
    throw FormatError("transfer architecture: unsupported version " + std::to_string(j.at("version").get<int>()));
  TransferArchitecture t;
  t.normal = cell_spec_from_json(j.at("normal"));
  t.reduce = cell_spec_from_json(j.at("reduce"));
  t.net_spec = network_spec_from_json(j.at("net_spec"));
  t.source_tasks = j.at("source_tasks").get<std::vector<std::string>>();
  t.plan = stage_plan_from_json(j.at("plan"));
  t.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& h : j.at("history")) {
    StageRecord r;
    r.stage = Stage{h.at("cells").get<int>(), h.at("ops").get<int>(), h.at("epochs").get<int>(),
                    h.at("warmup").get<int>()};
    r.normal = cell_spec_from_json(h.at("normal"));
    r.reduce = cell_spec_from_json(h.at("reduce"));
    r.report = SearchReport::from_json(h.at("report"));
    t.history.push_back(std::move(r));
  }
  if (j.contains("weights")) {
    const auto wpath = path.parent_path() / j.at("weights").at("file").get<std::string>();
    const auto bytes = read_file(wpath);
    if (crc32(bytes) != j.at("weights").at("crc32").get<std::uint32_t>())
      throw FormatError("transfer architecture: weights file '" + wpath.string() + "' does not match its record");
    t.weights = decode_weights(bytes);
    t.normal_alpha = alpha_from_json(j.at("alpha").at("normal"));
    t.reduce_alpha = alpha_from_json(j.at("alpha").at("reduce"));
  }
  t.validate();
  return t;
}

}  // namespace wsnas
