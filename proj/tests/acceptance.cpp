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
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Criterion numbers given as arguments restrict the run.

#include "support/gradcheck.hpp"
#include "support/planted.hpp"
#include "support/spaces.hpp"
#include "support/tmpdir.hpp"
#include "wsnas/eval.hpp"
#include "wsnas/warmstart.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>

using namespace wsnas;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1 ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::map<std::string, int> instances;
  double worst = 0.0;
  std::string worst_label;
  for (int rep = 0; rep < 50; ++rep)
    for (const auto& c : testing::random_grad_cases(rng)) {
      const double err = testing::gradcheck(c, rng).max_rel_error;
      ++instances[diff::op_kind_name(c.kind)];
      if (err > worst) worst = err, worst_label = c.label;
    }
  int fewest = 1 << 30;
  for (const auto& [k, n] : instances) fewest = std::min(fewest, n);
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && fewest >= 50 && secs < 60.0,
          fmt("%zu op kinds, >=%d instances each, max rel err %.2e (%s), %.1fs", instances.size(), fewest, worst,
              worst_label.c_str(), secs)};
}

// 2 ---------------------------------------------------------------------------

Outcome mixed_edge_oracle() {
  std::mt19937_64 rng(2);
  double uniform_err = 0.0, hot_err = 0.0;
  for (int stride : {1, 2}) {
    Graph g;
    const Tensor x = Tensor::from({2, 4, 6, 6}, testing::random_vec(rng, 2 * 4 * 6 * 6));
    std::map<Op, WeightMap> ws;
    for (Op op : kAllOps)
      for (auto& [name, shape] : op_param_shapes(op, 4, stride))
        ws[op].emplace(name, Tensor::from(shape, testing::random_vec(rng, diff::numel(shape), -0.5, 0.5)));
    auto apply = [&](Op op) {
      return apply_op(g, op, x, stride, [&](const std::string& s) -> const Tensor& { return ws[op].at(s); });
    };
    const std::vector<Op> ops(kAllOps.begin(), kAllOps.end());
    std::vector<diff::Vec> single;
    diff::Vec mean;
    for (Op op : ops) {
      single.push_back(apply(op).value());
      mean = mean.size() ? diff::Vec(mean + single.back()) : single.back();
    }
    mean /= static_cast<double>(ops.size());
    const ForwardContext ctx;
    const Tensor mixed = mixed_edge_forward(g, ops, Tensor::zeros({8}), apply, ctx);
    uniform_err = std::max(uniform_err, (mixed.value() - mean).cwiseAbs().maxCoeff());
    for (size_t k = 0; k < ops.size(); ++k) {
      diff::Vec logits = diff::Vec::Zero(8);
      logits[static_cast<Eigen::Index>(k)] = 40.0;
      const Tensor hot = mixed_edge_forward(g, ops, Tensor::from({8}, logits), apply, ctx);
      hot_err = std::max(hot_err, (hot.value() - single[k]).cwiseAbs().maxCoeff());
    }
  }
  return {uniform_err < 1e-12 && hot_err < 1e-10,
          fmt("uniform max err %.2e, one-hot max err %.2e", uniform_err, hot_err)};
}

// 3 ---------------------------------------------------------------------------

Outcome planted_search() {
  const auto t0 = std::chrono::steady_clock::now();
  int skip_wins = 0, brute_agrees = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    testing::PlantedProblem p(seed);
    Network net = p.network(seed);
    auto arch = ArchParams::from_alpha(zero_alpha(p.normal), zero_alpha(p.reduce));
    search(net, arch, p.search_task, p.cfg);
    const auto genes = discretize(p.normal, arch.normal_alpha());
    // Discretization never picks zero, so also require skip to outweigh zero
    // on every edge.
    bool skip = count_ops(genes, Op::SkipConnect) == static_cast<int>(genes.size());
    for (const auto& e : arch.normal_alpha()) skip = skip && e[0] > e[1];
    skip_wins += skip;
    brute_agrees += p.discrete_loss(Op::SkipConnect, seed) < p.discrete_loss(Op::Zero, seed);
  }
  const double secs = seconds_since(t0);
  return {skip_wins >= 9 && brute_agrees == 10 && secs < 300.0,
          fmt("skip selected %d/10, brute force prefers skip %d/10, %.1fs", skip_wins, brute_agrees, secs)};
}

// 4 ---------------------------------------------------------------------------

Outcome fim_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> xs{-2.0, -0.5, 0.3, 1.0, 2.5};
  const std::vector<int> labels{0, 1, 0, 1, 1};
  const LogisticModel model(xs, labels, 0.7);
  const double analytic = logistic_fisher(xs, 0.7);
  // 5 inputs x 2e4 label draws = 1e5 draws.
  const double emp = empirical_fim_diag(model, 20000, 0)[0];
  FimEstimatorConfig cfg;
  cfg.beta = 1e-2;  // beta/2N = 1e-3, far below F
  const double rob = robust_fim_diag(model, cfg, 0).fisher[0];
  const double e1 = std::abs(emp - analytic) / analytic, e2 = std::abs(rob - analytic) / analytic;
  const double secs = seconds_since(t0);
  return {e1 < 0.02 && e2 < 0.10 && secs < 120.0,
          fmt("analytic %.5f, empirical %.5f (%.2f%%), robust %.5f (%.2f%%), %.1fs", analytic, emp, 100 * e1, rob,
              100 * e2, secs)};
}

// 5 ---------------------------------------------------------------------------

Outcome dsym_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](int n) {
    diff::Vec v(n);
    for (auto& x : v) x = u(rng) < 0.1 ? 0.0 : u(rng) * std::pow(10.0, 4.0 * u(rng) - 2.0);
    return v;
  };
  int bad = 0;
  double scale_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 1 + static_cast<int>(rng() % 64);
    const diff::Vec a = draw(n), b = draw(n);
    const double d = d_sym(a, b);
    const double c = std::pow(10.0, 6.0 * u(rng) - 3.0);
    bad += d != d_sym(b, a) || d < 0.0 || d > 1.0 || d_sym(a, a) != 0.0;
    scale_err = std::max(scale_err, std::abs(d_sym(diff::Vec(c * a), diff::Vec(c * b)) - d));
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && scale_err <= 1e-12 && secs < 10.0,
          fmt("%d property failures, max scaling drift %.2e, %.2fs", bad, scale_err, secs)};
}

// 6 ---------------------------------------------------------------------------

Outcome table_selection() {
  const SimilarityMatrix m = load_similarity(std::string(WSNAS_TEST_DATA) + "/metadataset_similarity.csv");
  const std::string a = select_transfer(m, "aircraft"), b = select_transfer(m, "birds");
  const double da = m.at("aircraft", a), db = m.at("birds", b);
  return {a == "flower" && b == "flower" && da == 0.019 && db == 0.017,
          fmt("aircraft -> %s (%.3f), birds -> %s (%.3f)", a.c_str(), da, b.c_str(), db)};
}

// 7 ---------------------------------------------------------------------------

WarmStartConfig quick_warm_start(WarmStartMode mode) {
  WarmStartConfig c;
  c.mode = mode;
  c.darts.epochs = 1;
  c.darts.warmup_epochs = 0;
  c.darts.batch_size = 8;
  return c;
}

Outcome subgraph_invariant() {
  const TaskBundle task = generate_task("texture", 7, 24, 2);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int violations = 0, runs = 0;
  for (int run = 0; run < 100; ++run) {
    const int mode = run % 3;
    const TransferArchitecture lambda = testing::random_lambda(rng, 3, mode != 0);
    WarmStartConfig cfg = quick_warm_start(static_cast<WarmStartMode>(mode));
    cfg.darts.seed = rng();
    cfg.darts.dropout0 = 0.9 * u(rng);
    cfg.max_skips = static_cast<int>(rng() % 4);
    cfg.refine = rng() % 4 != 0;
    try {
      const WarmStartResult r = warm_start_search(task, lambda, cfg);
      violations += !is_subgraph(r.genotype, lambda.normal, lambda.reduce);
    } catch (const std::logic_error&) {
      ++violations;
    }
    ++runs;
  }
  return {runs == 100 && violations == 0, fmt("%d runs, %d violations", runs, violations)};
}

// 8 ---------------------------------------------------------------------------

bool subset_per_edge(const CellSpec& inner, const CellSpec& outer) {
  if (inner.num_edges() != outer.num_edges()) return false;
  for (int e = 0; e < inner.num_edges(); ++e)
    for (Op op : inner.edge_ops(e))
      if (!outer.admits(e, op)) return false;
  return true;
}

Outcome stage_plan_invariants() {
  const TaskBundle task = generate_task("blob", 1, 32, 2, 8);
  TasConfig cfg;
  cfg.plan = StagePlan::parse("2:8:1,4:5:1,6:3:1");
  cfg.darts.batch_size = 8;
  const auto n0 = CellSpec::full(CellKind::Normal), r0 = CellSpec::full(CellKind::Reduction);
  const TransferArchitecture lam = tas_single(task, n0, r0, cfg);
  const int cells[] = {2, 4, 6}, widths[] = {8, 5, 3};
  bool ok = lam.history.size() == 3;
  std::string seen;
  CellSpec prev_n = n0, prev_r = r0;
  for (size_t k = 0; ok && k < 3; ++k) {
    const auto& h = lam.history[k];
    ok = h.stage.cells == cells[k] && h.normal.width() == widths[k] && h.reduce.width() == widths[k] &&
         subset_per_edge(h.normal, prev_n) && subset_per_edge(h.reduce, prev_r);
    seen += fmt("%s%d cells/%d ops", k ? ", " : "", h.stage.cells, h.normal.width());
    prev_n = h.normal;
    prev_r = h.reduce;
  }
  ok = ok && lam.normal == prev_n && lam.reduce == prev_r;
  return {ok, seen + (ok ? ", nested per edge" : ", NOT nested")};
}

// 9, 10 -----------------------------------------------------------------------

// Everything computed on benchmark_tasks(0): one 3-stage TAS per task, the
// probe embeddings, and a warm start of each task from its nearest neighbour.
struct Benchmark {
  std::vector<TaskBundle> tasks = benchmark_tasks(0);
  std::vector<TransferArchitecture> lambdas;
  std::vector<TaskEmbedding> embeddings;
  SimilarityMatrix sim;
  std::vector<SearchReport> warm;
  std::vector<std::string> warm_sources;
  double seconds = 0.0;

  Benchmark() {
    const auto t0 = std::chrono::steady_clock::now();
    const TasConfig tas;
    for (const auto& t : tasks)
      lambdas.push_back(tas_single(t, CellSpec::full(CellKind::Normal), CellSpec::full(CellKind::Reduction), tas));
    const ProbeNetwork probe = train_probe(probe_reference_task(), 30, 0);
    for (const auto& t : tasks) embeddings.push_back(embed_task(probe, t, EmbedConfig{}));
    sim = build_similarity_matrix(embeddings);
    for (size_t i = 0; i < tasks.size(); ++i) {
      warm_sources.push_back(select_transfer(sim, tasks[i].task_id));
      const auto& lam = lambdas[static_cast<size_t>(sim.index_of(warm_sources.back()))];
      warm.push_back(warm_start_search(tasks[i], lam, WarmStartConfig{}).report);
    }
    seconds = seconds_since(t0);
  }

  const std::string& family(size_t i) const { return tasks[i].family_id; }
  const TransferArchitecture& lambda_of(const std::string& id) const {
    return lambdas[static_cast<size_t>(sim.index_of(id))];
  }
};

Outcome cost_accounting(const Benchmark& bm) {
  // Counting identity: same task, depth, batches and seed; 3 ops per edge
  // against the full 8.
  const TaskBundle task = generate_task("texture", 9, 24, 2);
  std::mt19937_64 rng(9);
  bool identity = true;
  std::string ratios;
  for (int rep = 0; rep < 3; ++rep) {
    const TransferArchitecture lambda = testing::random_lambda(rng, 3, false);
    WarmStartConfig cfg = quick_warm_start(WarmStartMode::Lambda);
    cfg.darts.epochs = 2;
    cfg.darts.warmup_epochs = rep % 2;
    const SearchReport ws = warm_start_search(task, lambda, cfg).report;
    Network full(lambda.net_spec, CellSpec::full(CellKind::Normal), CellSpec::full(CellKind::Reduction), 1);
    ArchParams arch = ArchParams::from_alpha(zero_alpha(full.normal_spec()), zero_alpha(full.reduce_spec()));
    const SearchTask st{&task, stratified_split(task, cfg.val_fraction, cfg.darts.seed), "default"};
    const SearchReport base = search(full, arch, st, cfg.darts);
    identity = identity && ws.op_evals > 0 && 8 * ws.op_evals == 3 * base.op_evals;
  }

  bool end_to_end = true;
  long ws_total = 0, base_total = 0;
  double worst = 0.0;
  for (size_t i = 0; i < bm.tasks.size(); ++i) {
    const long base = bm.lambdas[i].total_report().op_evals, ws = bm.warm[i].op_evals;
    ws_total += ws;
    base_total += base;
    worst = std::max(worst, static_cast<double>(ws) / static_cast<double>(base));
    end_to_end = end_to_end && 2 * ws <= base;
  }
  ratios = fmt("8*ws == 3*full %s; end-to-end ws/TAS worst %.3f, overall %ld/%ld = %.3f",
               identity ? "holds" : "FAILS", worst, ws_total, base_total,
               static_cast<double>(ws_total) / static_cast<double>(base_total));
  return {identity && end_to_end, ratios};
}

Outcome separation(const Benchmark& bm) {
  const auto t0 = std::chrono::steady_clock::now();
  double within = 0.0, cross = 0.0;
  int nw = 0, nc = 0;
  for (size_t i = 0; i < bm.tasks.size(); ++i)
    for (size_t j = i + 1; j < bm.tasks.size(); ++j) {
      const double d = bm.sim.d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (bm.family(i) == bm.family(j)) within += d, ++nw;
      else cross += d, ++nc;
    }
  within /= nw;
  cross /= nc;

  // Retrain targets are the second task of each family; sources are the
  // first task of the same and of the other family.
  const std::map<std::string, std::pair<std::string, std::string>> plan{
      {"texture-2", {"texture-1", "blob-1"}}, {"blob-2", {"blob-1", "texture-1"}}};
  bool retrain_ok = true;
  std::string detail = fmt("within %.3f < cross %.3f", within, cross);
  for (const auto& [target_id, sources] : plan) {
    const TaskBundle& target = bm.tasks[static_cast<size_t>(bm.sim.index_of(target_id))];
    std::vector<double> same, other;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      WarmStartConfig wc;
      wc.darts.seed = seed;
      const auto split = stratified_split(target, wc.val_fraction, seed);
      std::vector<int> train = split.train_w;
      train.insert(train.end(), split.train_alpha.begin(), split.train_alpha.end());
      EvalConfig ec;
      ec.seed = seed;
      for (const auto& [src, out] : {std::pair{sources.first, &same}, std::pair{sources.second, &other}}) {
        const Genotype g = warm_start_search(target, bm.lambda_of(src), wc).genotype;
        out->push_back(retrain(g, target, train, split.validation, ec).eval_acc);
      }
    }
    const double ms = median(same), mo = median(other);
    retrain_ok = retrain_ok && ms >= mo - 0.02;
    detail += fmt("; %s median acc same-family %.3f vs cross-family %.3f", target_id.c_str(), ms, mo);
  }
  detail += fmt(", %.0fs", seconds_since(t0));
  return {within < cross && retrain_ok, detail};
}

// 11 --------------------------------------------------------------------------

Outcome skip_refinement() {
  const auto spec = CellSpec::uniform(CellKind::Normal, 4, {Op::SepConv3x3, Op::SkipConnect, Op::Zero});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int exact = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    // Four input edges carry skip as their strongest op, with distinct
    // weights; every other edge favours sep_conv_3x3.
    Alpha a = zero_alpha(spec);
    for (auto& v : a) v << 0.5 + u(rng), -1.0, 0.0;
    std::vector<std::pair<int, int>> input_edges;
    for (int node = 0; node < 4; ++node)
      for (int pred = 0; pred < 2; ++pred) input_edges.push_back({node, pred});
    std::shuffle(input_edges.begin(), input_edges.end(), rng);
    std::vector<std::pair<double, std::pair<int, int>>> skips;
    for (int k = 0; k < 4; ++k) {
      const double w = 3.0 + 2.0 * u(rng);
      const auto [node, pred] = input_edges[static_cast<size_t>(k)];
      a[static_cast<size_t>(CellSpec::edge_index(node, pred))] << 0.0, w, 0.0;
      skips.push_back({w, {node, pred}});
    }
    // Other input edges get a large sep weight so each node keeps them.
    for (int k = 4; k < 8; ++k) {
      const auto [node, pred] = input_edges[static_cast<size_t>(k)];
      a[static_cast<size_t>(CellSpec::edge_index(node, pred))] << 6.0, -1.0, 0.0;
    }
    if (count_ops(discretize(spec, a), Op::SkipConnect) != 4) continue;
    std::sort(skips.rbegin(), skips.rend());
    const auto refined = refine_skip_connects(spec, a, 2);
    std::map<std::pair<int, int>, Op> by_edge;
    for (size_t i = 0; i < refined.size(); ++i) by_edge[{static_cast<int>(i / 2), refined[i].pred}] = refined[i].op;
    exact += count_ops(refined, Op::SkipConnect) == 2 && by_edge[skips[0].second] == Op::SkipConnect &&
             by_edge[skips[1].second] == Op::SkipConnect;
  }
  return {exact == trials, fmt("%d/%d instances keep exactly the two heaviest skips", exact, trials)};
}

// 12 --------------------------------------------------------------------------

std::string pipeline_genotype_json(std::uint64_t seed) {
  const std::vector<TaskBundle> sources{generate_task("texture", 1, 48, 2), generate_task("blob", 1, 48, 2)};
  const TaskBundle target = generate_task("texture", 2, 48, 2);
  const ProbeNetwork probe = train_probe(probe_reference_task(), 5, seed);
  EmbedConfig ec;
  ec.seed = seed;
  ec.head_epochs = 10;
  std::vector<ArchiveEntry> archive;
  TasConfig tc;
  tc.plan = StagePlan::parse("2:8:1,4:5:1,6:3:1");
  tc.seed = seed;
  tc.darts.seed = seed;
  testing::TempDir dir;
  for (const auto& s : sources) {
    const auto lam = tas_single(s, CellSpec::full(CellKind::Normal), CellSpec::full(CellKind::Reduction), tc);
    const auto path = dir / (s.task_id + ".json");
    save_transfer(path, lam);
    archive.push_back({s.task_id, embed_task(probe, s, ec), path, path});
  }
  const ArchiveEntry& pick = select_transfer(archive, embed_task(probe, target, ec));
  WarmStartConfig wc;
  wc.mode = WarmStartMode::LambdaHat;
  wc.darts.seed = seed;
  wc.darts.epochs = 2;
  wc.darts.warmup_epochs = 1;
  return genotype_to_json(warm_start_search(target, load_transfer(pick.lambda_hat_path), wc).genotype).dump(2);
}

Outcome determinism() {
  const std::string a = pipeline_genotype_json(0), b = pipeline_genotype_json(0);

  testing::TempDir dir;
  const TaskBundle task = generate_task("blob", 4, 40, 3);
  save_bundle(dir / "t.bundle", task);
  save_bundle(dir / "t2.bundle", load_bundle(dir / "t.bundle"));
  const auto b1 = crc32(read_file(dir / "t.bundle")), b2 = crc32(read_file(dir / "t2.bundle"));

  TasConfig tc;
  tc.plan = StagePlan::parse("2:8:1,3:3:1");
  tc.darts.batch_size = 8;
  const auto lam = tas_single(generate_task("texture", 4, 24, 2), CellSpec::full(CellKind::Normal),
                              CellSpec::full(CellKind::Reduction), tc);
  // The JSON names its weights file, so both copies use the same file name.
  const auto first = dir / "a", second = dir / "b";
  std::filesystem::create_directories(first);
  std::filesystem::create_directories(second);
  save_transfer(first / "l.json", lam);
  save_transfer(second / "l.json", load_transfer(first / "l.json"));
  const bool weights_equal =
      crc32(read_file(first / "l.json")) == crc32(read_file(second / "l.json")) &&
      crc32(read_file(transfer_weights_path(first / "l.json"))) ==
          crc32(read_file(transfer_weights_path(second / "l.json")));
  const bool ok = a == b && b1 == b2 && weights_equal;
  return {ok, fmt("genotype JSON %s (%zu bytes), bundle CRC %08x/%08x, lambda-hat files %s", a == b ? "identical" : "DIFFERS",
                  a.size(), b1, b2, weights_equal ? "bit-exact" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  int failures = 0, ran = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& run) {
    if (!wanted(id)) return;
    ++ran;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "mixed-edge oracle", mixed_edge_oracle);
  report(3, "planted-oracle search", planted_search);
  report(4, "FIM oracle", fim_oracle);
  report(5, "d_sym properties", dsym_properties);
  report(6, "similarity table selection", table_selection);
  report(7, "sub-graph invariant", subgraph_invariant);
  report(8, "stage-plan invariants", stage_plan_invariants);

  std::unique_ptr<Benchmark> bm;
  if (wanted(9) || wanted(10)) {
    try {
      bm = std::make_unique<Benchmark>();
      std::printf("     benchmark: 6 TAS runs, embeddings and warm starts in %.0fs\n", bm->seconds);
    } catch (const std::exception& e) {
      std::printf("     benchmark setup threw: %s\n", e.what());
    }
  }
  auto need_bm = [&](Outcome (*f)(const Benchmark&)) {
    return [&bm, f]() -> Outcome {
      if (!bm) return {false, "benchmark setup failed"};
      return f(*bm);
    };
  };
  report(9, "cost accounting", need_bm(cost_accounting));
  report(10, "separation", need_bm(separation));
  report(11, "skip-connect refinement", skip_refinement);
  report(12, "determinism and persistence", determinism);

  std::printf("%d of %d criteria failed\n", failures, ran);
  return failures ? 1 : 0;
}
