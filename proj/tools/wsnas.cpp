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
// wsnas: command-line driver for task generation, transfer architecture
// search, task embeddings, warm-started search and evaluation.

#include "cli_support.hpp"
#include "wsnas/warmstart.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

namespace fs = std::filesystem;
using namespace wsnas;
using wsnas::cli::UsageError;

namespace {

struct Common {
  std::vector<std::string> argv;
  bool force = false;
};

// Writes `text` to `path` plus its provenance sidecar.
void emit(const fs::path& path, const std::string& text, const Json& prov) {
  write_text(path, text);
  cli::write_provenance(path, prov);
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

Genotype load_genotype(const fs::path& path) {
  const Json j = read_json(path);
  return genotype_from_json(j.contains("genotype") ? j.at("genotype") : j);
}

// Accepts a bare report or a file with a "total" or "report" member.
SearchReport load_report(const fs::path& path) {
  const Json j = read_json(path);
  if (j.contains("total")) return SearchReport::from_json(j.at("total"));
  if (j.contains("report")) return SearchReport::from_json(j.at("report"));
  return SearchReport::from_json(j);
}

std::string space_summary(const TransferArchitecture& t) {
  return "normal " + std::to_string(t.normal.total_ops()) + " ops, reduce " + std::to_string(t.reduce.total_ops()) +
         " ops, " + std::to_string(t.width()) + " per edge";
}

// taskgen ------------------------------------------------------------------------

struct TaskgenArgs {
  std::string family;
  std::uint64_t seed = 0;
  int n = 96;
  int classes = 2;
  int size = 16;
  fs::path out;
};

void run_taskgen(const Common& c, const TaskgenArgs& a) {
  const TaskBundle b = generate_task(a.family, a.seed, a.n, a.classes, a.size);
  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".meta.json"});
  save_bundle(out, b);
  cli::write_provenance(out, cli::provenance(c.argv, a.seed, {}));
  std::cout << out.string() << "\n";
}

// probe ----------------------------------------------------------------------------

struct ProbeArgs {
  fs::path task;
  int epochs = 30;
  std::uint64_t seed = 0;
  fs::path out;
};

void run_probe(const Common& c, const ProbeArgs& a) {
  const TaskBundle ref = a.task.empty() ? probe_reference_task() : load_bundle(a.task);
  const ProbeNetwork probe = train_probe(ref, a.epochs, a.seed);
  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".meta.json"});
  probe.save(out);
  std::vector<fs::path> inputs;
  if (!a.task.empty()) inputs.push_back(a.task);
  cli::write_provenance(out, cli::provenance(c.argv, a.seed, inputs));
  std::cout << out.string() << " (checksum " << probe.checksum() << ")\n";
}

// tas -------------------------------------------------------------------------------

struct TasArgs {
  std::vector<fs::path> tasks;
  std::string stages = StagePlan::desk_default().to_string();
  std::uint64_t seed = 0;
  bool meta = false;
  int channels = 4;
  int batch_size = 16;
  fs::path out;
};

Json tas_report_json(const TransferArchitecture& t) {
  Json stages = Json::array();
  for (const auto& h : t.history)
    stages.push_back({{"cells", h.stage.cells}, {"ops", h.stage.ops}, {"epochs", h.stage.epochs},
                      {"warmup", h.stage.warmup}, {"report", h.report.to_json()}});
  return Json{{"format", "wsnas-tas-report"}, {"version", 1},
              {"source_tasks", t.source_tasks}, {"plan", t.plan.to_string()},
              {"seed", t.seed}, {"stages", stages},
              {"total", t.total_report().to_json()}};
}

void run_tas(const Common& c, const TasArgs& a) {
  if (a.tasks.size() > 1 && !a.meta) throw UsageError("several --task flags need --meta");
  TasConfig cfg;
  try {
    cfg.plan = StagePlan::parse(a.stages);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--stages: ") + e.what());
  }
  cfg.darts.batch_size = a.batch_size;
  cfg.init_channels = a.channels;
  cfg.seed = a.seed;
  std::vector<TaskBundle> bundles;
  for (const auto& p : a.tasks) bundles.push_back(load_bundle(p));
  const CellSpec normal = CellSpec::full(CellKind::Normal), reduce = CellSpec::full(CellKind::Reduction);
  TransferArchitecture hat;
  if (a.meta) {
    std::vector<const TaskBundle*> ptrs;
    for (const auto& b : bundles) ptrs.push_back(&b);
    hat = tas_meta(ptrs, normal, reduce, cfg);
  } else {
    hat = tas_single(bundles.front(), normal, reduce, cfg);
  }

  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".hat.json", ".hat.weights", ".report.json"});
  const Json prov = cli::provenance(c.argv, a.seed, a.tasks);
  const fs::path hat_path = cli::sibling(out, ".hat.json"), report_path = cli::sibling(out, ".report.json");
  save_transfer(out, hat.structure_only());
  cli::write_provenance(out, prov);
  save_transfer(hat_path, hat);
  cli::write_provenance(hat_path, prov);
  emit(report_path, tas_report_json(hat).dump(2) + "\n", prov);
  std::cout << "lambda     " << out.string() << " (" << space_summary(hat) << ")\n"
            << "lambda_hat " << hat_path.string() << "\n"
            << "report     " << report_path.string() << "\n";
}

// embed / similarity / select ------------------------------------------------------

struct EmbedArgs {
  fs::path task;
  fs::path probe;
  std::string estimator = "empirical";
  std::uint64_t seed = 0;
  int head_epochs = 50;
  int max_samples = 0;
  int mc_draws = 1;
  double beta = 1e-2;
  fs::path out;
};

void run_embed(const Common& c, const EmbedArgs& a) {
  EmbedConfig cfg;
  try {
    cfg.estimator = estimator_from_name(a.estimator);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  cfg.head_epochs = a.head_epochs;
  cfg.max_samples = a.max_samples;
  cfg.fim.mc_draws = a.mc_draws;
  cfg.fim.beta = a.beta;
  cfg.seed = a.seed;
  const TaskBundle task = load_bundle(a.task);
  const ProbeNetwork probe = ProbeNetwork::load(a.probe);
  const TaskEmbedding e = embed_task(probe, task, cfg);
  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".meta.json"});
  save_embedding(out, e);
  cli::write_provenance(out, cli::provenance(c.argv, a.seed, {a.task, a.probe}));
  std::cout << out.string() << " (" << e.values.size() << " values, " << a.estimator << ")\n";
}

struct SimilarityArgs {
  std::vector<fs::path> embeddings;
  fs::path out;
};

void run_similarity(const Common& c, const SimilarityArgs& a) {
  if (a.embeddings.size() < 2) throw UsageError("similarity needs at least two --embedding flags");
  std::vector<TaskEmbedding> es;
  for (const auto& p : a.embeddings) es.push_back(load_embedding(p));
  const SimilarityMatrix m = build_similarity_matrix(es);
  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force);
  emit(out, similarity_to_csv(m), cli::provenance(c.argv, std::nullopt, a.embeddings));
  std::cout << out.string() << "\n";
}

struct SelectArgs {
  fs::path matrix;
  std::string query;
  std::vector<std::string> candidates;
  fs::path query_embedding;
  std::vector<fs::path> archive;
  fs::path out;
};

void run_select(const Common& c, const SelectArgs& a) {
  const bool by_matrix = !a.matrix.empty(), by_archive = !a.query_embedding.empty();
  if (by_matrix == by_archive) throw UsageError("give either --matrix with --query, or --embedding with --archive");
  Json result;
  std::vector<fs::path> inputs;
  if (by_matrix) {
    if (a.query.empty()) throw UsageError("--matrix needs --query");
    const SimilarityMatrix m = load_similarity(a.matrix);
    const std::string pick = select_transfer(m, a.query, a.candidates);
    result = {{"query", a.query}, {"selected", pick}, {"distance", m.at(a.query, pick)}};
    inputs.push_back(a.matrix);
  } else {
    if (a.archive.empty()) throw UsageError("--embedding needs at least one --archive embedding");
    const TaskEmbedding q = load_embedding(a.query_embedding);
    std::vector<ArchiveEntry> entries;
    for (const auto& p : a.archive) {
      TaskEmbedding e = load_embedding(p);
      entries.push_back({e.task_id, std::move(e), {}, {}});
    }
    const ArchiveEntry& pick = select_transfer(entries, q);
    result = {{"query", q.task_id}, {"selected", pick.task_id}, {"distance", d_sym(pick.embedding, q)}};
    inputs.push_back(a.query_embedding);
    inputs.insert(inputs.end(), a.archive.begin(), a.archive.end());
  }
  std::cout << result.at("selected").get<std::string>() << "\n";
  if (!a.out.empty()) {
    cli::DirLock lock(a.out.parent_path());
    const fs::path out = cli::resolve_output(a.out, c.force);
    emit(out, result.dump(2) + "\n", cli::provenance(c.argv, std::nullopt, inputs));
  }
}

// warmstart / baseline / eval -------------------------------------------------------

struct WarmstartArgs {
  fs::path task;
  fs::path lambda;
  std::string mode = "lambda";
  std::uint64_t seed = 0;
  int epochs = 8;
  int warmup = 3;
  int batch_size = 16;
  double dropout = 0.0;
  std::vector<double> sweep;
  int sweep_epochs = 10;
  int max_skips = 2;
  bool no_refine = false;
  int width = 3;
  fs::path out;
};

void run_warmstart(const Common& c, const WarmstartArgs& a) {
  WarmStartConfig cfg;
  try {
    cfg.mode = warm_start_mode_from_name(a.mode);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  cfg.darts.epochs = a.epochs;
  cfg.darts.warmup_epochs = a.warmup;
  cfg.darts.batch_size = a.batch_size;
  cfg.darts.dropout0 = a.dropout;
  cfg.darts.seed = a.seed;
  cfg.max_skips = a.max_skips;
  cfg.refine = !a.no_refine;
  cfg.expected_width = a.width;
  cfg.sweep_eval.epochs = a.sweep_epochs;
  cfg.sweep_eval.seed = a.seed;
  if (!a.sweep.empty()) cfg.dropout_sweep = a.sweep;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const TaskBundle task = load_bundle(a.task);
  const TransferArchitecture lambda = load_transfer(a.lambda);

  Genotype genotype;
  Json report{{"format", "wsnas-warmstart-report"}, {"version", 1}, {"mode", a.mode}, {"task", task.task_id},
              {"source_tasks", lambda.source_tasks}, {"config", darts_config_to_json(cfg.darts)}};
  if (a.sweep.empty()) {
    const WarmStartResult r = warm_start_search(task, lambda, cfg);
    genotype = r.genotype;
    report["report"] = r.report.to_json();
  } else {
    const SweepResult s = dropout_sweep(task, lambda, cfg);
    genotype = s.genotype;
    Json points = Json::array();
    SearchReport total;
    for (const auto& p : s.points) {
      points.push_back({{"dropout0", p.dropout0}, {"report", p.search.report.to_json()}, {"retrain", p.retrain.to_json()},
                        {"genotype", genotype_to_json(p.search.genotype)}});
      if (p.dropout0 == s.best_dropout0 && total.epochs == 0) total = p.search.report;
    }
    report["best_dropout0"] = s.best_dropout0;
    report["sweep"] = points;
    report["report"] = total.to_json();
  }
  report["config"]["dropout0"] = a.sweep.empty() ? a.dropout : report["best_dropout0"].get<double>();

  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".report.json"});
  const Json prov = cli::provenance(c.argv, a.seed, {a.task, a.lambda});
  emit(out, genotype_to_json(genotype).dump(2) + "\n", prov);
  emit(cli::sibling(out, ".report.json"), report.dump(2) + "\n", prov);
  std::cout << "genotype " << out.string() << " (" << count_ops(genotype.normal, Op::SkipConnect)
            << " skip-connects in the normal cell)\n";
}

struct BaselineArgs {
  fs::path task;
  std::string stages = StagePlan::desk_default().to_string();
  std::uint64_t seed = 0;
  int channels = 4;
  int batch_size = 16;
  int max_skips = 2;
  fs::path out;
};

void run_baseline(const Common& c, const BaselineArgs& a) {
  TasConfig cfg;
  try {
    cfg.plan = StagePlan::parse(a.stages);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--stages: ") + e.what());
  }
  cfg.darts.batch_size = a.batch_size;
  cfg.init_channels = a.channels;
  cfg.seed = a.seed;
  const TaskBundle task = load_bundle(a.task);
  const BaselineResult b =
      baseline_search(task, CellSpec::full(CellKind::Normal), CellSpec::full(CellKind::Reduction), cfg, a.max_skips);
  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".report.json"});
  const Json prov = cli::provenance(c.argv, a.seed, {a.task});
  emit(out, genotype_to_json(b.genotype).dump(2) + "\n", prov);
  const Json report{{"format", "wsnas-baseline-report"}, {"version", 1}, {"task", task.task_id},
                    {"plan", cfg.plan.to_string()}, {"total", b.report.to_json()}};
  emit(cli::sibling(out, ".report.json"), report.dump(2) + "\n", prov);
  std::cout << "genotype " << out.string() << " (" << b.report.op_evals << " op evaluations)\n";
}

struct EvalArgs {
  fs::path task;
  fs::path genotype;
  EvalConfig cfg;
  double val_fraction = 1.0 / 3.0;
  fs::path out;
};

void run_eval(const Common& c, const EvalArgs& a) {
  try {
    a.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const TaskBundle task = load_bundle(a.task);
  const Genotype g = load_genotype(a.genotype);
  const Split sp = stratified_split(task, a.val_fraction, a.cfg.seed);
  std::vector<int> train = sp.train_w;
  train.insert(train.end(), sp.train_alpha.begin(), sp.train_alpha.end());
  const EvalResult r = retrain(g, task, train, sp.validation, a.cfg);
  Json j = r.to_json();
  j["task"] = task.task_id;
  j["classes"] = task.classes;
  j["config"] = eval_config_to_json(a.cfg);
  std::cout << "accuracy " << r.eval_acc << " [" << r.ci_low << ", " << r.ci_high << "] on " << r.n_eval
            << " held-out samples\n";
  if (!a.out.empty()) {
    cli::DirLock lock(a.out.parent_path());
    const fs::path out = cli::resolve_output(a.out, c.force);
    emit(out, j.dump(2) + "\n", cli::provenance(c.argv, a.cfg.seed, {a.task, a.genotype}));
  }
}

// export-dot / check-subgraph / savings ---------------------------------------------

struct DotArgs {
  fs::path genotype;
  fs::path lambda;
  fs::path out;
};

void run_export_dot(const Common& c, const DotArgs& a) {
  if (a.genotype.empty() == a.lambda.empty()) throw UsageError("give exactly one of --genotype or --lambda");
  std::string normal, reduce;
  if (!a.genotype.empty()) {
    const Genotype g = load_genotype(a.genotype);
    normal = export_dot(g.normal, g.steps, "normal");
    reduce = export_dot(g.reduce, g.steps, "reduce");
  } else {
    const TransferArchitecture t = load_transfer(a.lambda);
    normal = export_dot(t.normal, "normal");
    reduce = export_dot(t.reduce, "reduce");
  }
  for (const auto* dot : {&normal, &reduce})
    if (const auto err = dot_syntax_error(*dot)) throw std::logic_error("generated DOT does not parse: " + *err);
  cli::DirLock lock(a.out.parent_path());
  const fs::path out = cli::resolve_output(a.out, c.force, {".reduce.dot"});
  const Json prov = cli::provenance(c.argv, std::nullopt, {a.genotype.empty() ? a.lambda : a.genotype});
  emit(out, normal, prov);
  emit(cli::sibling(out, ".reduce.dot"), reduce, prov);
  std::cout << out.string() << "\n" << cli::sibling(out, ".reduce.dot").string() << "\n";
}

struct CheckArgs {
  fs::path genotype;
  fs::path lambda;
};

// Exit 0 when the genotype lies in λ's space, 1 with the offending edges
// otherwise.
int run_check_subgraph(const CheckArgs& a) {
  const Genotype g = load_genotype(a.genotype);
  const TransferArchitecture t = load_transfer(a.lambda);
  Json bad = Json::array();
  for (const auto& [name, genes, space] : {std::tuple{"normal", &g.normal, &t.normal},
                                           std::tuple{"reduce", &g.reduce, &t.reduce}})
    for (size_t k = 0; k < genes->size(); ++k) {
      const CellGenes one{(*genes)[k]};
      const int node = static_cast<int>(k) / 2;
      int edge = (*genes)[k].pred;
      for (int j = 0; j < node; ++j) edge += j + 2;
      if (edge >= space->num_edges() || !space->admits(edge, (*genes)[k].op))
        bad.push_back({{"cell", name}, {"node", node}, {"pred", (*genes)[k].pred},
                       {"op", std::string(op_name((*genes)[k].op))}});
    }
  if (bad.empty() != is_subgraph(g, t.normal, t.reduce)) throw std::logic_error("sub-graph check disagrees");
  if (bad.empty()) {
    std::cout << "ok: genotype lies in the transfer architecture's space\n";
    return 0;
  }
  Json err = cli::error_json("subgraph", "genotype uses ops outside the transfer architecture", 1);
  err["error"]["violations"] = bad;
  std::cerr << err.dump() << "\n";
  return 1;
}

struct SavingsArgs {
  fs::path ws;
  fs::path baseline;
  fs::path out;
};

void run_savings(const Common& c, const SavingsArgs& a) {
  const Savings s = report_savings(load_report(a.ws), load_report(a.baseline));
  std::cout << "op_eval_reduction " << s.op_eval_reduction << "\nwall_reduction " << s.wall_reduction << "\n";
  if (!a.out.empty()) {
    cli::DirLock lock(a.out.parent_path());
    const fs::path out = cli::resolve_output(a.out, c.force);
    emit(out, s.to_json().dump(2) + "\n", cli::provenance(c.argv, std::nullopt, {a.ws, a.baseline}));
  }
}

}  // namespace

int main(int argc, char** argv) {
  Common common;
  common.argv.assign(argv, argv + argc);

  CLI::App app{"Transfer architecture search and warm-started DARTS at desk scale", "wsnas"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("--force", common.force, "Overwrite existing outputs instead of picking a -NN name");

  std::function<int()> action;
  auto on = [&](CLI::App* sub, auto fn) { sub->callback([&action, fn] { action = fn; }); };

  TaskgenArgs tg;
  auto* s_tg = app.add_subcommand("taskgen", "Generate a synthetic task bundle");
  s_tg->add_option("--family", tg.family, "texture, blob or planted")->required();
  s_tg->add_option("--seed", tg.seed);
  s_tg->add_option("--n", tg.n, "Samples");
  s_tg->add_option("--classes", tg.classes);
  s_tg->add_option("--size", tg.size, "Image side length");
  s_tg->add_option("--out", tg.out, "Bundle path")->required();
  on(s_tg, [&] { return run_taskgen(common, tg), 0; });

  ProbeArgs pr;
  auto* s_pr = app.add_subcommand("probe", "Train the frozen probe network");
  s_pr->add_option("--task", pr.task, "Reference bundle (default: built-in reference task)");
  s_pr->add_option("--epochs", pr.epochs);
  s_pr->add_option("--seed", pr.seed);
  s_pr->add_option("--out", pr.out)->required();
  on(s_pr, [&] { return run_probe(common, pr), 0; });

  TasArgs ta;
  auto* s_ta = app.add_subcommand("tas", "Transfer architecture search");
  s_ta->add_option("--task", ta.tasks, "Bundle (repeat with --meta)")->required();
  s_ta->add_option("--stages", ta.stages, "Stage plan L:O:E[:W],...");
  s_ta->add_option("--seed", ta.seed);
  s_ta->add_flag("--meta", ta.meta, "Joint search over every --task");
  s_ta->add_option("--channels", ta.channels, "Initial channels");
  s_ta->add_option("--batch-size", ta.batch_size);
  s_ta->add_option("--out", ta.out, "lambda JSON; lambda_hat and the report go next to it")->required();
  on(s_ta, [&] { return run_tas(common, ta), 0; });

  EmbedArgs em;
  auto* s_em = app.add_subcommand("embed", "Task embedding from the probe's Fisher information");
  s_em->add_option("--task", em.task)->required();
  s_em->add_option("--probe", em.probe)->required();
  s_em->add_option("--estimator", em.estimator, "empirical or robust");
  s_em->add_option("--seed", em.seed);
  s_em->add_option("--head-epochs", em.head_epochs);
  s_em->add_option("--max-samples", em.max_samples, "0 = all");
  s_em->add_option("--mc-draws", em.mc_draws);
  s_em->add_option("--beta", em.beta, "Robust estimator KL weight");
  s_em->add_option("--out", em.out)->required();
  on(s_em, [&] { return run_embed(common, em), 0; });

  SimilarityArgs si;
  auto* s_si = app.add_subcommand("similarity", "Pairwise d_sym matrix as CSV");
  s_si->add_option("--embedding", si.embeddings)->required();
  s_si->add_option("--out", si.out)->required();
  on(s_si, [&] { return run_similarity(common, si), 0; });

  SelectArgs se;
  auto* s_se = app.add_subcommand("select", "Pick the source task nearest to a query");
  s_se->add_option("--matrix", se.matrix, "Similarity CSV");
  s_se->add_option("--query", se.query, "Query task id in the matrix");
  s_se->add_option("--candidate", se.candidates, "Restrict to these ids");
  s_se->add_option("--embedding", se.query_embedding, "Query embedding");
  s_se->add_option("--archive", se.archive, "Archive embeddings");
  s_se->add_option("--out", se.out, "Selection JSON");
  on(s_se, [&] { return run_select(common, se), 0; });

  WarmstartArgs ws;
  auto* s_ws = app.add_subcommand("warmstart", "Warm-started search on a transfer architecture");
  s_ws->add_option("--task", ws.task)->required();
  s_ws->add_option("--lambda", ws.lambda, "Transfer architecture JSON")->required();
  s_ws->add_option("--mode", ws.mode, "lambda, lambda_hat or meta");
  s_ws->add_option("--seed", ws.seed);
  s_ws->add_option("--epochs", ws.epochs);
  s_ws->add_option("--warmup", ws.warmup);
  s_ws->add_option("--batch-size", ws.batch_size);
  s_ws->add_option("--dropout", ws.dropout, "Initial skip-connect dropout");
  s_ws->add_option("--sweep", ws.sweep, "Dropout values to compare by short retrain");
  s_ws->add_option("--sweep-epochs", ws.sweep_epochs);
  s_ws->add_option("--max-skips", ws.max_skips);
  s_ws->add_flag("--no-refine", ws.no_refine, "Plain discretization");
  s_ws->add_option("--width", ws.width, "Expected ops per edge (0 = any)");
  s_ws->add_option("--out", ws.out, "Genotype JSON")->required();
  on(s_ws, [&] { return run_warmstart(common, ws), 0; });

  BaselineArgs bl;
  auto* s_bl = app.add_subcommand("baseline", "Full staged search from scratch plus derivation");
  s_bl->add_option("--task", bl.task)->required();
  s_bl->add_option("--stages", bl.stages);
  s_bl->add_option("--seed", bl.seed);
  s_bl->add_option("--channels", bl.channels);
  s_bl->add_option("--batch-size", bl.batch_size);
  s_bl->add_option("--max-skips", bl.max_skips);
  s_bl->add_option("--out", bl.out, "Genotype JSON")->required();
  on(s_bl, [&] { return run_baseline(common, bl), 0; });

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "Retrain a genotype from scratch and report held-out accuracy");
  s_ev->add_option("--task", ev.task)->required();
  s_ev->add_option("--genotype", ev.genotype)->required();
  s_ev->add_option("--cells", ev.cfg.cells);
  s_ev->add_option("--channels", ev.cfg.init_channels);
  s_ev->add_option("--epochs", ev.cfg.epochs);
  s_ev->add_option("--batch-size", ev.cfg.batch_size);
  s_ev->add_option("--lr", ev.cfg.opt.lr);
  s_ev->add_option("--momentum", ev.cfg.opt.momentum);
  s_ev->add_option("--weight-decay", ev.cfg.opt.weight_decay);
  s_ev->add_option("--seed", ev.cfg.seed);
  s_ev->add_option("--val-fraction", ev.val_fraction);
  s_ev->add_option("--out", ev.out, "Result JSON");
  on(s_ev, [&] { return run_eval(common, ev), 0; });

  DotArgs dt;
  auto* s_dt = app.add_subcommand("export-dot", "Graphviz files for a genotype or a transfer architecture");
  s_dt->add_option("--genotype", dt.genotype);
  s_dt->add_option("--lambda", dt.lambda);
  s_dt->add_option("--out", dt.out, "Normal-cell DOT; the reduction cell goes to <stem>.reduce.dot")->required();
  on(s_dt, [&] { return run_export_dot(common, dt), 0; });

  CheckArgs ck;
  auto* s_ck = app.add_subcommand("check-subgraph", "Exit 0 when a genotype lies in a transfer architecture");
  s_ck->add_option("--genotype", ck.genotype)->required();
  s_ck->add_option("--lambda", ck.lambda)->required();
  on(s_ck, [&] { return run_check_subgraph(ck); });

  SavingsArgs sv;
  auto* s_sv = app.add_subcommand("savings", "Search-cost reduction of a warm start against a baseline");
  s_sv->add_option("--ws", sv.ws, "Warm-start report JSON")->required();
  s_sv->add_option("--baseline", sv.baseline, "Baseline report JSON")->required();
  s_sv->add_option("--out", sv.out, "Savings JSON");
  on(s_sv, [&] { return run_savings(common, sv), 0; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n" << cli::error_json("usage", e.what(), 2).dump() << "\n";
    return 2;
  }

  try {
    try {
      worker_threads();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return action();
  } catch (const UsageError& e) {
    std::cerr << cli::error_json("usage", e.what(), 2).dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << cli::error_json("runtime", e.what(), 1).dump() << "\n";
    return 1;
  }
}
