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
#include "doctest.h"

#include "support/planted.hpp"
#include "support/tmpdir.hpp"
#include "wsnas/tas.hpp"

#include <algorithm>
#include <random>

using namespace wsnas;

namespace {

const std::vector<Op> kFour{Op::MaxPool3x3, Op::SepConv3x3, Op::SkipConnect, Op::Zero};

TasConfig quick_config(const std::string& plan) {
  TasConfig cfg;
  cfg.plan = StagePlan::parse(plan);
  cfg.darts.batch_size = 8;
  cfg.init_channels = 4;
  return cfg;
}

bool subset_per_edge(const CellSpec& inner, const CellSpec& outer) {
  if (inner.num_edges() != outer.num_edges()) return false;
  for (int e = 0; e < inner.num_edges(); ++e)
    for (Op op : inner.edge_ops(e))
      if (!outer.admits(e, op)) return false;
  return true;
}

bool same_alpha(const Alpha& a, const Alpha& b) {
  if (a.size() != b.size()) return false;
  for (size_t e = 0; e < a.size(); ++e)
    if (a[e] != b[e]) return false;
  return true;
}

}  // namespace

TEST_CASE("stage plan parsing") {
  const auto p = StagePlan::parse("2:8:1,3:3:1");
  REQUIRE(p.stages.size() == 2);
  CHECK(p.stages[0] == Stage{2, 8, 1, 0});
  CHECK(p.stages[1] == Stage{3, 3, 1, 0});
  CHECK(StagePlan::parse("2:8:8").stages[0].warmup == 3);
  CHECK(StagePlan::parse("2:8:8:5").stages[0].warmup == 5);
  CHECK(StagePlan::parse(StagePlan::desk_default().to_string()).stages == StagePlan::desk_default().stages);
  CHECK(stage_plan_from_json(stage_plan_to_json(p)).stages == p.stages);

  CHECK_THROWS_WITH(StagePlan::parse("2:8"), doctest::Contains("L:O:E"));
  CHECK_THROWS_WITH(StagePlan::parse("2:x:1"), doctest::Contains("L:O:E"));
  CHECK_THROWS_WITH(StagePlan::parse("3:8:1,3:5:1"), doctest::Contains("cell counts must increase"));
  CHECK_THROWS_WITH(StagePlan::parse("2:5:1,3:5:1"), doctest::Contains("op counts must decrease"));
  CHECK_THROWS(StagePlan::parse("2:9:1"));
  CHECK_THROWS(StagePlan::parse("2:8:1:2"));
  CHECK_THROWS(StagePlan::parse(""));
}

TEST_CASE("prune_ops keeps the strongest ops") {
  const auto space = CellSpec::full(CellKind::Normal, 2);
  Alpha a = zero_alpha(space);
  for (auto& e : a) e << 8, 7, 6, 5, 4, 3, 2, 1;
  const auto [s3, a3] = prune_ops(space, a, 3);
  for (int e = 0; e < s3.num_edges(); ++e) {
    CHECK(s3.edge_ops(e) == std::vector<Op>{Op::MaxPool3x3, Op::AvgPool3x3, Op::SepConv3x3});
    CHECK(a3[static_cast<size_t>(e)].isZero(0.0));
  }
  CHECK(prune_ops(space, a, 8).first == space);
  CHECK_THROWS_WITH(prune_ops(space, a, 9), doctest::Contains("exceeds width"));
  CHECK_THROWS(prune_ops(space, a, 0));
}

TEST_CASE("prune_ops breaks ties by op index and keeps list order") {
  const CellSpec space = CellSpec::uniform(CellKind::Normal, 1, {Op::Zero, Op::SkipConnect, Op::MaxPool3x3});
  const auto [s, a] = prune_ops(space, zero_alpha(space), 2);
  CHECK(s.edge_ops(0) == std::vector<Op>{Op::SkipConnect, Op::MaxPool3x3});
  Alpha inf = zero_alpha(space);
  inf[0][2] = -std::numeric_limits<double>::infinity();
  inf[1][0] = -std::numeric_limits<double>::infinity();
  const auto [s2, a2] = prune_ops(space, inf, 2);
  CHECK(s2.edge_ops(0) == std::vector<Op>{Op::Zero, Op::SkipConnect});
  CHECK(s2.edge_ops(1) == std::vector<Op>{Op::SkipConnect, Op::MaxPool3x3});
}

TEST_CASE("prune_ops survivors are nested across keep sizes") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(-2, 2);
  const auto space = CellSpec::full(CellKind::Reduction, 4);
  for (int rep = 0; rep < 100; ++rep) {
    Alpha a = zero_alpha(space);
    // Coarse values force plenty of ties.
    for (auto& e : a)
      for (auto& x : e) x = rep % 2 ? nd(rng) : coarse(rng);
    CellSpec prev = space;
    for (int keep = 8; keep >= 1; --keep) {
      const auto s = prune_ops(space, a, keep).first;
      CHECK(s.width() == keep);
      CHECK(subset_per_edge(s, prev));
      prev = s;
    }
  }
}

TEST_CASE("one-stage plan at full width leaves the space unchanged") {
  const auto task = generate_task("texture", 0, 32, 2, 8);
  const auto n = CellSpec::uniform(CellKind::Normal, 2, kFour);
  const auto r = CellSpec::uniform(CellKind::Reduction, 2, kFour);
  const auto lam = tas_single(task, n, r, quick_config("1:4:1"));
  CHECK(lam.normal == n);
  CHECK(lam.reduce == r);
  CHECK(lam.trained());
  CHECK(lam.structure_only().trained() == false);
  CHECK(lam.source_tasks == std::vector<std::string>{task.task_id});
  CHECK_THROWS_WITH(tas_single(task, n, r, quick_config("1:3:1")), doctest::Contains("not uniformly"));
}

TEST_CASE("each stage searches at its configured width and depth") {
  const auto task = generate_task("blob", 1, 32, 2, 8);
  const auto n0 = CellSpec::full(CellKind::Normal), r0 = CellSpec::full(CellKind::Reduction);
  const auto lam = tas_single(task, n0, r0, quick_config("2:8:1,4:5:1,6:3:1"));
  REQUIRE(lam.history.size() == 3);
  const int cells[] = {2, 4, 6}, widths[] = {8, 5, 3};
  CellSpec prev_n = n0, prev_r = r0;
  for (size_t k = 0; k < 3; ++k) {
    const auto& h = lam.history[k];
    CHECK(h.stage.cells == cells[k]);
    CHECK(h.normal.width() == widths[k]);
    CHECK(h.reduce.width() == widths[k]);
    CHECK(subset_per_edge(h.normal, prev_n));
    CHECK(subset_per_edge(h.reduce, prev_r));
    prev_n = h.normal;
    prev_r = h.reduce;
  }
  CHECK(lam.width() == 3);
  CHECK(lam.net_spec.num_cells == 6);
  CHECK(lam.normal == lam.history.back().normal);
  // λ̂'s network matches the final stage.
  Network net(lam.net_spec, lam.normal, lam.reduce, 0, task.task_id);
  CHECK_NOTHROW(net.load_trunk(*lam.weights));
}

TEST_CASE("meta processing order is ascending in size") {
  const auto big = generate_task("texture", 0, 100, 2, 8);
  const auto small = generate_task("texture", 1, 50, 2, 8);
  CHECK(meta_task_order({&big, &small}) == std::vector<int>{1, 0});
  CHECK(meta_task_order({&small, &big}) == std::vector<int>{0, 1});
  const auto other = generate_task("blob", 1, 50, 2, 8);
  CHECK(meta_task_order({&big, &small, &other}) == std::vector<int>{1, 2, 0});
}

TEST_CASE("meta over one task equals single-task search") {
  const auto task = generate_task("texture", 2, 32, 2, 8);
  const auto n = CellSpec::uniform(CellKind::Normal, 2, kFour);
  const auto r = CellSpec::uniform(CellKind::Reduction, 2, kFour);
  const auto cfg = quick_config("2:4:2:1,3:2:2:1");
  const auto a = tas_single(task, n, r, cfg);
  const auto b = tas_meta({&task}, n, r, cfg);
  CHECK(a.normal == b.normal);
  CHECK(a.reduce == b.reduce);
  CHECK(same_alpha(*a.normal_alpha, *b.normal_alpha));
  CHECK(encode_weights(*a.weights) == encode_weights(*b.weights));
}

TEST_CASE("meta over [T, T] equals single-task search with doubled epochs") {
  const auto task = generate_task("blob", 3, 32, 2, 8);
  const auto n = CellSpec::uniform(CellKind::Normal, 2, kFour);
  const auto r = CellSpec::uniform(CellKind::Reduction, 2, kFour);
  const auto meta = tas_meta({&task, &task}, n, r, quick_config("2:4:2:1,3:2:1:0"));
  const auto single = tas_single(task, n, r, quick_config("2:4:4:2,3:2:2:0"));
  CHECK(meta.normal == single.normal);
  CHECK(meta.reduce == single.reduce);
  CHECK(same_alpha(*meta.normal_alpha, *single.normal_alpha));
  CHECK(same_alpha(*meta.reduce_alpha, *single.reduce_alpha));
  CHECK(encode_weights(*meta.weights) == encode_weights(*single.weights));
  CHECK(meta.total_report().op_evals == single.total_report().op_evals);
}

TEST_CASE("meta search trains one head per task on a shared trunk") {
  const auto a = generate_task("texture", 4, 40, 3, 8);
  const auto b = generate_task("blob", 4, 32, 2, 8);
  const auto n = CellSpec::uniform(CellKind::Normal, 2, kFour);
  const auto r = CellSpec::uniform(CellKind::Reduction, 2, kFour);
  const auto meta = tas_meta({&a, &b}, n, r, quick_config("2:4:1,3:2:1"));
  CHECK(meta.width() == 2);
  CHECK(meta.source_tasks == std::vector<std::string>{b.task_id, a.task_id});
  CHECK(meta.weights->at("head." + a.task_id + ".bias").numel() == 3);
  CHECK(meta.weights->at("head." + b.task_id + ".bias").numel() == 2);

  const auto odd = generate_task("texture", 5, 32, 2, 16);
  CHECK_THROWS_WITH(tas_meta({&a, &odd}, n, r, quick_config("2:4:1")), doctest::Contains("input shape"));
}

TEST_CASE("transfer architecture files round trip") {
  testing::TempDir dir;
  const auto task = generate_task("texture", 6, 32, 2, 8);
  const auto n = CellSpec::uniform(CellKind::Normal, 2, kFour);
  const auto r = CellSpec::uniform(CellKind::Reduction, 2, kFour);
  const auto hat = tas_single(task, n, r, quick_config("2:4:1,3:3:1"));

  save_transfer(dir / "hat.json", hat);
  CHECK(std::filesystem::exists(dir / "hat.weights"));
  const auto back = load_transfer(dir / "hat.json");
  CHECK(back.normal == hat.normal);
  CHECK(back.reduce == hat.reduce);
  CHECK(back.net_spec == hat.net_spec);
  CHECK(same_alpha(*back.normal_alpha, *hat.normal_alpha));
  CHECK(same_alpha(*back.reduce_alpha, *hat.reduce_alpha));
  CHECK(encode_weights(*back.weights) == encode_weights(*hat.weights));
  CHECK(back.plan.stages == hat.plan.stages);
  REQUIRE(back.history.size() == 2);
  CHECK(back.history[1].report.op_evals == hat.history[1].report.op_evals);

  save_transfer(dir / "lam.json", hat.structure_only());
  CHECK_FALSE(std::filesystem::exists(dir / "lam.weights"));
  const auto lam = load_transfer(dir / "lam.json");
  CHECK_FALSE(lam.trained());
  CHECK(lam.normal == hat.normal);

  auto bytes = read_file(dir / "hat.weights");
  bytes[bytes.size() / 2] ^= 1;
  write_file(dir / "hat.weights", bytes);
  CHECK_THROWS_AS(load_transfer(dir / "hat.json"), FormatError);
}

TEST_CASE("planted task: skip survives pruning") {
  testing::PlantedProblem p(0);
  TasConfig cfg;
  cfg.plan = StagePlan{{{3, 2, 20, 2}, {4, 1, 1, 0}}};
  cfg.darts = p.cfg;
  cfg.init_channels = 8;
  const auto lam = tas_single(p.task, p.normal, p.reduce, cfg);
  // Three cells place reductions at 1 and 2, so the last searched cell is a
  // reduction feeding the classifier directly. Its edges decide whether the
  // planted signal reaches the head; the normal cell's output scale is
  // normalized away downstream.
  for (int e = 0; e < lam.reduce.num_edges(); ++e) CHECK(lam.reduce.edge_ops(e) == std::vector<Op>{Op::SkipConnect});
}
