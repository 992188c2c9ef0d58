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

#include "support/tmpdir.hpp"
#include "wsnas/tas.hpp"
#include "wsnas/task2vec.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <string>

using namespace wsnas;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs `wsnas <args>` inside `dir`.
Run wsnas_cli(const testing::TempDir& dir, const std::string& args, const std::string& env = "") {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" + WSNAS_CLI + "' " + args + " >'" +
                          o.string() + "' 2>'" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(o);
  r.err = read_text(e);
  return r;
}

std::uint32_t file_crc(const fs::path& p) { return crc32(read_file(p)); }

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("cli taskgen: force, suffixes, exit codes") {
  testing::TempDir dir;
  REQUIRE(wsnas_cli(dir, "taskgen --family texture --seed 3 --n 24 --out t/a.bundle").code == 0);
  const auto crc = file_crc(dir / "t/a.bundle");
  REQUIRE(wsnas_cli(dir, "taskgen --family texture --seed 3 --n 24 --out t/a.bundle --force").code == 0);
  CHECK(file_crc(dir / "t/a.bundle") == crc);
  CHECK(!fs::exists(dir / "t/a-01.bundle"));

  const Run again = wsnas_cli(dir, "taskgen --family texture --seed 4 --n 24 --out t/a.bundle");
  CHECK(again.code == 0);
  CHECK(contains(again.out, "t/a-01.bundle"));
  CHECK(file_crc(dir / "t/a.bundle") == crc);
  CHECK(fs::exists(dir / "t/a-01.meta.json"));

  const Run missing = wsnas_cli(dir, "taskgen --family texture");
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, "Usage"));
  const std::string last = missing.err.substr(missing.err.rfind('\n', missing.err.size() - 2) + 1);
  CHECK(Json::parse(last).at("error").at("kind") == "usage");

  const Run small = wsnas_cli(dir, "taskgen --family texture --n 3 --classes 4 --out t/x.bundle");
  CHECK(small.code == 1);
  const Json err = Json::parse(small.err);
  CHECK(contains(err.at("error").at("message").get<std::string>(), "n too small"));
  CHECK(err.at("error").at("exit_code") == 1);

  CHECK(wsnas_cli(dir, "taskgen --family texture --n 24 --out t/y.bundle", "WSNAS_THREADS=lots").code == 2);
  CHECK(wsnas_cli(dir, "frobnicate").code == 2);
}

TEST_CASE("cli: locked directory is refused") {
  testing::TempDir dir;
  fs::create_directories(dir / "t");
  const int fd = ::open((dir / "t/.wsnas.lock").c_str(), O_RDWR | O_CREAT, 0644);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX) == 0);
  const Run r = wsnas_cli(dir, "taskgen --family blob --n 24 --out t/a.bundle");
  ::close(fd);
  CHECK(r.code == 1);
  CHECK(contains(r.err, "locked"));
  CHECK(wsnas_cli(dir, "taskgen --family blob --n 24 --out t/a.bundle").code == 0);
}

TEST_CASE("cli pipeline: tas, warm starts, checks, eval, dot") {
  testing::TempDir dir;
  REQUIRE(wsnas_cli(dir, "taskgen --family texture --seed 1 --n 24 --out t/src.bundle").code == 0);
  REQUIRE(wsnas_cli(dir, "taskgen --family texture --seed 2 --n 24 --out t/new.bundle").code == 0);

  REQUIRE(wsnas_cli(dir, "tas --task t/src.bundle --stages 2:8:1,3:3:1 --batch-size 8 --out l/single.json").code == 0);
  const TransferArchitecture lam = load_transfer(dir / "l/single.json");
  CHECK(lam.width() == 3);
  CHECK(!lam.trained());
  const TransferArchitecture hat = load_transfer(dir / "l/single.hat.json");
  CHECK(hat.trained());
  CHECK(hat.normal == lam.normal);

  REQUIRE(wsnas_cli(dir, "tas --task t/src.bundle --meta --stages 2:8:1,3:3:1 --batch-size 8 --out l/meta.json").code ==
          0);
  const TransferArchitecture meta = load_transfer(dir / "l/meta.hat.json");
  CHECK(meta.normal == hat.normal);
  CHECK(meta.reduce == hat.reduce);
  CHECK(*meta.normal_alpha == *hat.normal_alpha);
  CHECK(wsnas_cli(dir, "tas --task t/src.bundle --task t/new.bundle --out l/x.json").code == 2);
  CHECK(wsnas_cli(dir, "tas --task t/src.bundle --stages 2:8 --out l/x.json").code == 2);

  const Json report = Json::parse(read_text(dir / "l/single.report.json"));
  CHECK(report.at("format") == "wsnas-tas-report");
  CHECK(report.at("version") == 1);
  REQUIRE(report.at("stages").size() == 2);
  for (const auto& s : report.at("stages"))
    for (const char* k : {"cells", "ops", "epochs", "warmup", "report"}) CHECK(s.contains(k));
  for (const char* k : {"epochs", "op_evals", "wall_seconds", "final_train_loss", "final_val_acc"})
    CHECK(report.at("total").contains(k));
  CHECK(report.at("total").at("op_evals").get<long>() == hat.total_report().op_evals);

  for (const char* mode : {"lambda", "lambda_hat"}) {
    const std::string g = std::string("g/") + mode + ".json";
    const Run ws = wsnas_cli(dir, std::string("warmstart --task t/new.bundle --lambda l/single.hat.json --mode ") + mode +
                                      " --epochs 1 --warmup 0 --batch-size 8 --out " + g);
    REQUIRE(ws.code == 0);
    CHECK(wsnas_cli(dir, "check-subgraph --genotype " + g + " --lambda l/single.json").code == 0);
  }
  CHECK(wsnas_cli(dir, "warmstart --task t/new.bundle --lambda l/single.json --mode lambda_hat --out g/x.json").code ==
        1);
  CHECK(wsnas_cli(dir, "warmstart --task t/new.bundle --lambda l/single.json --mode hat --out g/x.json").code == 2);

  // A genotype outside the space fails the validator.
  Json bad = Json::parse(read_text(dir / "g/lambda.json"));
  for (auto& gene : bad.at("normal")) gene[1] = "sep_conv_5x5";
  for (auto& gene : bad.at("reduce")) gene[1] = "sep_conv_5x5";
  write_text(dir / "g/bad.json", bad.dump());
  const Run chk = wsnas_cli(dir, "check-subgraph --genotype g/bad.json --lambda l/single.json");
  bool any_outside = false;
  for (int e = 0; e < lam.normal.num_edges(); ++e) any_outside |= !lam.normal.admits(e, Op::SepConv5x5);
  REQUIRE(any_outside);
  CHECK(chk.code == 1);
  CHECK(!Json::parse(chk.err).at("error").at("violations").empty());

  // Provenance reaches back to the task's generator seed.
  const Json prov = Json::parse(read_text(dir / "g/lambda.json.prov.json"));
  CHECK(prov.at("seed") == 0);
  const Json& task_in = prov.at("inputs").at(0);
  CHECK(task_in.at("crc32").get<std::uint32_t>() == file_crc(dir / "t/new.bundle"));
  CHECK(task_in.at("provenance").at("seed") == 2);
  CHECK(prov.at("inputs").at(1).at("provenance").at("inputs").at(0).at("provenance").at("seed") == 1);

  const Run ev = wsnas_cli(dir, "eval --task t/new.bundle --genotype g/lambda.json --epochs 0 --cells 2 --channels 4 "
                                "--out r/eval.json");
  REQUIRE(ev.code == 0);
  const Json e = Json::parse(read_text(dir / "r/eval.json"));
  CHECK(e.at("ci_low").get<double>() <= 0.5);
  CHECK(e.at("ci_high").get<double>() >= 0.5);
  CHECK(e.at("epochs") == 0);

  REQUIRE(wsnas_cli(dir, "export-dot --genotype g/lambda.json --out d/g.dot").code == 0);
  REQUIRE(wsnas_cli(dir, "export-dot --lambda l/single.json --out d/space.dot").code == 0);
  for (const char* f : {"d/g.dot", "d/g.reduce.dot", "d/space.dot", "d/space.reduce.dot"}) {
    CAPTURE(f);
    CHECK(!dot_syntax_error(read_text(dir / f)).has_value());
  }
  CHECK(wsnas_cli(dir, "export-dot --out d/none.dot").code == 2);

  REQUIRE(wsnas_cli(dir, "baseline --task t/new.bundle --stages 2:8:1,3:3:1 --batch-size 8 --out g/base.json").code == 0);
  const Run sv = wsnas_cli(dir, "savings --ws g/lambda.report.json --baseline g/base.report.json --out r/s.json");
  REQUIRE(sv.code == 0);
  const Json s = Json::parse(read_text(dir / "r/s.json"));
  CHECK(s.at("op_eval_reduction").get<double>() > 0.0);
}

TEST_CASE("cli embed, similarity and select") {
  testing::TempDir dir;
  REQUIRE(wsnas_cli(dir, "taskgen --family texture --seed 1 --n 24 --out t/a.bundle").code == 0);
  REQUIRE(wsnas_cli(dir, "taskgen --family blob --seed 1 --n 24 --out t/b.bundle").code == 0);
  REQUIRE(wsnas_cli(dir, "probe --epochs 1 --out p/probe.weights").code == 0);
  REQUIRE(wsnas_cli(dir, "embed --task t/a.bundle --probe p/probe.weights --head-epochs 3 --out e/a.emb").code == 0);
  REQUIRE(wsnas_cli(dir, "embed --task t/b.bundle --probe p/probe.weights --head-epochs 3 --out e/b.emb").code == 0);
  CHECK(wsnas_cli(dir, "embed --task t/b.bundle --probe p/probe.weights --estimator exact --out e/c.emb").code == 2);

  REQUIRE(wsnas_cli(dir, "similarity --embedding e/a.emb --embedding e/b.emb --embedding e/a.emb --out m/s.csv").code ==
          0);
  const SimilarityMatrix m = load_similarity(dir / "m/s.csv");
  CHECK(m.d(0, 2) == 0.0);
  CHECK(m.d(0, 1) > 0.0);
  CHECK(m.d == m.d.transpose());

  const std::string table = std::string(WSNAS_TEST_DATA) + "/metadataset_similarity.csv";
  const Run sel = wsnas_cli(dir, "select --matrix '" + table +
                                     "' --query aircraft --candidate dtd --candidate birds --candidate flower "
                                     "--candidate imagenet --out r/sel.json");
  REQUIRE(sel.code == 0);
  CHECK(sel.out == "flower\n");
  CHECK(Json::parse(read_text(dir / "r/sel.json")).at("distance") == 0.019);
  CHECK(wsnas_cli(dir, "select --matrix '" + table + "' --query birds").out == "flower\n");

  const Run by_emb = wsnas_cli(dir, "select --embedding e/a.emb --archive e/b.emb --archive e/a.emb");
  CHECK(by_emb.code == 0);
  CHECK(by_emb.out == "texture-1\n");
  CHECK(wsnas_cli(dir, "select --query aircraft").code == 2);
}
