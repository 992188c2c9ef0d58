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

#include "support/gradcheck.hpp"
#include "wsnas/network.hpp"

#include <cmath>
#include <random>

using namespace wsnas;
using diff::Vec;

namespace {

const std::vector<Op> kSkipZero{Op::SkipConnect, Op::Zero};

Tensor random_input(std::mt19937_64& rng, Shape s) {
  return Tensor::from(s, testing::random_vec(rng, diff::numel(s)));
}

// Candidate op weights for a single standalone edge.
WeightMap op_weights(Op op, int channels, int stride, std::mt19937_64& rng) {
  WeightMap m;
  for (auto& [name, shape] : op_param_shapes(op, channels, stride))
    m.emplace(name, Tensor::from(shape, testing::random_vec(rng, diff::numel(shape), -0.5, 0.5)));
  return m;
}

Tensor run_op(Graph& g, Op op, const Tensor& x, int stride, const WeightMap& m) {
  return apply_op(g, op, x, stride, [&](const std::string& s) -> const Tensor& { return m.at(s); });
}

// Independent count of conv weight entries for the stacked network.
long conv_weight_formula(const NetworkSpec& ns, const CellSpec& normal, const CellSpec& reduce) {
  const long c0 = ns.init_channels;
  long total = 3 * c0 * ns.in_channels * 9;
  long c_pp = 3 * c0, c_p = 3 * c0, c = c0;
  for (int i = 0; i < ns.num_cells; ++i) {
    const bool red = ns.is_reduction(i);
    if (red) c *= 2;
    total += c * c_pp + c * c_p;
    const CellSpec& cs = red ? reduce : normal;
    for (int e = 0; e < cs.num_edges(); ++e)
      for (Op op : cs.edge_ops(e)) {
        const long k = (op == Op::SepConv5x5 || op == Op::DilConv5x5) ? 25 : 9;
        if (op == Op::SepConv3x3 || op == Op::SepConv5x5) total += 2 * (c * k + c * c);
        if (op == Op::DilConv3x3 || op == Op::DilConv5x5) total += c * k + c * c;
        if (op == Op::SkipConnect && red && CellSpec::edge_pred(e) < 2) total += c * c;
      }
    c_pp = c_p;
    c_p = 4 * c;
  }
  return total;
}

long conv_weight_count(const Network& net) {
  long total = 0;
  for (const auto& [name, t] : net.weights())
    if (!is_head_weight(name) && t.rank() == 4) total += static_cast<long>(t.numel());
  return total;
}

}  // namespace

TEST_CASE("mixed edge over {skip, zero}") {
  std::mt19937_64 rng(1);
  Graph g;
  const Tensor x = random_input(rng, {2, 3, 4, 4});
  auto apply = [&](Op op) { return run_op(g, op, x, 1, {}); };
  ForwardContext ctx;

  const Tensor half = mixed_edge_forward(g, kSkipZero, Tensor::zeros({2}), apply, ctx);
  CHECK((half.value() - 0.5 * x.value()).cwiseAbs().maxCoeff() == 0.0);

  const Tensor a9 = Tensor::from({2}, (Vec(2) << std::log(9.0), 0.0).finished());
  const Tensor nine = mixed_edge_forward(g, kSkipZero, a9, apply, ctx);
  CHECK((nine.value() - 0.9 * x.value()).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(mixed_edge_forward(g, kSkipZero, Tensor::zeros({3}), apply, ctx), std::invalid_argument);
}

TEST_CASE("skip-connect dropout only acts in training mode") {
  std::mt19937_64 rng(2), drop_rng(3);
  Graph g;
  const Tensor x = random_input(rng, {1, 2, 3, 3});
  auto apply = [&](Op op) { return run_op(g, op, x, 1, {}); };
  ForwardContext plain;
  ForwardContext eval{false, 1.0 - 1e-9, &drop_rng, nullptr};
  const Tensor a = mixed_edge_forward(g, kSkipZero, Tensor::zeros({2}), apply, plain);
  const Tensor b = mixed_edge_forward(g, kSkipZero, Tensor::zeros({2}), apply, eval);
  CHECK((a.value().array() == b.value().array()).all());

  ForwardContext train{true, 0.25, &drop_rng, nullptr};
  int dropped = 0, kept = 0;
  for (int t = 0; t < 200; ++t) {
    const Tensor y = mixed_edge_forward(g, kSkipZero, Tensor::zeros({2}), apply, train);
    if (y.value().isZero(0.0)) {
      ++dropped;
    } else {
      ++kept;
      CHECK((y.value() - 0.5 / 0.75 * x.value()).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  CHECK(dropped + kept == 200);
  CHECK(dropped > 20);
  CHECK(dropped < 80);
  ForwardContext no_rng{true, 0.5, nullptr, nullptr};
  CHECK_THROWS(mixed_edge_forward(g, kSkipZero, Tensor::zeros({2}), apply, no_rng));
}

TEST_CASE("uniform alpha averages every candidate; large logit selects one") {
  std::mt19937_64 rng(4);
  for (int stride : {1, 2}) {
    Graph g;
    const Tensor x = random_input(rng, {2, 3, 6, 6});
    std::map<Op, WeightMap> ws;
    for (Op op : kAllOps) ws[op] = op_weights(op, 3, stride, rng);
    auto apply = [&](Op op) { return run_op(g, op, x, stride, ws[op]); };
    const std::vector<Op> ops(kAllOps.begin(), kAllOps.end());
    ForwardContext ctx;

    Vec mean = Vec::Zero(apply(Op::Zero).numel());
    std::vector<Vec> single;
    for (Op op : ops) {
      single.push_back(apply(op).value());
      mean += single.back();
    }
    mean /= 8.0;
    const Tensor mixed = mixed_edge_forward(g, ops, Tensor::zeros({8}), apply, ctx);
    CHECK((mixed.value() - mean).cwiseAbs().maxCoeff() < 1e-12);

    for (size_t k = 0; k < ops.size(); ++k) {
      Vec logits = Vec::Zero(8);
      logits[static_cast<Eigen::Index>(k)] = 40.0;
      const Tensor hot = mixed_edge_forward(g, ops, Tensor::from({8}, logits), apply, ctx);
      INFO(op_name(ops[k]));
      CHECK((hot.value() - single[k]).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("cell of zero edges outputs zeros") {
  const NetworkSpec ns{1, 2, 3, 2, false};
  const auto normal = CellSpec::uniform(CellKind::Normal, 4, {Op::Zero});
  const auto reduce = CellSpec::uniform(CellKind::Reduction, 4, {Op::Zero});
  Network net(ns, normal, reduce, 5);
  std::mt19937_64 rng(5);
  Graph g;
  const Tensor s = net.stem(g, random_input(rng, {2, 3, 5, 5}));
  const auto arch = ArchParams::from_alpha(zero_alpha(normal), zero_alpha(reduce));
  const Tensor out = net.cell_forward(g, 0, s, s, arch, {});
  CHECK(out.shape() == Shape{2, 8, 5, 5});
  CHECK(out.value().isZero(0.0));
}

TEST_CASE("single-node cell with skip edges sums its inputs") {
  const NetworkSpec ns{1, 2, 3, 2, false};
  const auto normal = CellSpec::uniform(CellKind::Normal, 1, {Op::SkipConnect});
  const auto reduce = CellSpec::uniform(CellKind::Reduction, 1, {Op::SkipConnect});
  Network net(ns, normal, reduce, 6);
  std::mt19937_64 rng(6);
  Graph g;
  const Tensor s = net.stem(g, random_input(rng, {2, 3, 4, 4}));
  Alpha a = zero_alpha(normal);
  a[0][0] = 1.7;
  a[1][0] = -3.0;
  const auto arch = ArchParams::from_alpha(a, zero_alpha(reduce));
  auto [p0, p1] = net.preprocess(g, 0, s, s);
  const auto nodes = net.cell_nodes(g, 0, p0, p1, arch, {});
  REQUIRE(nodes.size() == 1);
  CHECK((nodes[0].value() - (p0.value() + p1.value())).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("two-node cell matches a hand-unrolled evaluation") {
  std::mt19937_64 rng(7);
  for (bool reduction : {false, true}) {
    const std::vector<Op> ops{Op::SepConv3x3, Op::AvgPool3x3, Op::SkipConnect, Op::DilConv5x5, Op::Zero};
    const auto normal = CellSpec::uniform(CellKind::Normal, 2, ops);
    const auto reduce = CellSpec::uniform(CellKind::Reduction, 2, ops);
    // One cell; with place_reductions on, cell 0 of a 1-cell stack is a
    // reduction cell.
    const NetworkSpec ns{1, 2, 3, 2, reduction};
    Network net(ns, normal, reduce, 8);
    Alpha a = zero_alpha(reduction ? reduce : normal);
    for (auto& e : a) e = testing::random_vec(rng, e.size(), -2.0, 2.0);
    const auto arch = reduction ? ArchParams::from_alpha(zero_alpha(normal), a) : ArchParams::from_alpha(a, zero_alpha(reduce));

    Graph g;
    const Tensor s = net.stem(g, random_input(rng, {2, 3, 6, 6}));
    auto [p0, p1] = net.preprocess(g, 0, s, s);
    const auto nodes = net.cell_nodes(g, 0, p0, p1, arch, {});

    // node_j = Σ_i Σ_o softmax(α_ij)_o · o(x_i)
    std::vector<Tensor> states{p0, p1};
    for (int j = 0; j < 2; ++j) {
      Vec acc;
      for (int i = 0; i < j + 2; ++i) {
        const int e = CellSpec::edge_index(j, i);
        const Vec w = edge_softmax(a[static_cast<size_t>(e)]);
        const int stride = reduction && i < 2 ? 2 : 1;
        for (size_t k = 0; k < ops.size(); ++k) {
          const std::string prefix = edge_prefix(0, e, ops[k]);
          const Tensor y = apply_op(g, ops[k], states[static_cast<size_t>(i)], stride,
                                    [&](const std::string& n) -> const Tensor& { return net.weights().at(prefix + n); });
          if (acc.size() == 0) acc = Vec::Zero(y.numel());
          acc += w[static_cast<Eigen::Index>(k)] * y.value();
        }
      }
      CHECK((nodes[static_cast<size_t>(j)].value() - acc).cwiseAbs().maxCoeff() < 1e-12);
      states.push_back(Tensor::from(nodes[static_cast<size_t>(j)].shape(), acc));
    }
    CHECK(nodes[0].dim(2) == (reduction ? 3 : 6));
  }
}

TEST_CASE("one-cell network with zero edges outputs the classifier bias") {
  const NetworkSpec ns{1, 3, 3, 4, true};
  const auto normal = CellSpec::uniform(CellKind::Normal, 4, {Op::Zero});
  const auto reduce = CellSpec::uniform(CellKind::Reduction, 4, {Op::Zero});
  Network net(ns, normal, reduce, 9);
  std::mt19937_64 rng(9);
  net.weights().at("head.default.bias").value() = testing::random_vec(rng, 4);
  Graph g;
  const Tensor y = net.logits(g, random_input(rng, {3, 3, 8, 8}), ArchParams::from_alpha(zero_alpha(normal), zero_alpha(reduce)), {});
  REQUIRE(y.shape() == Shape{3, 4});
  const Vec bias = net.weights().at("head.default.bias").value();
  for (int r = 0; r < 3; ++r) CHECK((y.value().segment(r * 4, 4) - bias).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv parameter count follows the channel formula") {
  const auto normal = CellSpec::full(CellKind::Normal);
  const auto reduce = CellSpec::full(CellKind::Reduction);
  const NetworkSpec small{3, 4, 3, 5, true};
  NetworkSpec wide = small;
  wide.init_channels = 8;
  const Network a(small, normal, reduce, 1), b(wide, normal, reduce, 1);
  CHECK(conv_weight_count(a) == conv_weight_formula(small, normal, reduce));
  CHECK(conv_weight_count(b) == conv_weight_formula(wide, normal, reduce));
  // Depthwise and stem convs scale linearly in C, pointwise convs
  // quadratically, so doubling C multiplies the count by a factor in (2, 4].
  const double ratio = static_cast<double>(conv_weight_count(b)) / static_cast<double>(conv_weight_count(a));
  CHECK(ratio > 2.0);
  CHECK(ratio <= 4.0);
}

TEST_CASE("network forward is deterministic and counts op evaluations") {
  const auto normal = CellSpec::full(CellKind::Normal);
  const auto reduce = CellSpec::uniform(CellKind::Reduction, 4, {Op::MaxPool3x3, Op::SkipConnect, Op::Zero});
  const NetworkSpec ns{3, 2, 3, 3, true};
  auto run = [&] {
    Network net(ns, normal, reduce, 42);
    std::mt19937_64 rng(42);
    const Tensor x = random_input(rng, {2, 3, 8, 8});
    long evals = 0;
    ForwardContext ctx{true, 0.3, &rng, &evals};
    Graph g;
    const Tensor y = net.logits(g, x, ArchParams::from_alpha(zero_alpha(normal), zero_alpha(reduce)), ctx);
    CHECK(evals == net.op_evals_per_forward());
    CHECK(evals == 112 + 2 * 42);
    return y.value();
  };
  const Vec a = run(), b = run();
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("alpha and weight gradients through a small network match finite differences") {
  std::mt19937_64 rng(12);
  const std::vector<Op> ops{Op::SepConv3x3, Op::SkipConnect, Op::AvgPool3x3, Op::DilConv3x3, Op::Zero};
  const auto normal = CellSpec::uniform(CellKind::Normal, 2, ops);
  const auto reduce = CellSpec::uniform(CellKind::Reduction, 2, ops);
  const NetworkSpec ns{2, 2, 3, 3, true};
  auto net = std::make_shared<Network>(ns, normal, reduce, 3);
  auto arch = std::make_shared<ArchParams>(ArchParams::from_alpha(zero_alpha(normal), zero_alpha(reduce)));
  for (auto& t : arch->tensors()) t.value() = testing::random_vec(rng, t.numel());
  const Tensor x = random_input(rng, {2, 3, 5, 5});
  const std::vector<int> labels{0, 2};

  testing::GradCase c{diff::OpKind::CrossEntropy, "network", arch->tensors(), nullptr};
  c.inputs.push_back(net->weights().at("cells.1.edges.0.sep_conv_3x3.pw2"));
  c.inputs.push_back(net->weights().at("head.default.weight"));
  c.build = [net, arch, x, labels](Graph& g, const std::vector<Tensor>&) {
    return diff::cross_entropy(g, net->logits(g, x, *arch, {}), labels);
  };
  CHECK(testing::gradcheck(c, rng).max_rel_error < 1e-4);
}

TEST_CASE("trunk transfer copies every non-head weight") {
  const auto normal = CellSpec::uniform(CellKind::Normal, 4, {Op::SepConv3x3, Op::SkipConnect, Op::Zero});
  const auto reduce = CellSpec::uniform(CellKind::Reduction, 4, {Op::SepConv3x3, Op::SkipConnect, Op::Zero});
  const NetworkSpec ns{3, 2, 3, 3, true};
  Network src(ns, normal, reduce, 1), dst(ns, normal, reduce, 2);
  dst.load_trunk(src.weights());
  for (const auto& [name, t] : dst.weights()) {
    const bool equal = (t.value().array() == src.weights().at(name).value().array()).all();
    if (is_head_weight(name))
      CHECK((name == "head.default.bias" || !equal));  // biases start at zero
    else
      CHECK(equal);
  }
  Network wider(ns, CellSpec::full(CellKind::Normal), reduce, 1);
  CHECK_THROWS_AS(wider.load_trunk(src.weights()), std::invalid_argument);
}
