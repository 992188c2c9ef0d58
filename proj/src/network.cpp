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
#include "wsnas/network.hpp"

#include "wsnas/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsnas {

using diff::Conv2dOptions;
using diff::Index;
using diff::Vec;

std::vector<int> NetworkSpec::reduction_cells() const {
  std::vector<int> out;
  if (!place_reductions) return out;
  for (int pos : {num_cells / 3, 2 * num_cells / 3})
    if (out.empty() || out.back() != pos) out.push_back(pos);
  return out;
}

bool NetworkSpec::is_reduction(int cell) const {
  const auto r = reduction_cells();
  return std::find(r.begin(), r.end(), cell) != r.end();
}

void NetworkSpec::validate() const {
  if (num_cells < 1) throw std::invalid_argument("NetworkSpec: num_cells must be >= 1");
  if (init_channels < 1) throw std::invalid_argument("NetworkSpec: init_channels must be >= 1");
  if (in_channels < 1) throw std::invalid_argument("NetworkSpec: in_channels must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("NetworkSpec: num_classes must be >= 1");
}

// ArchParams -------------------------------------------------------------------

namespace {

std::vector<Tensor> to_tensors(const Alpha& a, bool requires_grad) {
  std::vector<Tensor> out;
  for (const auto& e : a) out.push_back(Tensor::from({e.size()}, e, requires_grad));
  return out;
}

Alpha to_alpha(const std::vector<Tensor>& ts) {
  Alpha a;
  for (const auto& t : ts) a.push_back(t.value());
  return a;
}

}  // namespace

ArchParams ArchParams::from_alpha(const Alpha& normal, const Alpha& reduce, bool requires_grad) {
  return {to_tensors(normal, requires_grad), to_tensors(reduce, requires_grad)};
}

Alpha ArchParams::normal_alpha() const { return to_alpha(normal); }
Alpha ArchParams::reduce_alpha() const { return to_alpha(reduce); }

std::vector<Tensor> ArchParams::tensors() const {
  std::vector<Tensor> out = normal;
  out.insert(out.end(), reduce.begin(), reduce.end());
  return out;
}

void ArchParams::set_requires_grad(bool on) {
  for (auto& t : normal) t.set_requires_grad(on);
  for (auto& t : reduce) t.set_requires_grad(on);
}

// Mixed edge -------------------------------------------------------------------

Tensor mixed_edge_forward(Graph& g, std::span<const Op> ops, const Tensor& alpha_edge,
                          const std::function<Tensor(Op)>& apply, const ForwardContext& ctx) {
  if (alpha_edge.rank() != 1 || alpha_edge.numel() != static_cast<Index>(ops.size()))
    throw std::invalid_argument("mixed_edge_forward: " + std::to_string(alpha_edge.numel()) + " logits for " +
                                std::to_string(ops.size()) + " ops");
  if (ctx.dropout < 0.0 || ctx.dropout >= 1.0)
    throw std::invalid_argument("mixed_edge_forward: dropout must lie in [0,1)");
  if (ctx.op_evals) *ctx.op_evals += static_cast<long>(ops.size());

  const Tensor w = diff::softmax(g, alpha_edge);
  std::vector<Tensor> outs;
  outs.reserve(ops.size());
  for (Op op : ops) {
    Tensor y = apply(op);
    if (op == Op::SkipConnect && ctx.training && ctx.dropout > 0.0) {
      if (!ctx.rng) throw std::invalid_argument("mixed_edge_forward: dropout needs an rng");
      if (std::bernoulli_distribution(ctx.dropout)(*ctx.rng))
        y = diff::zero(g, y.shape());
      else
        y = diff::scalar_mul(g, y, 1.0 / (1.0 - ctx.dropout));
    }
    outs.push_back(std::move(y));
  }
  return diff::weighted_sum(g, outs, w);
}

// Candidate ops ----------------------------------------------------------------

namespace {

int kernel_of(Op op) {
  switch (op) {
    case Op::SepConv5x5:
    case Op::DilConv5x5: return 5;
    default: return 3;
  }
}

}  // namespace

std::vector<std::pair<std::string, Shape>> op_param_shapes(Op op, int channels, int stride) {
  const Index c = channels;
  const Index k = kernel_of(op);
  switch (op) {
    case Op::SepConv3x3:
    case Op::SepConv5x5:
      return {{"dw1", {c, 1, k, k}}, {"pw1", {c, c, 1, 1}}, {"gamma1", {c}}, {"beta1", {c}},
              {"dw2", {c, 1, k, k}}, {"pw2", {c, c, 1, 1}}, {"gamma2", {c}}, {"beta2", {c}}};
    case Op::DilConv3x3:
    case Op::DilConv5x5:
      return {{"dw", {c, 1, k, k}}, {"pw", {c, c, 1, 1}}, {"gamma", {c}}, {"beta", {c}}};
    case Op::SkipConnect:
      if (stride == 1) return {};
      return {{"conv", {c, c, 1, 1}}, {"gamma", {c}}, {"beta", {c}}};
    default: return {};
  }
}

Tensor apply_op(Graph& g, Op op, const Tensor& x, int stride,
                const std::function<const Tensor&(const std::string&)>& w) {
  const int c = static_cast<int>(x.dim(1));
  const int k = kernel_of(op);
  switch (op) {
    case Op::MaxPool3x3: return diff::max_pool3x3(g, x, stride);
    case Op::AvgPool3x3: return diff::avg_pool3x3(g, x, stride);
    case Op::SepConv3x3:
    case Op::SepConv5x5: {
      Tensor h = diff::relu(g, x);
      h = diff::conv2d(g, h, w("dw1"), Conv2dOptions{stride, k / 2, 1, c});
      h = diff::conv2d(g, h, w("pw1"), Conv2dOptions{1, 0, 1, 1});
      h = diff::channel_affine(g, diff::sample_norm(g, h), w("gamma1"), w("beta1"));
      h = diff::relu(g, h);
      h = diff::conv2d(g, h, w("dw2"), Conv2dOptions{1, k / 2, 1, c});
      h = diff::conv2d(g, h, w("pw2"), Conv2dOptions{1, 0, 1, 1});
      return diff::channel_affine(g, diff::sample_norm(g, h), w("gamma2"), w("beta2"));
    }
    case Op::DilConv3x3:
    case Op::DilConv5x5: {
      Tensor h = diff::relu(g, x);
      h = diff::conv2d(g, h, w("dw"), Conv2dOptions{stride, k - 1, 2, c});
      h = diff::conv2d(g, h, w("pw"), Conv2dOptions{1, 0, 1, 1});
      return diff::channel_affine(g, diff::sample_norm(g, h), w("gamma"), w("beta"));
    }
    case Op::SkipConnect: {
      if (stride == 1) return x;
      Tensor h = diff::relu(g, x);
      h = diff::conv2d(g, h, w("conv"), Conv2dOptions{stride, 0, 1, 1});
      return diff::channel_affine(g, diff::sample_norm(g, h), w("gamma"), w("beta"));
    }
    case Op::Zero: {
      Shape s = x.shape();
      s[2] = (s[2] + stride - 1) / stride;
      s[3] = (s[3] + stride - 1) / stride;
      return diff::zero(g, s);
    }
  }
  throw std::logic_error("apply_op: unknown op");
}

// Names ------------------------------------------------------------------------

std::string cell_prefix(int cell) { return "cells." + std::to_string(cell) + "."; }

std::string edge_prefix(int cell, int edge, Op op) {
  return cell_prefix(cell) + "edges." + std::to_string(edge) + "." + std::string(op_name(op)) + ".";
}

bool is_head_weight(const std::string& name) { return name.rfind("head.", 0) == 0; }

// Network ----------------------------------------------------------------------

Network::Network(NetworkSpec spec, CellSpec normal, CellSpec reduce, std::uint64_t seed, const std::string& head_key)
    : spec_(spec), normal_(std::move(normal)), reduce_(std::move(reduce)) {
  spec_.validate();
  if (normal_.kind() != CellKind::Normal || reduce_.kind() != CellKind::Reduction)
    throw std::invalid_argument("Network: expected a normal and a reduction cell spec");
  if (normal_.steps() != reduce_.steps())
    throw std::invalid_argument("Network: normal and reduction cells differ in node count");

  const int c = spec_.init_channels;
  const int steps = normal_.steps();
  add_weight("stem.conv", {3 * c, spec_.in_channels, 3, 3}, spec_.in_channels * 9, seed);
  add_affine("stem.", 3 * c);

  int c_pp = 3 * c, c_p = 3 * c, c_curr = c;
  bool reduction_prev = false;
  for (int i = 0; i < spec_.num_cells; ++i) {
    CellInfo info;
    info.reduction = spec_.is_reduction(i);
    if (info.reduction) c_curr *= 2;
    info.channels = c_curr;
    info.reduction_prev = reduction_prev;
    info.c_prev_prev = c_pp;
    info.c_prev = c_p;
    const std::string p = cell_prefix(i);
    add_weight(p + "pre0.conv", {c_curr, c_pp, 1, 1}, c_pp, seed);
    add_affine(p + "pre0.", c_curr);
    add_weight(p + "pre1.conv", {c_curr, c_p, 1, 1}, c_p, seed);
    add_affine(p + "pre1.", c_curr);

    const CellSpec& cs = info.reduction ? reduce_ : normal_;
    for (int e = 0; e < cs.num_edges(); ++e) {
      const int stride = info.reduction && CellSpec::edge_pred(e) < 2 ? 2 : 1;
      for (Op op : cs.edge_ops(e))
        for (auto& [suffix, shape] : op_param_shapes(op, c_curr, stride)) {
          const std::string name = edge_prefix(i, e, op) + suffix;
          if (suffix.rfind("gamma", 0) == 0)
            weights_.emplace(name, Tensor::full(shape, 1.0, true));
          else if (suffix.rfind("beta", 0) == 0)
            weights_.emplace(name, Tensor::zeros(shape, true));
          else
            add_weight(name, shape, static_cast<int>(diff::numel(shape) / shape[0]), seed);
        }
    }
    cells_.push_back(info);
    reduction_prev = info.reduction;
    c_pp = c_p;
    c_p = steps * c_curr;
  }
  out_channels_ = c_p;
  reset_head(head_key, spec_.num_classes, seed);
}

void Network::add_weight(const std::string& name, Shape shape, int fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, name));
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  Vec v(diff::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  weights_.insert_or_assign(name, Tensor::from(std::move(shape), std::move(v), true));
}

void Network::add_affine(const std::string& prefix, int channels) {
  weights_.emplace(prefix + "gamma", Tensor::full({channels}, 1.0, true));
  weights_.emplace(prefix + "beta", Tensor::zeros({channels}, true));
}

const Tensor& Network::w(const std::string& name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw std::out_of_range("Network: no weight named '" + name + "'");
  return it->second;
}

std::vector<Tensor> Network::trunk_parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : weights_)
    if (!is_head_weight(name)) out.push_back(t);
  return out;
}

std::vector<Tensor> Network::head_parameters(const std::string& key) const {
  return {w("head." + key + ".weight"), w("head." + key + ".bias")};
}

bool Network::has_head(const std::string& key) const { return weights_.count("head." + key + ".weight") > 0; }

void Network::reset_head(const std::string& key, int classes, std::uint64_t seed) {
  if (classes < 1) throw std::invalid_argument("reset_head: classes must be >= 1");
  add_weight("head." + key + ".weight", {out_channels_, classes}, out_channels_, seed);
  weights_.insert_or_assign("head." + key + ".bias", Tensor::zeros({classes}, true));
}

int Network::head_classes(const std::string& key) const {
  return static_cast<int>(w("head." + key + ".bias").numel());
}

Tensor Network::stem(Graph& g, const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
    throw diff::ShapeError("Network: input must be [B," + std::to_string(spec_.in_channels) + ",H,W], got " +
                           diff::shape_str(x.shape()));
  Tensor h = diff::conv2d(g, x, w("stem.conv"), Conv2dOptions{1, 1, 1, 1});
  return diff::channel_affine(g, diff::sample_norm(g, h), w("stem.gamma"), w("stem.beta"));
}

std::pair<Tensor, Tensor> Network::preprocess(Graph& g, int cell, const Tensor& s0, const Tensor& s1) const {
  const CellInfo& info = cells_.at(static_cast<size_t>(cell));
  const std::string p = cell_prefix(cell);
  if (s0.dim(1) != info.c_prev_prev || s1.dim(1) != info.c_prev)
    throw diff::ShapeError("Network: cell " + std::to_string(cell) + " expects inputs with " +
                           std::to_string(info.c_prev_prev) + " and " + std::to_string(info.c_prev) +
                           " channels, got " + diff::shape_str(s0.shape()) + " and " + diff::shape_str(s1.shape()));
  Tensor p0 = diff::conv2d(g, diff::relu(g, s0), w(p + "pre0.conv"), Conv2dOptions{info.reduction_prev ? 2 : 1, 0, 1, 1});
  p0 = diff::channel_affine(g, diff::sample_norm(g, p0), w(p + "pre0.gamma"), w(p + "pre0.beta"));
  Tensor p1 = diff::conv2d(g, diff::relu(g, s1), w(p + "pre1.conv"), Conv2dOptions{1, 0, 1, 1});
  p1 = diff::channel_affine(g, diff::sample_norm(g, p1), w(p + "pre1.gamma"), w(p + "pre1.beta"));
  if (p0.shape() != p1.shape())
    throw diff::ShapeError("Network: cell " + std::to_string(cell) + " inputs disagree after preprocessing: " +
                           diff::shape_str(p0.shape()) + " vs " + diff::shape_str(p1.shape()));
  return {p0, p1};
}

std::vector<Tensor> Network::cell_nodes(Graph& g, int cell, const Tensor& p0, const Tensor& p1, const ArchParams& arch,
                                        const ForwardContext& ctx) const {
  const CellInfo& info = cells_.at(static_cast<size_t>(cell));
  const CellSpec& cs = info.reduction ? reduce_ : normal_;
  const auto& alpha = info.reduction ? arch.reduce : arch.normal;
  if (static_cast<int>(alpha.size()) != cs.num_edges())
    throw std::invalid_argument("Network: alpha has " + std::to_string(alpha.size()) + " edges, cell has " +
                                std::to_string(cs.num_edges()));
  Shape node_shape = p1.shape();
  if (info.reduction) {
    node_shape[2] = (node_shape[2] + 1) / 2;
    node_shape[3] = (node_shape[3] + 1) / 2;
  }

  std::vector<Tensor> states{p0, p1};
  for (int j = 0; j < cs.steps(); ++j) {
    Tensor node;
    for (int i = 0; i < j + 2; ++i) {
      const int e = CellSpec::edge_index(j, i);
      const auto& ops = cs.edge_ops(e);
      if (ops.size() == 1 && ops[0] == Op::Zero) {
        // A pure lack of connection contributes nothing.
        if (ctx.op_evals) *ctx.op_evals += 1;
        continue;
      }
      const int stride = info.reduction && i < 2 ? 2 : 1;
      const Tensor& x = states[static_cast<size_t>(i)];
      auto apply = [&](Op op) -> Tensor {
        const std::string prefix = edge_prefix(cell, e, op);
        return apply_op(g, op, x, stride, [&](const std::string& s) -> const Tensor& { return w(prefix + s); });
      };
      Tensor y = mixed_edge_forward(g, ops, alpha[static_cast<size_t>(e)], apply, ctx);
      node = node.defined() ? diff::add(g, node, y) : y;
    }
    if (!node.defined()) node = diff::zero(g, node_shape);
    states.push_back(node);
  }
  return {states.begin() + 2, states.end()};
}

Tensor Network::cell_forward(Graph& g, int cell, const Tensor& s0, const Tensor& s1, const ArchParams& arch,
                             const ForwardContext& ctx) const {
  auto [p0, p1] = preprocess(g, cell, s0, s1);
  const auto nodes = cell_nodes(g, cell, p0, p1, arch, ctx);
  return diff::concat(g, nodes);
}

Tensor Network::features(Graph& g, const Tensor& x, const ArchParams& arch, const ForwardContext& ctx) const {
  Tensor s0 = stem(g, x);
  Tensor s1 = s0;
  for (int i = 0; i < spec_.num_cells; ++i) {
    Tensor out = cell_forward(g, i, s0, s1, arch, ctx);
    s0 = s1;
    s1 = out;
  }
  return diff::global_avg_pool(g, s1);
}

Tensor Network::logits(Graph& g, const Tensor& x, const ArchParams& arch, const ForwardContext& ctx,
                       const std::string& head_key) const {
  const Tensor f = features(g, x, arch, ctx);
  const auto head = head_parameters(head_key);
  return diff::add(g, diff::matmul(g, f, head[0]), head[1]);
}

long Network::op_evals_per_forward() const {
  long total = 0;
  for (int i = 0; i < spec_.num_cells; ++i) total += cell_spec(i).total_ops();
  return total;
}

void Network::load_trunk(const WeightMap& from) {
  for (auto& [name, t] : weights_) {
    if (is_head_weight(name)) continue;
    auto it = from.find(name);
    if (it == from.end()) throw std::invalid_argument("load_trunk: source has no weight '" + name + "'");
    if (it->second.shape() != t.shape())
      throw diff::ShapeError("load_trunk: '" + name + "' is " + diff::shape_str(t.shape()) + " here but " +
                             diff::shape_str(it->second.shape()) + " in the source");
    t.value() = it->second.value();
  }
}

}  // namespace wsnas
