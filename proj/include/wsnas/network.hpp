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
#pragma once

// Search/evaluation network: a stem, a stack of normal and reduction cells
// whose edges are mixed operations, and per-task linear classifier heads.

#include "wsnas/cells.hpp"
#include "wsnas/diff.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace wsnas {

using diff::Graph;
using diff::Shape;
using diff::Tensor;

struct NetworkSpec {
  int num_cells = 2;
  int init_channels = 4;
  int in_channels = 3;
  int num_classes = 2;
  // Off only for small unit networks that need a stride-1 stack.
  bool place_reductions = true;

  /// floor(L/3) and floor(2L/3), deduplicated; empty when place_reductions
  /// is off.
  std::vector<int> reduction_cells() const;
  bool is_reduction(int cell) const;
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// Named parameters in sorted-name order.
using WeightMap = std::map<std::string, Tensor>;

/// Architecture logits as graph leaves, one tensor per edge.
struct ArchParams {
  std::vector<Tensor> normal;
  std::vector<Tensor> reduce;

  static ArchParams from_alpha(const Alpha& normal, const Alpha& reduce, bool requires_grad = true);
  Alpha normal_alpha() const;
  Alpha reduce_alpha() const;
  std::vector<Tensor> tensors() const;
  void set_requires_grad(bool on);
};

struct ForwardContext {
  bool training = false;
  /// Drop probability of skip-connect branches (training only).
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  /// Incremented by the admissible-op count of every mixed edge evaluated.
  long* op_evals = nullptr;
};

/// Softmax(alpha_edge)-weighted sum of apply(op) over ops. Skip-connect
/// branches are dropped with probability ctx.dropout in training mode and
/// rescaled by 1/(1-p) when kept.
Tensor mixed_edge_forward(Graph& g, std::span<const Op> ops, const Tensor& alpha_edge,
                          const std::function<Tensor(Op)>& apply, const ForwardContext& ctx);

/// Weights a single candidate op uses at `channels` and `stride`, keyed by
/// suffix (prefix excluded). Empty for parameter-free ops.
std::vector<std::pair<std::string, Shape>> op_param_shapes(Op op, int channels, int stride);

/// Applies a candidate op; `w(name)` returns the op's weight for a suffix
/// listed by op_param_shapes.
Tensor apply_op(Graph& g, Op op, const Tensor& x, int stride, const std::function<const Tensor&(const std::string&)>& w);

class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, CellSpec normal, CellSpec reduce, std::uint64_t seed,
          const std::string& head_key = "default");

  const NetworkSpec& spec() const { return spec_; }
  const CellSpec& normal_spec() const { return normal_; }
  const CellSpec& reduce_spec() const { return reduce_; }
  const CellSpec& cell_spec(int cell) const { return spec_.is_reduction(cell) ? reduce_ : normal_; }
  int cell_channels(int cell) const { return cells_.at(static_cast<size_t>(cell)).channels; }
  int steps() const { return normal_.steps(); }

  WeightMap& weights() { return weights_; }
  const WeightMap& weights() const { return weights_; }
  /// Everything except classifier heads.
  std::vector<Tensor> trunk_parameters() const;
  std::vector<Tensor> head_parameters(const std::string& key) const;
  bool has_head(const std::string& key) const;
  /// (Re)creates head `key` with `classes` outputs, seeded from the key.
  void reset_head(const std::string& key, int classes, std::uint64_t seed);
  int head_classes(const std::string& key) const;

  Tensor stem(Graph& g, const Tensor& x) const;
  /// Preprocessed cell inputs.
  std::pair<Tensor, Tensor> preprocess(Graph& g, int cell, const Tensor& s0, const Tensor& s1) const;
  /// Intermediate node values of a cell given its preprocessed inputs.
  std::vector<Tensor> cell_nodes(Graph& g, int cell, const Tensor& p0, const Tensor& p1, const ArchParams& arch,
                                 const ForwardContext& ctx) const;
  Tensor cell_forward(Graph& g, int cell, const Tensor& s0, const Tensor& s1, const ArchParams& arch,
                      const ForwardContext& ctx) const;
  Tensor features(Graph& g, const Tensor& x, const ArchParams& arch, const ForwardContext& ctx) const;
  Tensor logits(Graph& g, const Tensor& x, const ArchParams& arch, const ForwardContext& ctx,
                const std::string& head_key = "default") const;

  /// Mixed edges evaluated per forward pass: Σ over cells of Σ_edges |ops|.
  long op_evals_per_forward() const;

  /// Copies every trunk weight of `from` with a matching name and shape.
  /// Throws when a trunk weight of this network has no counterpart.
  void load_trunk(const WeightMap& from);

 private:
  struct CellInfo {
    int channels = 0;
    bool reduction = false;
    bool reduction_prev = false;
    int c_prev_prev = 0;
    int c_prev = 0;
  };

  const Tensor& w(const std::string& name) const;
  void add_weight(const std::string& name, Shape shape, int fan_in, std::uint64_t seed);
  void add_affine(const std::string& prefix, int channels);

  NetworkSpec spec_;
  CellSpec normal_;
  CellSpec reduce_;
  std::vector<CellInfo> cells_;
  int out_channels_ = 0;
  WeightMap weights_;
};

/// Parameter-name helpers.
std::string cell_prefix(int cell);
std::string edge_prefix(int cell, int edge, Op op);
bool is_head_weight(const std::string& name);

}  // namespace wsnas
