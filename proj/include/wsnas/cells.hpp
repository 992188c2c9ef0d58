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

// Cell search space: candidate operations, per-edge admissible sets,
// architecture logits, and discretization into genotypes.

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wsnas {

enum class Op : int {
  MaxPool3x3 = 0,
  AvgPool3x3 = 1,
  SepConv3x3 = 2,
  SepConv5x5 = 3,
  DilConv3x3 = 4,
  DilConv5x5 = 5,
  SkipConnect = 6,
  Zero = 7,
};

inline constexpr int kNumOps = 8;
inline constexpr std::array<Op, kNumOps> kAllOps{Op::MaxPool3x3, Op::AvgPool3x3, Op::SepConv3x3, Op::SepConv5x5,
                                                 Op::DilConv3x3, Op::DilConv5x5, Op::SkipConnect, Op::Zero};

std::string_view op_name(Op op);
/// Inverse of op_name; throws std::invalid_argument on unknown names.
Op op_from_name(std::string_view name);
inline int op_index(Op op) { return static_cast<int>(op); }

enum class CellKind { Normal, Reduction };
std::string_view cell_kind_name(CellKind kind);

/// Admissible candidate ops for every edge (pred -> intermediate node) of a
/// cell with two input nodes, `steps` intermediate nodes and one output node
/// (the channel concatenation of all intermediates).
///
/// Edges are numbered node-major: node j (0-based) has predecessors
/// 0..j+1, where 0 and 1 are the cell inputs and 2+m is intermediate m.
class CellSpec {
 public:
  CellSpec() = default;
  CellSpec(CellKind kind, int steps, std::vector<std::vector<Op>> edges);

  /// Every edge admits the same list.
  static CellSpec uniform(CellKind kind, int steps, std::vector<Op> ops);
  /// Every edge admits all eight candidate ops.
  static CellSpec full(CellKind kind, int steps = 4);

  static int edge_count(int steps) { return steps * (steps + 3) / 2; }
  static int edge_index(int node, int pred) { return node * (node + 3) / 2 + pred; }
  static int edge_node(int edge);
  static int edge_pred(int edge);

  CellKind kind() const { return kind_; }
  int steps() const { return steps_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<Op>& edge_ops(int e) const { return edges_.at(static_cast<size_t>(e)); }
  const std::vector<std::vector<Op>>& edges() const { return edges_; }
  bool admits(int e, Op op) const;
  /// Common edge width, or nullopt when edges differ.
  std::optional<int> width() const;
  /// Sum over edges of the admissible-op count.
  int total_ops() const;

  bool operator==(const CellSpec&) const = default;

 private:
  CellKind kind_ = CellKind::Normal;
  int steps_ = 0;
  std::vector<std::vector<Op>> edges_;
};

/// Per-edge mixing logits; entry k of edge e belongs to spec.edge_ops(e)[k].
using Alpha = std::vector<Eigen::VectorXd>;

Alpha zero_alpha(const CellSpec& spec);
void check_alpha(const CellSpec& spec, const Alpha& alpha);
/// Softmax that tolerates -inf logits (they receive exactly zero weight).
Eigen::VectorXd edge_softmax(const Eigen::VectorXd& logits);

struct GeneEdge {
  int pred = 0;
  Op op = Op::Zero;
  bool operator==(const GeneEdge&) const = default;
};

/// Two retained in-edges per intermediate node, node-major, predecessor
/// ascending within a node.
using CellGenes = std::vector<GeneEdge>;

struct Genotype {
  int steps = 4;
  CellGenes normal;
  CellGenes reduce;
  std::vector<int> concat;  // 2..steps+1

  bool operator==(const Genotype&) const = default;
};

/// Per edge: the most likely non-zero op; per node: the two edges whose
/// selected op carries the most softmax mass. Ties break towards the lower
/// (op index, predecessor index).
CellGenes discretize(const CellSpec& spec, const Alpha& alpha);
Genotype derive_genotype(const CellSpec& normal, const Alpha& normal_alpha, const CellSpec& reduce,
                         const Alpha& reduce_alpha);

int count_ops(const CellGenes& genes, Op op);

/// Caps skip-connects at M: repeatedly discretize, keep the M retained
/// skip-connects with the largest skip weight and send the others' skip
/// logit to -inf, until at most M remain.
CellGenes refine_skip_connects(const CellSpec& spec, const Alpha& alpha, int max_skips);
/// Refines the normal cell; the reduction cell is plainly discretized.
Genotype refine_genotype(const CellSpec& normal, const Alpha& normal_alpha, const CellSpec& reduce,
                         const Alpha& reduce_alpha, int max_skips);

/// True when every retained (node, pred, op) is admissible in the space.
bool is_subgraph(const CellGenes& genes, const CellSpec& space);
bool is_subgraph(const Genotype& genotype, const CellSpec& normal, const CellSpec& reduce);

/// CellSpec whose retained edges admit exactly their selected op and whose
/// other edges admit only Zero.
CellSpec genes_to_spec(const CellGenes& genes, CellKind kind, int steps);

// Graphviz ----------------------------------------------------------------------

std::string export_dot(const CellGenes& genes, int steps, std::string_view graph_name);
/// One labelled edge per admissible op.
std::string export_dot(const CellSpec& space, std::string_view graph_name);

struct DotOpEdge {
  int pred = 0;
  int node = 0;
  Op op = Op::Zero;
  bool operator==(const DotOpEdge&) const = default;
  auto operator<=>(const DotOpEdge&) const = default;
};

/// Recovers the labelled op edges from text written by export_dot.
std::vector<DotOpEdge> parse_dot_op_edges(std::string_view dot);
/// Syntax check against the DOT language grammar (graph, statements,
/// attribute lists, subgraphs, quoted/numeral/identifier IDs). Returns an
/// error message, or nullopt when the text parses.
std::optional<std::string> dot_syntax_error(std::string_view dot);

}  // namespace wsnas
