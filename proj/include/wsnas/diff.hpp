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

// Reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tensor is a shared handle to a value buffer (row-major, Eigen vector
// storage) plus an optional gradient. Operations are free functions that
// take the Graph they record into; every recorded node's inputs precede it,
// so the append order is a valid topological order and backward() walks the
// node list in reverse.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsnas::diff {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorData {
  Shape shape;
  Vec value;
  bool requires_grad = false;
  std::optional<Vec> grad;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, Vec value, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  Index rank() const { return static_cast<Index>(d_->shape.size()); }
  Index dim(Index i) const { return d_->shape.at(static_cast<size_t>(i)); }
  Index numel() const { return d_->value.size(); }

  const Vec& value() const { return d_->value; }
  Vec& value() { return d_->value; }
  double item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  bool has_grad() const { return d_->grad.has_value(); }
  const Vec& grad() const;
  Vec& grad();
  /// Adds g into the gradient buffer, allocating it on first use.
  void accumulate_grad(const Vec& g);
  void zero_grad();
  void clear_grad() { d_->grad.reset(); }

  /// Deep copy of value (gradient and graph membership are not copied).
  Tensor detached_copy() const;

  const TensorData* id() const { return d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

enum class OpKind {
  Add,
  Sub,
  ScalarMul,
  Mul,
  MatMul,
  Conv2d,
  MaxPool3x3,
  AvgPool3x3,
  Relu,
  Softmax,
  Log,
  Exp,
  Mean,
  Sum,
  Concat,
  CrossEntropy,
  Identity,
  Zero,
  WeightedSum,
  ChannelAffine,
  GlobalAvgPool,
  SampleNorm,
};

std::string op_kind_name(OpKind kind);

/// Attributes for the generic forward_op dispatcher. Only the fields relevant
/// to a given kind are read.
struct OpAttrs {
  double scalar = 1.0;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
  std::vector<int> labels;
  Shape zero_shape;
};

class Graph {
 public:
  using BackwardFn = std::function<void(const Vec& grad_out, std::vector<Tensor>& inputs)>;

  /// Records out as produced from inputs. When no input requires a gradient
  /// the node is not stored and out is returned as a constant.
  Tensor record(OpKind kind, Tensor out, std::vector<Tensor> inputs, BackwardFn backward);

  /// Propagates d(loss)/d(.) to every requires_grad tensor reachable from
  /// loss. Leaf gradients accumulate across calls; intermediate gradients
  /// are reset at the start of each call.
  void backward(const Tensor& loss);

  size_t size() const { return nodes_.size(); }
  OpKind kind_at(size_t i) const { return nodes_.at(i).kind; }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise / algebraic ----------------------------------------------------

/// a + b. b may also broadcast when its shape equals the trailing dims of a.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor scalar_mul(Graph& g, const Tensor& a, double c);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
/// [m,k] x [k,n] -> [m,n]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor relu(Graph& g, const Tensor& x);
Tensor log(Graph& g, const Tensor& x);
Tensor exp(Graph& g, const Tensor& x);
Tensor identity(Graph& g, const Tensor& x);
/// Constant zeros of the given shape; carries no gradient.
Tensor zero(Graph& g, const Shape& shape);

// Reductions -------------------------------------------------------------------

Tensor mean(Graph& g, const Tensor& x);
Tensor sum(Graph& g, const Tensor& x);
/// Softmax over the last axis.
Tensor softmax(Graph& g, const Tensor& x);
/// Mean over the batch of -log softmax(logits)[label]; logits are [batch, classes].
Tensor cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels);
/// sum_k w[k] * xs[k]; w has shape [xs.size()], all xs share one shape.
Tensor weighted_sum(Graph& g, std::span<const Tensor> xs, const Tensor& w);

// Feature maps (NCHW) --------------------------------------------------------

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// Output extent of a zero-padded window op.
Index conv_out_extent(Index in, int kernel, int stride, int padding, int dilation);

/// x [n,cin,h,w], weight [cout, cin/groups, k, k].
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Conv2dOptions& opt);
/// 3x3 window, padding 1; padded positions never win the max.
Tensor max_pool3x3(Graph& g, const Tensor& x, int stride);
/// 3x3 window, padding 1; averages over in-bounds positions only.
Tensor avg_pool3x3(Graph& g, const Tensor& x, int stride);
/// Concatenation along axis 1.
Tensor concat(Graph& g, std::span<const Tensor> xs);
/// x * gamma[c] + beta[c] per channel; gamma and beta have shape [c].
Tensor channel_affine(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta);
/// [n,c,h,w] -> [n,c]
Tensor global_avg_pool(Graph& g, const Tensor& x);
/// Per sample: (x - mean) / sqrt(var + eps) over all of c,h,w.
Tensor sample_norm(Graph& g, const Tensor& x, double eps = 1e-5);

/// Generic dispatcher over OpKind. Checks arity and forwards to the free
/// functions above.
Tensor forward_op(Graph& g, OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

// Optimizers -----------------------------------------------------------------

struct SgdConfig {
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  void validate() const;
};

struct AdamConfig {
  double lr = 6e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-3;
  double eps = 1e-8;
  void validate() const;
};

struct SgdState {
  std::vector<Vec> velocity;
};

struct AdamState {
  std::vector<Vec> m;
  std::vector<Vec> v;
};

/// v <- momentum*v + grad + wd*param; param <- param - lr*v
void sgd_step(std::span<Tensor> params, const SgdConfig& cfg, SgdState& state);
/// Bias-corrected Adam; weight decay is added to the gradient before the
/// moment updates (L2, not decoupled). t is the 1-based step index.
void adam_step(std::span<Tensor> params, const AdamConfig& cfg, AdamState& state, long t);

void zero_grad(std::span<Tensor> params);
/// Rescales gradients so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace wsnas::diff
