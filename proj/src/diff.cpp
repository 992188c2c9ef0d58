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
#include "wsnas/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace wsnas::diff {

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(op_kind_name(kind) + ": " + what);
}

void require_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_fail(kind, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(OpKind kind, const Tensor& x, Index rank) {
  if (x.rank() != rank)
    shape_fail(kind, "expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

bool is_suffix_of(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

// Tensor ----------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  const Index n = diff::numel(shape);
  d->shape = std::move(shape);
  d->value = Vec::Constant(n, v);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, Vec value, bool requires_grad) {
  if (diff::numel(shape) != value.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(value.size()) + " values");
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->value = std::move(value);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({}, v, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return d_->value[0];
}

const Vec& Tensor::grad() const {
  if (!d_->grad) throw std::logic_error("tensor has no gradient");
  return *d_->grad;
}

Vec& Tensor::grad() {
  if (!d_->grad) throw std::logic_error("tensor has no gradient");
  return *d_->grad;
}

void Tensor::accumulate_grad(const Vec& g) {
  if (!d_->grad)
    d_->grad = g;
  else
    *d_->grad += g;
}

void Tensor::zero_grad() {
  if (!d_->grad)
    d_->grad = Vec::Zero(numel());
  else
    d_->grad->setZero();
}

Tensor Tensor::detached_copy() const { return from(shape(), value(), requires_grad()); }

std::string op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool3x3: return "max_pool_3x3";
    case OpKind::AvgPool3x3: return "avg_pool_3x3";
    case OpKind::Relu: return "relu";
    case OpKind::Softmax: return "softmax";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::Concat: return "concat";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Identity: return "identity";
    case OpKind::Zero: return "zero";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::ChannelAffine: return "channel_affine";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::SampleNorm: return "sample_norm";
  }
  return "unknown";
}

// Graph -----------------------------------------------------------------------

Tensor Graph::record(OpKind kind, Tensor out, std::vector<Tensor> inputs, BackwardFn backward) {
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  nodes_.push_back(Node{kind, std::move(inputs), out, std::move(backward)});
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1 || loss.rank() > 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  for (auto& node : nodes_) node.output.clear_grad();
  if (!loss.requires_grad()) return;
  Tensor root = loss;
  root.accumulate_grad(Vec::Ones(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad(), it->inputs);
  }
}

// Elementwise -------------------------------------------------------------------

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out = Tensor::from(a.shape(), a.value() + b.value());
    return g.record(OpKind::Add, out, {a, b}, [](const Vec& go, std::vector<Tensor>& in) {
      if (in[0].requires_grad()) in[0].accumulate_grad(go);
      if (in[1].requires_grad()) in[1].accumulate_grad(go);
    });
  }
  if (!is_suffix_of(b.shape(), a.shape()) || b.numel() == 0)
    shape_fail(OpKind::Add, "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  const Index inner = b.numel();
  const Index outer = a.numel() / inner;
  Vec v = a.value();
  for (Index o = 0; o < outer; ++o) v.segment(o * inner, inner) += b.value();
  Tensor out = Tensor::from(a.shape(), std::move(v));
  return g.record(OpKind::Add, out, {a, b}, [inner, outer](const Vec& go, std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(go);
    if (in[1].requires_grad()) {
      Vec gb = Vec::Zero(inner);
      for (Index o = 0; o < outer; ++o) gb += go.segment(o * inner, inner);
      in[1].accumulate_grad(gb);
    }
  });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(OpKind::Sub, a, b);
  Tensor out = Tensor::from(a.shape(), a.value() - b.value());
  return g.record(OpKind::Sub, out, {a, b}, [](const Vec& go, std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(go);
    if (in[1].requires_grad()) in[1].accumulate_grad(-go);
  });
}

Tensor scalar_mul(Graph& g, const Tensor& a, double c) {
  Tensor out = Tensor::from(a.shape(), a.value() * c);
  return g.record(OpKind::ScalarMul, out, {a}, [c](const Vec& go, std::vector<Tensor>& in) {
    in[0].accumulate_grad(go * c);
  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(OpKind::Mul, a, b);
  Tensor out = Tensor::from(a.shape(), a.value().cwiseProduct(b.value()));
  return g.record(OpKind::Mul, out, {a, b}, [](const Vec& go, std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(go.cwiseProduct(in[1].value()));
    if (in[1].requires_grad()) in[1].accumulate_grad(go.cwiseProduct(in[0].value()));
  });
}

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank(OpKind::MatMul, a, 2);
  require_rank(OpKind::MatMul, b, 2);
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    shape_fail(OpKind::MatMul, "inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Vec v(m * n);
  RowMap(v.data(), m, n).noalias() = ConstRowMap(a.value().data(), m, k) * ConstRowMap(b.value().data(), k, n);
  Tensor out = Tensor::from({m, n}, std::move(v));
  return g.record(OpKind::MatMul, out, {a, b}, [m, k, n](const Vec& go, std::vector<Tensor>& in) {
    ConstRowMap gout(go.data(), m, n);
    if (in[0].requires_grad()) {
      Vec ga(m * k);
      RowMap(ga.data(), m, k).noalias() = gout * ConstRowMap(in[1].value().data(), k, n).transpose();
      in[0].accumulate_grad(ga);
    }
    if (in[1].requires_grad()) {
      Vec gb(k * n);
      RowMap(gb.data(), k, n).noalias() = ConstRowMap(in[0].value().data(), m, k).transpose() * gout;
      in[1].accumulate_grad(gb);
    }
  });
}

Tensor relu(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from(x.shape(), x.value().cwiseMax(0.0));
  return g.record(OpKind::Relu, out, {x}, [](const Vec& go, std::vector<Tensor>& in) {
    const Vec& xv = in[0].value();
    in[0].accumulate_grad((xv.array() > 0.0).select(go, 0.0));
  });
}

Tensor log(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from(x.shape(), x.value().array().log().matrix());
  return g.record(OpKind::Log, out, {x}, [](const Vec& go, std::vector<Tensor>& in) {
    in[0].accumulate_grad(go.cwiseQuotient(in[0].value()));
  });
}

Tensor exp(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from(x.shape(), x.value().array().exp().matrix());
  Tensor saved = out;
  return g.record(OpKind::Exp, out, {x}, [saved](const Vec& go, std::vector<Tensor>& in) {
    in[0].accumulate_grad(go.cwiseProduct(saved.value()));
  });
}

Tensor identity(Graph& g, const Tensor& x) {
  Tensor out = Tensor::from(x.shape(), x.value());
  return g.record(OpKind::Identity, out, {x}, [](const Vec& go, std::vector<Tensor>& in) {
    in[0].accumulate_grad(go);
  });
}

Tensor zero(Graph&, const Shape& shape) { return Tensor::zeros(shape); }

// Reductions --------------------------------------------------------------------

Tensor mean(Graph& g, const Tensor& x) {
  const Index n = x.numel();
  if (n == 0) shape_fail(OpKind::Mean, "empty input");
  Tensor out = Tensor::scalar(x.value().mean());
  return g.record(OpKind::Mean, out, {x}, [n](const Vec& go, std::vector<Tensor>& in) {
    in[0].accumulate_grad(Vec::Constant(n, go[0] / static_cast<double>(n)));
  });
}

Tensor sum(Graph& g, const Tensor& x) {
  const Index n = x.numel();
  Tensor out = Tensor::scalar(x.value().sum());
  return g.record(OpKind::Sum, out, {x}, [n](const Vec& go, std::vector<Tensor>& in) {
    in[0].accumulate_grad(Vec::Constant(n, go[0]));
  });
}

Tensor softmax(Graph& g, const Tensor& x) {
  if (x.rank() < 1) shape_fail(OpKind::Softmax, "rank-0 input");
  const Index k = x.shape().back();
  if (k == 0) shape_fail(OpKind::Softmax, "empty last axis");
  const Index rows = x.numel() / k;
  Vec v(x.numel());
  for (Index r = 0; r < rows; ++r) {
    auto in = x.value().segment(r * k, k);
    const double mx = in.maxCoeff();
    auto o = v.segment(r * k, k);
    if (!std::isfinite(mx)) {
      // All entries -inf: no mass anywhere; leave the row uniform.
      o.setConstant(1.0 / static_cast<double>(k));
      continue;
    }
    o = (in.array() - mx).exp().matrix();
    for (Index i = 0; i < k; ++i)
      if (in[i] == -std::numeric_limits<double>::infinity()) o[i] = 0.0;
    o /= o.sum();
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  Tensor saved = out;
  return g.record(OpKind::Softmax, out, {x}, [saved, k, rows](const Vec& go, std::vector<Tensor>& in) {
    Vec gx(saved.numel());
    for (Index r = 0; r < rows; ++r) {
      auto s = saved.value().segment(r * k, k);
      auto gr = go.segment(r * k, k);
      const double dot = s.dot(gr);
      gx.segment(r * k, k) = s.cwiseProduct((gr.array() - dot).matrix());
    }
    in[0].accumulate_grad(gx);
  });
}

Tensor cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels) {
  require_rank(OpKind::CrossEntropy, logits, 2);
  const Index b = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != b)
    shape_fail(OpKind::CrossEntropy, "batch " + std::to_string(b) + " but " + std::to_string(labels.size()) + " labels");
  if (b == 0) shape_fail(OpKind::CrossEntropy, "empty batch");
  std::vector<int> y(labels.begin(), labels.end());
  Vec probs(b * k);
  double loss = 0.0;
  for (Index r = 0; r < b; ++r) {
    if (y[r] < 0 || y[r] >= k)
      shape_fail(OpKind::CrossEntropy, "label " + std::to_string(y[r]) + " outside [0," + std::to_string(k) + ")");
    auto row = logits.value().segment(r * k, k);
    const double mx = row.maxCoeff();
    auto p = probs.segment(r * k, k);
    p = (row.array() - mx).exp().matrix();
    const double z = p.sum();
    p /= z;
    loss += -(row[y[r]] - mx - std::log(z));
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(b));
  return g.record(OpKind::CrossEntropy, out, {logits},
                  [probs = std::move(probs), y = std::move(y), b, k](const Vec& go, std::vector<Tensor>& in) {
                    Vec gl = probs;
                    for (Index r = 0; r < b; ++r) gl[r * k + y[r]] -= 1.0;
                    in[0].accumulate_grad(gl * (go[0] / static_cast<double>(b)));
                  });
}

Tensor weighted_sum(Graph& g, std::span<const Tensor> xs, const Tensor& w) {
  if (xs.empty()) shape_fail(OpKind::WeightedSum, "no inputs");
  if (w.numel() != static_cast<Index>(xs.size()))
    shape_fail(OpKind::WeightedSum, std::to_string(xs.size()) + " inputs but weights " + shape_str(w.shape()));
  Vec v = Vec::Zero(xs[0].numel());
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != xs[0].shape())
      shape_fail(OpKind::WeightedSum, "input " + std::to_string(i) + " shape " + shape_str(xs[i].shape()) +
                                          " vs " + shape_str(xs[0].shape()));
    v += w.value()[static_cast<Index>(i)] * xs[i].value();
  }
  Tensor out = Tensor::from(xs[0].shape(), std::move(v));
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  inputs.push_back(w);
  return g.record(OpKind::WeightedSum, out, std::move(inputs), [](const Vec& go, std::vector<Tensor>& in) {
    const size_t n = in.size() - 1;
    Tensor& wt = in[n];
    Vec gw = Vec::Zero(static_cast<Index>(n));
    for (size_t i = 0; i < n; ++i) {
      if (in[i].requires_grad()) in[i].accumulate_grad(go * wt.value()[static_cast<Index>(i)]);
      if (wt.requires_grad()) gw[static_cast<Index>(i)] = go.dot(in[i].value());
    }
    if (wt.requires_grad()) wt.accumulate_grad(gw);
  });
}

// Feature maps --------------------------------------------------------------------

Index conv_out_extent(Index in, int kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

namespace {

// Range of output columns ow whose input column ow*s - p + off lies in [0, w).
inline void valid_range(Index w, Index ow_count, int s, int p, Index off, Index& lo, Index& hi) {
  const Index a = p - off;  // need ow*s >= a
  lo = a <= 0 ? 0 : (a + s - 1) / s;
  const Index b = w - 1 + p - off;  // need ow*s <= b
  hi = b < 0 ? -1 : std::min(ow_count - 1, b / s);
}

struct ConvGeom {
  Index n, cin, h, w, cout, cg, k, oh, ow, cout_g;
  int s, p, d;
};

// Direct loops; the stride-1 instantiation lets the compiler vectorize the
// innermost row update.
template <bool Unit>
void conv_forward(const ConvGeom& c, const double* xin, const double* wt, double* o) {
  const Index s = Unit ? 1 : c.s;
  for (Index n = 0; n < c.n; ++n)
    for (Index oc = 0; oc < c.cout; ++oc) {
      const Index grp = oc / c.cout_g;
      double* obase = o + (n * c.cout + oc) * c.oh * c.ow;
      for (Index icg = 0; icg < c.cg; ++icg) {
        const Index ic = grp * c.cg + icg;
        const double* ibase = xin + (n * c.cin + ic) * c.h * c.w;
        for (Index kh = 0; kh < c.k; ++kh)
          for (Index kw = 0; kw < c.k; ++kw) {
            const double wv = wt[((oc * c.cg + icg) * c.k + kh) * c.k + kw];
            Index lo, hi;
            valid_range(c.w, c.ow, static_cast<int>(s), c.p, kw * c.d, lo, hi);
            if (lo > hi) continue;
            for (Index oh = 0; oh < c.oh; ++oh) {
              const Index ih = oh * s - c.p + kh * c.d;
              if (ih < 0 || ih >= c.h) continue;
              const double* irow = ibase + ih * c.w - c.p + kw * c.d;
              double* orow = obase + oh * c.ow;
              for (Index ow = lo; ow <= hi; ++ow) orow[ow] += wv * irow[ow * s];
            }
          }
      }
    }
}

template <bool Unit>
void conv_backward(const ConvGeom& c, const double* xin, const double* wt, const double* go, double* dx, double* dw) {
  const Index s = Unit ? 1 : c.s;
  for (Index n = 0; n < c.n; ++n)
    for (Index oc = 0; oc < c.cout; ++oc) {
      const Index grp = oc / c.cout_g;
      const double* gbase = go + (n * c.cout + oc) * c.oh * c.ow;
      for (Index icg = 0; icg < c.cg; ++icg) {
        const Index ic = grp * c.cg + icg;
        const Index ioff = (n * c.cin + ic) * c.h * c.w;
        for (Index kh = 0; kh < c.k; ++kh)
          for (Index kw = 0; kw < c.k; ++kw) {
            const Index widx = ((oc * c.cg + icg) * c.k + kh) * c.k + kw;
            const double wv = wt[widx];
            Index lo, hi;
            valid_range(c.w, c.ow, static_cast<int>(s), c.p, kw * c.d, lo, hi);
            if (lo > hi) continue;
            double acc = 0.0;
            for (Index oh = 0; oh < c.oh; ++oh) {
              const Index ih = oh * s - c.p + kh * c.d;
              if (ih < 0 || ih >= c.h) continue;
              const Index rowoff = ioff + ih * c.w - c.p + kw * c.d;
              const double* grow = gbase + oh * c.ow;
              if (dw) {
                const double* irow = xin + rowoff;
                for (Index ow = lo; ow <= hi; ++ow) acc += irow[ow * s] * grow[ow];
              }
              if (dx) {
                double* drow = dx + rowoff;
                for (Index ow = lo; ow <= hi; ++ow) drow[ow * s] += wv * grow[ow];
              }
            }
            if (dw) dw[widx] += acc;
          }
      }
    }
}

// 1x1, stride 1, ungrouped: per sample out = W * X with X viewed as
// [cin, h*w].
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void pointwise_forward(const ConvGeom& c, const double* xin, const double* wt, double* o) {
  const Index hw = c.h * c.w;
  Eigen::Map<const RowMat> W(wt, c.cout, c.cin);
  for (Index n = 0; n < c.n; ++n) {
    Eigen::Map<const RowMat> X(xin + n * c.cin * hw, c.cin, hw);
    Eigen::Map<RowMat> O(o + n * c.cout * hw, c.cout, hw);
    O.noalias() = W * X;
  }
}

void pointwise_backward(const ConvGeom& c, const double* xin, const double* wt, const double* go, double* dx,
                        double* dw) {
  const Index hw = c.h * c.w;
  Eigen::Map<const RowMat> W(wt, c.cout, c.cin);
  for (Index n = 0; n < c.n; ++n) {
    Eigen::Map<const RowMat> X(xin + n * c.cin * hw, c.cin, hw);
    Eigen::Map<const RowMat> G(go + n * c.cout * hw, c.cout, hw);
    if (dx) Eigen::Map<RowMat>(dx + n * c.cin * hw, c.cin, hw).noalias() += W.transpose() * G;
    if (dw) Eigen::Map<RowMat>(dw, c.cout, c.cin).noalias() += G * X.transpose();
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Conv2dOptions& opt) {
  require_rank(OpKind::Conv2d, x, 4);
  require_rank(OpKind::Conv2d, weight, 4);
  ConvGeom c{};
  c.n = x.dim(0);
  c.cin = x.dim(1);
  c.h = x.dim(2);
  c.w = x.dim(3);
  c.cout = weight.dim(0);
  c.cg = weight.dim(1);
  c.k = weight.dim(2);
  c.s = opt.stride;
  c.p = opt.padding;
  c.d = opt.dilation;
  if (weight.dim(3) != c.k) shape_fail(OpKind::Conv2d, "non-square kernel " + shape_str(weight.shape()));
  if (opt.groups < 1 || c.cin % opt.groups != 0 || c.cout % opt.groups != 0 || c.cg != c.cin / opt.groups)
    shape_fail(OpKind::Conv2d, "input " + shape_str(x.shape()) + " incompatible with weight " +
                                   shape_str(weight.shape()) + " at groups=" + std::to_string(opt.groups));
  if (c.s < 1 || c.d < 1 || c.p < 0) shape_fail(OpKind::Conv2d, "invalid stride/dilation/padding");
  c.cout_g = c.cout / opt.groups;
  c.oh = conv_out_extent(c.h, static_cast<int>(c.k), c.s, c.p, c.d);
  c.ow = conv_out_extent(c.w, static_cast<int>(c.k), c.s, c.p, c.d);
  if (c.oh <= 0 || c.ow <= 0) shape_fail(OpKind::Conv2d, "empty output for input " + shape_str(x.shape()));

  Vec out = Vec::Zero(c.n * c.cout * c.oh * c.ow);
  if (c.k == 1 && c.s == 1 && c.p == 0 && c.cout_g == c.cout) {
    pointwise_forward(c, x.value().data(), weight.value().data(), out.data());
  } else if (c.s == 1) {
    conv_forward<true>(c, x.value().data(), weight.value().data(), out.data());
  } else {
    conv_forward<false>(c, x.value().data(), weight.value().data(), out.data());
  }
  Tensor result = Tensor::from({c.n, c.cout, c.oh, c.ow}, std::move(out));
  return g.record(OpKind::Conv2d, result, {x, weight}, [c](const Vec& go, std::vector<Tensor>& in) {
    const bool gx = in[0].requires_grad(), gwt = in[1].requires_grad();
    Vec dx = gx ? Vec::Zero(in[0].numel()) : Vec();
    Vec dw = gwt ? Vec::Zero(in[1].numel()) : Vec();
    double* dxp = gx ? dx.data() : nullptr;
    double* dwp = gwt ? dw.data() : nullptr;
    if (c.k == 1 && c.s == 1 && c.p == 0 && c.cout_g == c.cout)
      pointwise_backward(c, in[0].value().data(), in[1].value().data(), go.data(), dxp, dwp);
    else if (c.s == 1)
      conv_backward<true>(c, in[0].value().data(), in[1].value().data(), go.data(), dxp, dwp);
    else
      conv_backward<false>(c, in[0].value().data(), in[1].value().data(), go.data(), dxp, dwp);
    if (gx) in[0].accumulate_grad(dx);
    if (gwt) in[1].accumulate_grad(dw);
  });
}

namespace {

template <bool IsMax>
Tensor pool3x3(Graph& g, const Tensor& x, int stride) {
  constexpr OpKind kind = IsMax ? OpKind::MaxPool3x3 : OpKind::AvgPool3x3;
  require_rank(kind, x, 4);
  if (stride != 1 && stride != 2) shape_fail(kind, "stride must be 1 or 2");
  const Index n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = conv_out_extent(h, 3, stride, 1, 1), ow = conv_out_extent(w, 3, stride, 1, 1);
  const Index planes = n * ch;
  Vec out(planes * oh * ow);
  // Max: flat input index of the winner. Avg: number of in-bounds taps.
  std::vector<Index> aux(static_cast<size_t>(out.size()));
  const double* xin = x.value().data();
  for (Index pl = 0; pl < planes; ++pl)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        const Index oidx = (pl * oh + i) * ow + j;
        double best = -std::numeric_limits<double>::infinity();
        Index arg = -1;
        double acc = 0.0;
        Index cnt = 0;
        for (Index di = 0; di < 3; ++di) {
          const Index ih = i * stride - 1 + di;
          if (ih < 0 || ih >= h) continue;
          for (Index dj = 0; dj < 3; ++dj) {
            const Index iw = j * stride - 1 + dj;
            if (iw < 0 || iw >= w) continue;
            const Index idx = (pl * h + ih) * w + iw;
            if constexpr (IsMax) {
              if (xin[idx] > best) {
                best = xin[idx];
                arg = idx;
              }
            } else {
              acc += xin[idx];
              ++cnt;
            }
          }
        }
        if constexpr (IsMax) {
          out[oidx] = best;
          aux[static_cast<size_t>(oidx)] = arg;
        } else {
          out[oidx] = acc / static_cast<double>(cnt);
          aux[static_cast<size_t>(oidx)] = cnt;
        }
      }
  Tensor result = Tensor::from({n, ch, oh, ow}, std::move(out));
  return g.record(kind, result, {x},
                  [aux = std::move(aux), planes, h, w, oh, ow, stride](const Vec& go, std::vector<Tensor>& in) {
                    Vec dx = Vec::Zero(in[0].numel());
                    for (Index pl = 0; pl < planes; ++pl)
                      for (Index i = 0; i < oh; ++i)
                        for (Index j = 0; j < ow; ++j) {
                          const Index oidx = (pl * oh + i) * ow + j;
                          if constexpr (IsMax) {
                            dx[aux[static_cast<size_t>(oidx)]] += go[oidx];
                          } else {
                            const double share = go[oidx] / static_cast<double>(aux[static_cast<size_t>(oidx)]);
                            for (Index di = 0; di < 3; ++di) {
                              const Index ih = i * stride - 1 + di;
                              if (ih < 0 || ih >= h) continue;
                              for (Index dj = 0; dj < 3; ++dj) {
                                const Index iw = j * stride - 1 + dj;
                                if (iw < 0 || iw >= w) continue;
                                dx[(pl * h + ih) * w + iw] += share;
                              }
                            }
                          }
                        }
                    in[0].accumulate_grad(dx);
                  });
}

}  // namespace

Tensor max_pool3x3(Graph& g, const Tensor& x, int stride) { return pool3x3<true>(g, x, stride); }
Tensor avg_pool3x3(Graph& g, const Tensor& x, int stride) { return pool3x3<false>(g, x, stride); }

Tensor concat(Graph& g, std::span<const Tensor> xs) {
  if (xs.empty()) shape_fail(OpKind::Concat, "no inputs");
  if (xs[0].rank() < 2) shape_fail(OpKind::Concat, "rank < 2 input " + shape_str(xs[0].shape()));
  const Index n = xs[0].dim(0);
  Shape out_shape = xs[0].shape();
  out_shape[1] = 0;
  std::vector<Index> inner;  // per-sample block size of each input
  for (const auto& t : xs) {
    Shape a = t.shape(), b = xs[0].shape();
    if (a.size() != b.size() || a[0] != n) shape_fail(OpKind::Concat, "incompatible " + shape_str(a) + " vs " + shape_str(b));
    a[1] = b[1] = 0;
    if (a != b) shape_fail(OpKind::Concat, "non-channel dims differ " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    out_shape[1] += t.dim(1);
    inner.push_back(t.numel() / n);
  }
  const Index total = std::accumulate(inner.begin(), inner.end(), Index{0});
  Vec v(n * total);
  for (Index s = 0; s < n; ++s) {
    Index off = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      v.segment(s * total + off, inner[i]) = xs[i].value().segment(s * inner[i], inner[i]);
      off += inner[i];
    }
  }
  Tensor out = Tensor::from(out_shape, std::move(v));
  return g.record(OpKind::Concat, out, std::vector<Tensor>(xs.begin(), xs.end()),
                  [inner, n, total](const Vec& go, std::vector<Tensor>& in) {
                    Index off = 0;
                    for (size_t i = 0; i < in.size(); ++i) {
                      if (in[i].requires_grad()) {
                        Vec gi(n * inner[i]);
                        for (Index s = 0; s < n; ++s) gi.segment(s * inner[i], inner[i]) = go.segment(s * total + off, inner[i]);
                        in[i].accumulate_grad(gi);
                      }
                      off += inner[i];
                    }
                  });
}

Tensor channel_affine(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_rank(OpKind::ChannelAffine, x, 4);
  const Index n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != ch || beta.numel() != ch)
    shape_fail(OpKind::ChannelAffine, "input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()) +
                                          " beta " + shape_str(beta.shape()));
  Vec v(x.numel());
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < ch; ++c) {
      const Index off = (s * ch + c) * hw;
      v.segment(off, hw) = (x.value().segment(off, hw).array() * gamma.value()[c] + beta.value()[c]).matrix();
    }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  return g.record(OpKind::ChannelAffine, out, {x, gamma, beta}, [n, ch, hw](const Vec& go, std::vector<Tensor>& in) {
    Vec dx, dg = Vec::Zero(ch), db = Vec::Zero(ch);
    if (in[0].requires_grad()) dx.resize(in[0].numel());
    for (Index s = 0; s < n; ++s)
      for (Index c = 0; c < ch; ++c) {
        const Index off = (s * ch + c) * hw;
        auto gseg = go.segment(off, hw);
        if (in[0].requires_grad()) dx.segment(off, hw) = gseg * in[1].value()[c];
        dg[c] += gseg.dot(in[0].value().segment(off, hw));
        db[c] += gseg.sum();
      }
    if (in[0].requires_grad()) in[0].accumulate_grad(dx);
    if (in[1].requires_grad()) in[1].accumulate_grad(dg);
    if (in[2].requires_grad()) in[2].accumulate_grad(db);
  });
}

Tensor global_avg_pool(Graph& g, const Tensor& x) {
  require_rank(OpKind::GlobalAvgPool, x, 4);
  const Index n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  Vec v(n * ch);
  for (Index i = 0; i < n * ch; ++i) v[i] = x.value().segment(i * hw, hw).mean();
  Tensor out = Tensor::from({n, ch}, std::move(v));
  return g.record(OpKind::GlobalAvgPool, out, {x}, [n, ch, hw](const Vec& go, std::vector<Tensor>& in) {
    Vec dx(n * ch * hw);
    for (Index i = 0; i < n * ch; ++i) dx.segment(i * hw, hw).setConstant(go[i] / static_cast<double>(hw));
    in[0].accumulate_grad(dx);
  });
}

Tensor sample_norm(Graph& g, const Tensor& x, double eps) {
  require_rank(OpKind::SampleNorm, x, 4);
  if (!(eps > 0.0)) shape_fail(OpKind::SampleNorm, "eps must be > 0");
  const Index n = x.dim(0), m = x.numel() / std::max<Index>(n, 1);
  Vec v(x.numel()), inv_std(n);
  for (Index s = 0; s < n; ++s) {
    auto xs = x.value().segment(s * m, m);
    const double mu = xs.mean();
    const double var = (xs.array() - mu).square().mean();
    inv_std[s] = 1.0 / std::sqrt(var + eps);
    v.segment(s * m, m) = ((xs.array() - mu) * inv_std[s]).matrix();
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  return g.record(OpKind::SampleNorm, out, {x}, [n, m, inv_std, y = out.value()](const Vec& go, std::vector<Tensor>& in) {
    Vec dx(n * m);
    for (Index s = 0; s < n; ++s) {
      auto gs = go.segment(s * m, m);
      auto ys = y.segment(s * m, m);
      const double gm = gs.mean(), gy = gs.dot(ys) / static_cast<double>(m);
      dx.segment(s * m, m) = ((gs.array() - gm - ys.array() * gy) * inv_std[s]).matrix();
    }
    in[0].accumulate_grad(dx);
  });
}

Tensor forward_op(Graph& g, OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto need = [&](size_t n) {
    if (in.size() != n)
      shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::Add: need(2); return add(g, in[0], in[1]);
    case OpKind::Sub: need(2); return sub(g, in[0], in[1]);
    case OpKind::ScalarMul: need(1); return scalar_mul(g, in[0], attrs.scalar);
    case OpKind::Mul: need(2); return mul(g, in[0], in[1]);
    case OpKind::MatMul: need(2); return matmul(g, in[0], in[1]);
    case OpKind::Conv2d:
      need(2);
      return conv2d(g, in[0], in[1], {attrs.stride, attrs.padding, attrs.dilation, attrs.groups});
    case OpKind::MaxPool3x3: need(1); return max_pool3x3(g, in[0], attrs.stride);
    case OpKind::AvgPool3x3: need(1); return avg_pool3x3(g, in[0], attrs.stride);
    case OpKind::Relu: need(1); return relu(g, in[0]);
    case OpKind::Softmax: need(1); return softmax(g, in[0]);
    case OpKind::Log: need(1); return log(g, in[0]);
    case OpKind::Exp: need(1); return exp(g, in[0]);
    case OpKind::Mean: need(1); return mean(g, in[0]);
    case OpKind::Sum: need(1); return sum(g, in[0]);
    case OpKind::Concat: return concat(g, in);
    case OpKind::CrossEntropy: need(1); return cross_entropy(g, in[0], attrs.labels);
    case OpKind::Identity: need(1); return identity(g, in[0]);
    case OpKind::Zero: {
      if (!attrs.zero_shape.empty()) return zero(g, attrs.zero_shape);
      need(1);
      return zero(g, in[0].shape());
    }
    case OpKind::WeightedSum:
      if (in.size() < 2) shape_fail(kind, "needs inputs followed by a weight vector");
      return weighted_sum(g, in.first(in.size() - 1), in.back());
    case OpKind::ChannelAffine: need(3); return channel_affine(g, in[0], in[1], in[2]);
    case OpKind::GlobalAvgPool: need(1); return global_avg_pool(g, in[0]);
    case OpKind::SampleNorm: need(1); return sample_norm(g, in[0]);
  }
  shape_fail(kind, "unsupported op");
}

// Optimizers ----------------------------------------------------------------------

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("SgdConfig: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("SgdConfig: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("SgdConfig: weight_decay must be >= 0");
}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("AdamConfig: lr must be > 0");
  if (!(eps > 0.0)) throw std::invalid_argument("AdamConfig: eps must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("AdamConfig: betas must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("AdamConfig: weight_decay must be >= 0");
}

namespace {
void require_grads(std::span<Tensor> params, const char* who) {
  for (size_t i = 0; i < params.size(); ++i)
    if (!params[i].has_grad())
      throw std::logic_error(std::string(who) + ": parameter " + std::to_string(i) + " has no gradient");
}
}  // namespace

void sgd_step(std::span<Tensor> params, const SgdConfig& cfg, SgdState& state) {
  require_grads(params, "sgd_step");
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.push_back(Vec::Zero(p.numel()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Vec& v = state.velocity[i];
    Vec& w = params[i].value();
    v = cfg.momentum * v + params[i].grad() + cfg.weight_decay * w;
    w -= cfg.lr * v;
  }
}

void adam_step(std::span<Tensor> params, const AdamConfig& cfg, AdamState& state, long t) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  require_grads(params, "adam_step");
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.push_back(Vec::Zero(p.numel()));
      state.v.push_back(Vec::Zero(p.numel()));
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Vec& w = params[i].value();
    const Vec gr = params[i].grad() + cfg.weight_decay * w;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gr;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gr.cwiseAbs2();
    w.array() -= cfg.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + cfg.eps);
  }
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad()) sq += p.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad()) p.grad() *= scale;
  }
  return norm;
}

}  // namespace wsnas::diff
