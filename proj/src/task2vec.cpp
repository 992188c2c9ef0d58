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
#include "wsnas/task2vec.hpp"

#include "wsnas/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace wsnas {

using diff::Graph;
using diff::Tensor;

namespace {

constexpr const char* kConv1 = "conv1.weight";
constexpr const char* kConv2 = "conv2.weight";

Tensor lecun(const diff::Shape& shape, int fan_in, std::uint64_t seed, const std::string& name) {
  std::mt19937_64 rng(derive_seed(seed, name));
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  Vec v(diff::numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(shape, std::move(v));
}

Tensor head_weight_tensor(const ProbeHead& h) {
  const auto f = h.weight.rows(), c = h.weight.cols();
  Vec v(f * c);
  for (Eigen::Index r = 0; r < f; ++r)
    for (Eigen::Index k = 0; k < c; ++k) v[r * c + k] = h.weight(r, k);
  return Tensor::from({f, c}, std::move(v));
}

Tensor head_logits(Graph& g, const Tensor& feats, const ProbeHead& h) {
  return diff::add(g, diff::matmul(g, feats, head_weight_tensor(h)), Tensor::from({h.classes()}, h.bias));
}

std::vector<std::vector<int>> chunks(std::span<const int> idx, std::size_t size) {
  std::vector<std::vector<int>> out;
  for (std::size_t lo = 0; lo < idx.size(); lo += size)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), lo + size)));
  return out;
}

Vec softmax_row(const Vec& logits) {
  const Vec e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

}  // namespace

// Probe ------------------------------------------------------------------------

ProbeNetwork ProbeNetwork::create(std::uint64_t seed, int input_size) {
  if (input_size < 4) throw std::invalid_argument("probe: input size must be >= 4");
  ProbeNetwork p;
  p.input_size_ = input_size;
  p.extractor_.emplace(kConv1, lecun({6, kInChannels, 3, 3}, kInChannels * 9, seed, kConv1));
  p.extractor_.emplace(kConv2, lecun({kFeatures, 6, 3, 3}, 6 * 9, seed, kConv2));
  return p;
}

int ProbeNetwork::num_params() const {
  int n = 0;
  for (const auto& [_, t] : extractor_) n += static_cast<int>(t.numel());
  return n;
}

Vec ProbeNetwork::param_vector() const {
  Vec v(num_params());
  Eigen::Index off = 0;
  for (const auto& [_, t] : extractor_) {
    v.segment(off, t.numel()) = t.value();
    off += t.numel();
  }
  return v;
}

void ProbeNetwork::set_param_vector(const Vec& v) {
  if (v.size() != num_params()) throw std::invalid_argument("probe: parameter vector has the wrong length");
  Eigen::Index off = 0;
  for (auto& [_, t] : extractor_) {
    t.value() = v.segment(off, t.numel());
    off += t.numel();
  }
}

std::uint32_t ProbeNetwork::checksum() const {
  const Vec v = param_vector();
  return crc32(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), sizeof(double) * static_cast<size_t>(v.size())));
}

void ProbeNetwork::check_input(const TaskBundle& task) const {
  if (task.c != kInChannels || task.h != input_size_ || task.w != input_size_)
    throw std::invalid_argument("probe: task '" + task.task_id + "' has input " + std::to_string(task.c) + "x" +
                                std::to_string(task.h) + "x" + std::to_string(task.w) + ", probe expects " +
                                std::to_string(kInChannels) + "x" + std::to_string(input_size_) + "x" +
                                std::to_string(input_size_));
}

Tensor ProbeNetwork::features(Graph& g, const Tensor& x, const Tensor& conv1, const Tensor& conv2) const {
  Tensor h = diff::relu(g, diff::conv2d(g, x, conv1, {1, 1, 1, 1}));
  h = diff::avg_pool3x3(g, h, 2);
  h = diff::relu(g, diff::conv2d(g, h, conv2, {1, 1, 1, 1}));
  return diff::global_avg_pool(g, h);
}

Eigen::MatrixXd ProbeNetwork::feature_matrix(const TaskBundle& task, std::span<const int> idx) const {
  check_input(task);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), kFeatures);
  Eigen::Index row = 0;
  for (const auto& batch : chunks(idx, 64)) {
    Graph g;
    const Tensor f = features(g, task.images(batch), extractor_.at(kConv1), extractor_.at(kConv2));
    for (std::size_t r = 0; r < batch.size(); ++r, ++row)
      for (int k = 0; k < kFeatures; ++k) out(row, k) = f.value()[static_cast<Eigen::Index>(r) * kFeatures + k];
  }
  return out;
}

void ProbeNetwork::save(const std::filesystem::path& path) const {
  save_weights(path, extractor_);
  auto meta = path;
  meta.replace_extension(".meta.json");
  write_text(meta, Json{{"input_size", input_size_}, {"checksum", checksum()}}.dump(2) + "\n");
}

ProbeNetwork ProbeNetwork::load(const std::filesystem::path& path) {
  ProbeNetwork p;
  p.extractor_ = load_weights(path);
  auto meta = path;
  meta.replace_extension(".meta.json");
  const Json j = Json::parse(read_text(meta));
  p.input_size_ = j.at("input_size").get<int>();
  if (!p.extractor_.count(kConv1) || !p.extractor_.count(kConv2) || p.extractor_.size() != 2)
    throw FormatError("probe: '" + path.string() + "' does not hold conv1/conv2 kernels");
  if (p.extractor_.at(kConv1).shape() != diff::Shape{6, kInChannels, 3, 3} ||
      p.extractor_.at(kConv2).shape() != diff::Shape{kFeatures, 6, 3, 3})
    throw FormatError("probe: kernel shapes do not match the probe architecture");
  if (p.checksum() != j.at("checksum").get<std::uint32_t>())
    throw FormatError("probe: checksum mismatch for '" + path.string() + "'");
  return p;
}

// Heads ------------------------------------------------------------------------

ProbeHead init_head(int classes, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("probe head: classes must be >= 2");
  std::mt19937_64 rng(derive_seed(seed, "head.weight"));
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(ProbeNetwork::kFeatures)));
  ProbeHead h;
  h.weight.resize(ProbeNetwork::kFeatures, classes);
  for (Eigen::Index r = 0; r < h.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < h.weight.cols(); ++c) h.weight(r, c) = n(rng);
  h.bias = Vec::Zero(classes);
  return h;
}

ProbeHead fit_head_on_features(const Eigen::MatrixXd& features, const std::vector<int>& labels, int classes,
                               int epochs, std::uint64_t seed, const HeadFitConfig& cfg) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("fit_head: feature rows and labels differ in count");
  if (epochs < 0) throw std::invalid_argument("fit_head: epochs must be >= 0");
  ProbeHead h = init_head(classes, seed);
  if (features.cols() != h.weight.rows()) throw std::invalid_argument("fit_head: feature width mismatch");
  Eigen::MatrixXd vw = Eigen::MatrixXd::Zero(h.weight.rows(), classes);
  Vec vb = Vec::Zero(classes);
  std::mt19937_64 rng(derive_seed(seed, "head.order"));
  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(h.weight.rows(), classes);
      Vec gb = Vec::Zero(classes);
      for (std::size_t k = lo; k < hi; ++k) {
        const int i = order[k];
        const Vec x = features.row(i).transpose();
        Vec p = softmax_row(h.weight.transpose() * x + h.bias);
        p[labels[static_cast<size_t>(i)]] -= 1.0;
        gw += x * p.transpose();
        gb += p;
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      vw = cfg.momentum * vw + gw * inv;
      vb = cfg.momentum * vb + gb * inv;
      h.weight -= cfg.lr * vw;
      h.bias -= cfg.lr * vb;
    }
  }
  return h;
}

ProbeHead fit_head(const ProbeNetwork& probe, const TaskBundle& task, int epochs, std::uint64_t seed,
                   const HeadFitConfig& cfg) {
  const auto idx = task.all_indices();
  return fit_head_on_features(probe.feature_matrix(task, idx), task.labels_of(idx), task.classes, epochs, seed, cfg);
}

double head_accuracy(const Eigen::MatrixXd& features, const std::vector<int>& labels, const ProbeHead& head) {
  if (labels.empty()) throw std::invalid_argument("head_accuracy: no samples");
  int correct = 0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Eigen::Index best = 0;
    (head.weight.transpose() * features.row(i).transpose() + head.bias).maxCoeff(&best);
    correct += best == labels[static_cast<size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

ProbeNetwork train_probe(const TaskBundle& reference, int epochs, std::uint64_t seed, int input_size) {
  ProbeNetwork p = ProbeNetwork::create(seed, input_size);
  p.check_input(reference);
  ProbeHead h = init_head(reference.classes, seed);
  std::vector<Tensor> params{p.extractor_.at(kConv1), p.extractor_.at(kConv2), head_weight_tensor(h),
                             Tensor::from({reference.classes}, h.bias)};
  for (auto& t : params) t.set_requires_grad(true);
  const diff::SgdConfig opt{0.05, 0.9, 3e-4};
  diff::SgdState state;
  std::mt19937_64 rng(derive_seed(seed, "probe.order"));
  std::vector<int> order = reference.all_indices();
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto& batch : chunks(order, 16)) {
      diff::zero_grad(params);
      Graph g;
      const Tensor f = p.features(g, reference.images(batch), params[0], params[1]);
      const Tensor logits = diff::add(g, diff::matmul(g, f, params[2]), params[3]);
      g.backward(diff::cross_entropy(g, logits, reference.labels_of(batch)));
      diff::clip_grad_norm(params, 5.0);
      diff::sgd_step(params, opt, state);
    }
  }
  for (auto& [_, t] : p.extractor_) t.set_requires_grad(false);
  return p;
}

TaskBundle probe_reference_task(int size) { return generate_task("texture", 100, 96, 2, size); }

// Fisher models ----------------------------------------------------------------

namespace {
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

LogisticModel::LogisticModel(std::vector<double> xs, std::vector<int> labels, double w)
    : xs_(std::move(xs)), labels_(std::move(labels)), w_(w) {
  if (xs_.empty() || xs_.size() != labels_.size()) throw std::invalid_argument("logistic model: bad sample set");
}

Vec LogisticModel::predict(int i) const {
  const double p1 = sigmoid(w_ * xs_.at(static_cast<size_t>(i)));
  Vec p(2);
  p << 1.0 - p1, p1;
  return p;
}

Vec LogisticModel::grad_log_prob(int i, int y) const {
  const double x = xs_.at(static_cast<size_t>(i));
  return Vec::Constant(1, x * (static_cast<double>(y) - sigmoid(w_ * x)));
}

double LogisticModel::loss_grad(const Vec& theta, Vec& grad) const {
  double loss = 0.0, g = 0.0;
  for (size_t i = 0; i < xs_.size(); ++i) {
    const double z = theta[0] * xs_[i], y = labels_[i];
    // log(1 + e^z) - y z, evaluated stably.
    loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
    g += xs_[i] * (sigmoid(z) - y);
  }
  const double n = static_cast<double>(xs_.size());
  grad = Vec::Constant(1, g / n);
  return loss / n;
}

double logistic_fisher(const std::vector<double>& xs, double w) {
  double f = 0.0;
  for (double x : xs) {
    const double s = sigmoid(w * x);
    f += x * x * s * (1.0 - s);
  }
  return f / static_cast<double>(xs.size());
}

ProbeFisherModel::ProbeFisherModel(const ProbeNetwork& probe, ProbeHead head, const TaskBundle& task,
                                   std::vector<int> idx)
    : probe_(probe), head_(std::move(head)), task_(task), idx_(std::move(idx)) {
  probe_.check_input(task_);
  if (idx_.empty()) throw std::invalid_argument("fisher: empty task");
  if (head_.classes() != task_.classes) throw std::invalid_argument("fisher: head and task differ in class count");
  probs_.resize(static_cast<Eigen::Index>(idx_.size()), head_.classes());
  const Eigen::MatrixXd f = probe_.feature_matrix(task_, idx_);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    probs_.row(i) = softmax_row(head_.weight.transpose() * f.row(i).transpose() + head_.bias).transpose();
}

Vec ProbeFisherModel::predict(int i) const { return probs_.row(i).transpose(); }

Vec ProbeFisherModel::grad_log_prob(int i, int y) const {
  Tensor c1 = probe_.extractor().at(kConv1).detached_copy(), c2 = probe_.extractor().at(kConv2).detached_copy();
  c1.set_requires_grad(true);
  c2.set_requires_grad(true);
  Graph g;
  const std::vector<int> one{idx_.at(static_cast<size_t>(i))};
  const Tensor logits = head_logits(g, probe_.features(g, task_.images(one), c1, c2), head_);
  const std::vector<int> label{y};
  g.backward(diff::cross_entropy(g, logits, label));
  Vec out(c1.numel() + c2.numel());
  out << -c1.grad(), -c2.grad();
  return out;
}

double ProbeFisherModel::loss_grad(const Vec& theta, Vec& grad) const {
  if (theta.size() != num_params()) throw std::invalid_argument("fisher: θ has the wrong length");
  const auto& k1 = probe_.extractor().at(kConv1);
  const auto& k2 = probe_.extractor().at(kConv2);
  Tensor c1 = Tensor::from(k1.shape(), theta.head(k1.numel()), true);
  Tensor c2 = Tensor::from(k2.shape(), theta.tail(k2.numel()), true);
  double loss = 0.0;
  const double n = static_cast<double>(idx_.size());
  for (const auto& batch : chunks(idx_, 64)) {
    Graph g;
    const Tensor logits = head_logits(g, probe_.features(g, task_.images(batch), c1, c2), head_);
    const Tensor l = diff::scalar_mul(g, diff::cross_entropy(g, logits, task_.labels_of(batch)),
                                      static_cast<double>(batch.size()) / n);
    g.backward(l);
    loss += l.item();
  }
  grad.resize(theta.size());
  grad << c1.grad(), c2.grad();
  return loss;
}

// Estimators -------------------------------------------------------------------

void FimEstimatorConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("fim: beta must be > 0");
  if (!(lambda_sq > 0.0)) throw std::invalid_argument("fim: lambda_sq must be > 0");
  if (mc_draws < 1) throw std::invalid_argument("fim: mc_draws must be >= 1");
  if (max_iters < 1 || window < 1 || pairs < 1 || min_iters < 0) throw std::invalid_argument("fim: bad optimizer budget");
  if (!(lr > 0.0) || !(tol > 0.0)) throw std::invalid_argument("fim: lr and tol must be > 0");
}

Vec empirical_fim_diag(const FisherModel& model, int mc_draws, std::uint64_t seed) {
  if (mc_draws < 1) throw std::invalid_argument("fim: mc_draws must be >= 1");
  if (model.num_samples() < 1) throw std::invalid_argument("fim: empty task");
  std::mt19937_64 rng(derive_seed(seed, "fim.empirical"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec acc = Vec::Zero(model.num_params());
  for (int i = 0; i < model.num_samples(); ++i) {
    const Vec p = model.predict(i);
    std::vector<int> counts(static_cast<size_t>(p.size()), 0);
    for (int d = 0; d < mc_draws; ++d) {
      double r = u(rng), c = 0.0;
      int y = static_cast<int>(p.size()) - 1;
      for (int k = 0; k < p.size(); ++k) {
        c += p[k];
        if (r < c) {
          y = k;
          break;
        }
      }
      ++counts[static_cast<size_t>(y)];
    }
    // Draws of the same label share one gradient.
    for (int y = 0; y < p.size(); ++y)
      if (counts[static_cast<size_t>(y)] > 0) acc += counts[static_cast<size_t>(y)] * model.grad_log_prob(i, y).array().square().matrix();
  }
  return acc / (static_cast<double>(model.num_samples()) * mc_draws);
}

RobustFimResult robust_fim_diag(const FisherModel& model, const FimEstimatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int n = model.num_samples();
  if (n < 1) throw std::invalid_argument("fim: empty task");
  const Vec theta_hat = model.params();
  const Eigen::Index P = theta_hat.size();
  const double c = cfg.beta / (2.0 * n), inv_l2 = 1.0 / cfg.lambda_sq;

  std::mt19937_64 rng(derive_seed(seed, "fim.robust"));
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec s = Vec::Constant(P, std::log(0.01 * cfg.lambda_sq));
  Vec m = Vec::Zero(P), v = Vec::Zero(P);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  RobustFimResult out;
  Vec win_s = Vec::Zero(P), prev_mean;
  double win_obj = 0.0;
  bool converged = false;
  Vec eps_v(P), g(P), grad_s(P);
  for (int t = 1; t <= cfg.max_iters; ++t) {
    const Vec sd = (0.5 * s.array()).exp().matrix();
    grad_s.setZero();
    double obj = 0.0;
    for (int k = 0; k < cfg.pairs; ++k) {
      for (auto& e : eps_v) e = nd(rng);
      for (double sign : {1.0, -1.0}) {
        obj += model.loss_grad(theta_hat + sign * sd.cwiseProduct(eps_v), g);
        grad_s.array() += sign * g.array() * eps_v.array() * 0.5 * sd.array();
      }
    }
    grad_s /= 2.0 * cfg.pairs;
    obj /= 2.0 * cfg.pairs;
    const Vec lam = s.array().exp().matrix();
    obj += c * 0.5 * (lam.array() * inv_l2 + theta_hat.array().square() * inv_l2 - 1.0 - (lam.array() * inv_l2).log()).sum();
    grad_s.array() += c * 0.5 * (lam.array() * inv_l2 - 1.0);

    m = b1 * m + (1.0 - b1) * grad_s;
    v = b2 * v + (1.0 - b2) * grad_s.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
    s.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);

    win_s += s;
    win_obj += obj;
    if (t % cfg.window == 0) {
      const Vec mean = win_s / cfg.window;
      out.objective_trace.push_back(win_obj / cfg.window);
      win_s.setZero();
      win_obj = 0.0;
      if (prev_mean.size() == P && t >= cfg.min_iters && (mean - prev_mean).cwiseAbs().maxCoeff() <= cfg.tol) {
        out.log_lambda = mean;
        out.iterations = t;
        converged = true;
        break;
      }
      prev_mean = mean;
    }
  }
  if (!converged)
    throw ConvergenceError("robust fim: log-variance still drifting after " + std::to_string(cfg.max_iters) +
                               " iterations",
                           out.objective_trace);
  out.fisher = (c * ((-out.log_lambda.array()).exp() - inv_l2)).max(0.0).matrix();
  return out;
}

// Embeddings -------------------------------------------------------------------

std::string_view estimator_name(FimEstimator e) { return e == FimEstimator::Empirical ? "empirical" : "robust"; }

FimEstimator estimator_from_name(std::string_view name) {
  if (name == "empirical") return FimEstimator::Empirical;
  if (name == "robust") return FimEstimator::Robust;
  throw std::invalid_argument("unknown FIM estimator '" + std::string(name) + "'");
}

TaskEmbedding embed_task(const ProbeNetwork& probe, const TaskBundle& task, const EmbedConfig& cfg) {
  probe.check_input(task);
  std::vector<int> idx = task.all_indices();
  if (cfg.max_samples > 0 && cfg.max_samples < task.n) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "embed.samples"));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(cfg.max_samples));
    std::sort(idx.begin(), idx.end());
  }
  const ProbeHead head = fit_head(probe, task, cfg.head_epochs, cfg.seed);
  const ProbeFisherModel model(probe, head, task, idx);
  TaskEmbedding e;
  e.task_id = task.task_id;
  e.estimator = cfg.estimator;
  e.probe_checksum = probe.checksum();
  e.n = static_cast<int>(idx.size());
  e.values = cfg.estimator == FimEstimator::Empirical ? empirical_fim_diag(model, cfg.fim.mc_draws, cfg.seed)
                                                      : robust_fim_diag(model, cfg.fim, cfg.seed).fisher;
  return e;
}

std::filesystem::path embedding_meta_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".meta.json");
  return p;
}

void save_embedding(const std::filesystem::path& path, const TaskEmbedding& e) {
  ByteWriter w;
  for (double x : e.values) w.f64(x);
  write_file(path, w.bytes());
  const Json meta{{"task_id", e.task_id},
                  {"estimator", std::string(estimator_name(e.estimator))},
                  {"probe_checksum", e.probe_checksum},
                  {"n", e.n}};
  write_text(embedding_meta_path(path), meta.dump(2) + "\n");
}

TaskEmbedding load_embedding(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 8 != 0) throw FormatError("embedding: '" + path.string() + "' is not a whole number of f64 values");
  TaskEmbedding e;
  e.values.resize(static_cast<Eigen::Index>(bytes.size() / 8));
  if (!bytes.empty()) std::memcpy(e.values.data(), bytes.data(), bytes.size());
  const Json j = Json::parse(read_text(embedding_meta_path(path)));
  e.task_id = j.at("task_id").get<std::string>();
  e.estimator = estimator_from_name(j.at("estimator").get<std::string>());
  e.probe_checksum = j.at("probe_checksum").get<std::uint32_t>();
  e.n = j.at("n").get<int>();
  return e;
}

// Distances --------------------------------------------------------------------

double d_sym(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("d_sym: embeddings differ in length (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (!a.allFinite() || !b.allFinite() || (a.array() < 0).any() || (b.array() < 0).any())
    throw std::invalid_argument("d_sym: embeddings must be finite and non-negative");
  Vec an(a.size()), bn(b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double s = a[i] + b[i];
    if (s == 0.0) {
      an[i] = bn[i] = 0.5;
    } else {
      an[i] = a[i] / s;
      bn[i] = b[i] / s;
    }
  }
  if (an == bn) return 0.0;
  const double na = an.squaredNorm(), nb = bn.squaredNorm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::clamp(1.0 - an.dot(bn) / std::sqrt(na * nb), 0.0, 1.0);
}

double d_sym(const TaskEmbedding& a, const TaskEmbedding& b) { return d_sym(a.values, b.values); }

int SimilarityMatrix::index_of(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw std::invalid_argument("similarity matrix: unknown task '" + id + "'");
  return static_cast<int>(it - ids.begin());
}

double SimilarityMatrix::at(const std::string& a, const std::string& b) const { return d(index_of(a), index_of(b)); }

SimilarityMatrix build_similarity_matrix(const std::vector<TaskEmbedding>& embeddings) {
  if (embeddings.size() < 2) throw std::invalid_argument("similarity matrix: need at least two embeddings");
  const auto k = static_cast<Eigen::Index>(embeddings.size());
  SimilarityMatrix m;
  m.d = Eigen::MatrixXd::Zero(k, k);
  for (const auto& e : embeddings) {
    if (e.probe_checksum != embeddings[0].probe_checksum)
      throw std::invalid_argument("similarity matrix: embedding '" + e.task_id + "' comes from a different probe");
    m.ids.push_back(e.task_id);
  }
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      m.d(i, j) = m.d(j, i) = d_sym(embeddings[static_cast<size_t>(i)], embeddings[static_cast<size_t>(j)]);
  return m;
}

std::string similarity_to_csv(const SimilarityMatrix& m) {
  std::ostringstream out;
  out << "task";
  for (const auto& id : m.ids) out << "," << id;
  out << "\n" << std::fixed << std::setprecision(6);
  for (size_t i = 0; i < m.ids.size(); ++i) {
    out << m.ids[i];
    for (size_t j = 0; j < m.ids.size(); ++j) out << "," << m.d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out << "\n";
  }
  return out.str();
}

namespace {

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

SimilarityMatrix similarity_from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(ss, line))
    if (!trim(line).empty()) rows.push_back(split_csv_line(line));
  if (rows.size() < 2) throw FormatError("similarity csv: need a header row and at least one data row");
  SimilarityMatrix m;
  m.ids.assign(rows[0].begin() + 1, rows[0].end());
  const auto k = static_cast<Eigen::Index>(m.ids.size());
  if (static_cast<Eigen::Index>(rows.size()) - 1 != k)
    throw FormatError("similarity csv: " + std::to_string(rows.size() - 1) + " data rows for " + std::to_string(k) +
                      " column ids");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd raw = Eigen::MatrixXd::Constant(k, k, nan);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& r = rows[static_cast<size_t>(i + 1)];
    if (r.empty() || r[0] != m.ids[static_cast<size_t>(i)])
      throw FormatError("similarity csv: row " + std::to_string(i + 1) + " should be labelled '" +
                        m.ids[static_cast<size_t>(i)] + "'");
    if (static_cast<Eigen::Index>(r.size()) > k + 1)
      throw FormatError("similarity csv: row '" + r[0] + "' has too many cells");
    for (size_t j = 1; j < r.size(); ++j) {
      if (r[j].empty()) continue;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(r[j], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != r[j].size() || !std::isfinite(v) || v < 0.0)
        throw FormatError("similarity csv: bad value '" + r[j] + "' in row '" + r[0] + "'");
      raw(i, static_cast<Eigen::Index>(j - 1)) = v;
    }
  }
  m.d.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      const double a = raw(i, j), b = raw(j, i);
      if (i == j) {
        if (!std::isnan(a) && a != 0.0) throw FormatError("similarity csv: nonzero diagonal for '" + m.ids[static_cast<size_t>(i)] + "'");
        m.d(i, j) = 0.0;
      } else if (std::isnan(a) && std::isnan(b)) {
        throw FormatError("similarity csv: no value for pair (" + m.ids[static_cast<size_t>(i)] + ", " +
                          m.ids[static_cast<size_t>(j)] + ")");
      } else if (!std::isnan(a) && !std::isnan(b) && a != b) {
        throw FormatError("similarity csv: asymmetric values for pair (" + m.ids[static_cast<size_t>(i)] + ", " +
                          m.ids[static_cast<size_t>(j)] + ")");
      } else {
        m.d(i, j) = std::isnan(a) ? b : a;
      }
    }
  return m;
}

void save_similarity(const std::filesystem::path& path, const SimilarityMatrix& m) {
  write_text(path, similarity_to_csv(m));
}

SimilarityMatrix load_similarity(const std::filesystem::path& path) { return similarity_from_csv(read_text(path)); }

}  // namespace wsnas
