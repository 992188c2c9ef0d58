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

// Task embeddings from the diagonal Fisher information of a small fixed probe
// CNN, and the symmetric normalized cosine distance between embeddings.

#include "wsnas/diff.hpp"
#include "wsnas/io.hpp"
#include "wsnas/taskgen.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wsnas {

using diff::Vec;

/// Linear classifier on probe features.
struct ProbeHead {
  Eigen::MatrixXd weight;  // [features, classes]
  Vec bias;                // [classes]
  int classes() const { return static_cast<int>(bias.size()); }
  bool operator==(const ProbeHead&) const = default;
};

/// conv3x3(3->6) + relu, avg-pool stride 2, conv3x3(6->8) + relu, global
/// average pool. Only the two conv kernels are extractor parameters.
class ProbeNetwork {
 public:
  static constexpr int kFeatures = 8;
  static constexpr int kInChannels = 3;

  ProbeNetwork() = default;
  /// Random (untrained) extractor.
  static ProbeNetwork create(std::uint64_t seed, int input_size = 16);

  int input_size() const { return input_size_; }
  const WeightMap& extractor() const { return extractor_; }
  int num_params() const;
  /// Extractor parameters flattened in name order.
  Vec param_vector() const;
  void set_param_vector(const Vec& v);
  /// CRC32 over the extractor's f64 values in name order.
  std::uint32_t checksum() const;
  /// Throws when the task does not match the input contract.
  void check_input(const TaskBundle& task) const;

  /// Features [n, kFeatures] using `conv1`/`conv2` in place of the stored
  /// kernels (so callers can differentiate through them).
  diff::Tensor features(diff::Graph& g, const diff::Tensor& x, const diff::Tensor& conv1,
                        const diff::Tensor& conv2) const;
  Eigen::MatrixXd feature_matrix(const TaskBundle& task, std::span<const int> idx) const;

  void save(const std::filesystem::path& path) const;
  static ProbeNetwork load(const std::filesystem::path& path);

 private:
  int input_size_ = 16;
  WeightMap extractor_;
  friend ProbeNetwork train_probe(const TaskBundle&, int, std::uint64_t, int);
};

struct HeadFitConfig {
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 16;
};

/// LeCun-normal weight, zero bias, seeded.
ProbeHead init_head(int classes, std::uint64_t seed);
/// SGD on cross-entropy over frozen probe features. 0 epochs returns the
/// seeded initialization.
ProbeHead fit_head(const ProbeNetwork& probe, const TaskBundle& task, int epochs, std::uint64_t seed,
                   const HeadFitConfig& cfg = {});
ProbeHead fit_head_on_features(const Eigen::MatrixXd& features, const std::vector<int>& labels, int classes,
                               int epochs, std::uint64_t seed, const HeadFitConfig& cfg = {});
double head_accuracy(const Eigen::MatrixXd& features, const std::vector<int>& labels, const ProbeHead& head);

/// Trains extractor and a head jointly on a reference task, then drops the
/// head. The result is the frozen probe shared by a study.
ProbeNetwork train_probe(const TaskBundle& reference, int epochs, std::uint64_t seed, int input_size = 16);

/// The designated reference task: texture family, seed 100, 96 samples, 2
/// classes. Its seed lies outside the benchmark's seed range.
TaskBundle probe_reference_task(int size = 16);

// Fisher estimators ------------------------------------------------------------

/// A classifier p_θ(y|x) over a fixed sample set, differentiable in θ.
class FisherModel {
 public:
  virtual ~FisherModel() = default;
  virtual int num_params() const = 0;
  virtual int num_samples() const = 0;
  virtual int num_classes() const = 0;
  virtual Vec params() const = 0;
  /// p(.|x_i) at params().
  virtual Vec predict(int i) const = 0;
  /// ∇θ log p(y|x_i) at params().
  virtual Vec grad_log_prob(int i, int y) const = 0;
  /// Mean cross-entropy against the sample labels at θ, with its gradient.
  virtual double loss_grad(const Vec& theta, Vec& grad) const = 0;
};

/// p(y=1|x) = σ(w·x), one parameter.
class LogisticModel final : public FisherModel {
 public:
  LogisticModel(std::vector<double> xs, std::vector<int> labels, double w);
  int num_params() const override { return 1; }
  int num_samples() const override { return static_cast<int>(xs_.size()); }
  int num_classes() const override { return 2; }
  Vec params() const override { return Vec::Constant(1, w_); }
  Vec predict(int i) const override;
  Vec grad_log_prob(int i, int y) const override;
  double loss_grad(const Vec& theta, Vec& grad) const override;

 private:
  std::vector<double> xs_;
  std::vector<int> labels_;
  double w_;
};

/// Mean over the samples of x²σ(wx)(1-σ(wx)).
double logistic_fisher(const std::vector<double>& xs, double w);

/// The probe's extractor kernels as θ, with a fixed head.
class ProbeFisherModel final : public FisherModel {
 public:
  ProbeFisherModel(const ProbeNetwork& probe, ProbeHead head, const TaskBundle& task, std::vector<int> idx);
  int num_params() const override { return probe_.num_params(); }
  int num_samples() const override { return static_cast<int>(idx_.size()); }
  int num_classes() const override { return head_.classes(); }
  Vec params() const override { return probe_.param_vector(); }
  Vec predict(int i) const override;
  Vec grad_log_prob(int i, int y) const override;
  double loss_grad(const Vec& theta, Vec& grad) const override;

 private:
  const ProbeNetwork& probe_;
  ProbeHead head_;
  const TaskBundle& task_;
  std::vector<int> idx_;
  Eigen::MatrixXd probs_;  // cached p(.|x_i), one row per sample
};

struct FimEstimatorConfig {
  /// Weight of the KL term.
  double beta = 1e-2;
  /// Prior variance λ².
  double lambda_sq = 1.0;
  /// Label draws per input (empirical estimator).
  int mc_draws = 1;
  // Robust estimator optimization over s = log Λ.
  int max_iters = 4000;
  int min_iters = 400;
  int window = 200;
  int pairs = 2;
  double lr = 0.05;
  /// Largest allowed drift of mean log Λ between consecutive windows.
  double tol = 0.02;

  void validate() const;
};

/// Average over samples and draws y ~ p(.|x) of (∇θ log p(y|x))².
Vec empirical_fim_diag(const FisherModel& model, int mc_draws, std::uint64_t seed);

struct RobustFimResult {
  Vec fisher;
  Vec log_lambda;
  int iterations = 0;
  std::vector<double> objective_trace;
};

/// Thrown when the variance optimization does not settle.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Minimizes E_ε[L(θ̂ + Λ^{1/2} ε)] + β/(2N)·KL(N(θ̂,Λ) ‖ N(0,λ²I)) over a
/// diagonal Λ. At the optimum β/(2N)·Λ⁻¹ = F + β/(2N)·λ⁻², so F̂ is read off
/// that way and clamped at 0.
RobustFimResult robust_fim_diag(const FisherModel& model, const FimEstimatorConfig& cfg, std::uint64_t seed);

// Embeddings -------------------------------------------------------------------

enum class FimEstimator { Empirical, Robust };
std::string_view estimator_name(FimEstimator e);
FimEstimator estimator_from_name(std::string_view name);

struct TaskEmbedding {
  std::string task_id;
  FimEstimator estimator = FimEstimator::Empirical;
  std::uint32_t probe_checksum = 0;
  /// Samples the estimate averaged over.
  int n = 0;
  Vec values;
};

struct EmbedConfig {
  FimEstimator estimator = FimEstimator::Empirical;
  int head_epochs = 50;
  /// Cap on samples used (0 = all).
  int max_samples = 0;
  FimEstimatorConfig fim{};
  std::uint64_t seed = 0;
};

TaskEmbedding embed_task(const ProbeNetwork& probe, const TaskBundle& task, const EmbedConfig& cfg);

/// Raw little-endian f64 values at `path`, metadata in embedding_meta_path().
void save_embedding(const std::filesystem::path& path, const TaskEmbedding& e);
TaskEmbedding load_embedding(const std::filesystem::path& path);
std::filesystem::path embedding_meta_path(const std::filesystem::path& path);

/// Cosine distance between a/(a+b) and b/(a+b), elementwise. Coordinates
/// with a_i + b_i = 0 contribute 0.5 to both sides.
double d_sym(const Vec& a, const Vec& b);
double d_sym(const TaskEmbedding& a, const TaskEmbedding& b);

struct SimilarityMatrix {
  std::vector<std::string> ids;
  Eigen::MatrixXd d;

  int index_of(const std::string& id) const;
  double at(const std::string& a, const std::string& b) const;
};

/// All pairwise d_sym. Embeddings must share a probe and a length.
SimilarityMatrix build_similarity_matrix(const std::vector<TaskEmbedding>& embeddings);

/// First row and column hold task ids; values use 6 decimals.
std::string similarity_to_csv(const SimilarityMatrix& m);
/// Accepts full or triangular layouts (blank cells are mirrored).
SimilarityMatrix similarity_from_csv(const std::string& text);
void save_similarity(const std::filesystem::path& path, const SimilarityMatrix& m);
SimilarityMatrix load_similarity(const std::filesystem::path& path);

}  // namespace wsnas
