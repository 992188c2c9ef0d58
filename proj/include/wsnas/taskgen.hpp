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

// Synthetic image-classification tasks in parameterized families, stratified
// splits, and the bundle file format.

#include "wsnas/diff.hpp"
#include "wsnas/io.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace wsnas {

struct TaskBundle {
  std::string task_id;
  std::string family_id;
  Json gen_params = Json::object();
  std::uint64_t seed = 0;
  int n = 0;
  int c = 3;
  int h = 16;
  int w = 16;
  int classes = 0;
  std::vector<std::uint32_t> labels;
  std::vector<float> pixels;  // n*c*h*w, NCHW

  bool operator==(const TaskBundle&) const = default;

  /// f64 batch [idx.size(), c, h, w].
  diff::Tensor images(std::span<const int> idx) const;
  std::vector<int> labels_of(std::span<const int> idx) const;
  std::vector<int> class_counts() const;
  std::vector<int> all_indices() const;
};

struct Split {
  std::vector<int> train_w;
  std::vector<int> train_alpha;
  std::vector<int> validation;
};

/// "texture": oriented gratings, class = orientation. "blob": class = blob
/// count. "planted": channel 0 carries a ±offset whose sign is the label.
/// Each family draws a continuous style value from the seed.
std::vector<std::string> task_families();
TaskBundle generate_task(const std::string& family, std::uint64_t seed, int n, int classes, int size = 16);

/// Three texture and three blob tasks with seeds 10·seed + {1,2,3}, in that
/// order.
std::vector<TaskBundle> benchmark_tasks(std::uint64_t seed = 0, int n = 96, int classes = 2, int size = 16);

/// Per class: shuffle, send round(count·val_fraction) to validation and split
/// the rest into two halves (odd remainders alternate between halves).
Split stratified_split(const TaskBundle& bundle, double val_fraction, std::uint64_t seed);

std::vector<std::uint8_t> encode_bundle(const TaskBundle& b);
/// Decodes the binary part only (ids and params come from the sidecar).
TaskBundle decode_bundle(std::span<const std::uint8_t> bytes);
std::filesystem::path bundle_meta_path(const std::filesystem::path& path);
void save_bundle(const std::filesystem::path& path, const TaskBundle& b);
TaskBundle load_bundle(const std::filesystem::path& path);

}  // namespace wsnas
