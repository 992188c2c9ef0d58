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
#include "wsnas/taskgen.hpp"

#include "wsnas/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace wsnas {

diff::Tensor TaskBundle::images(std::span<const int> idx) const {
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  diff::Vec v(static_cast<diff::Index>(idx.size() * per));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] < 0 || idx[b] >= n) throw std::out_of_range("TaskBundle: index " + std::to_string(idx[b]) + " out of range");
    const float* src = pixels.data() + static_cast<std::size_t>(idx[b]) * per;
    for (std::size_t k = 0; k < per; ++k) v[static_cast<diff::Index>(b * per + k)] = src[k];
  }
  return diff::Tensor::from({static_cast<diff::Index>(idx.size()), c, h, w}, std::move(v));
}

std::vector<int> TaskBundle::labels_of(std::span<const int> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(static_cast<int>(labels.at(static_cast<std::size_t>(i))));
  return out;
}

std::vector<int> TaskBundle::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (auto l : labels) ++counts.at(l);
  return counts;
}

std::vector<int> TaskBundle::all_indices() const {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

// Generators -------------------------------------------------------------------

std::vector<std::string> task_families() { return {"texture", "blob", "planted"}; }

namespace {

using Rng = std::mt19937_64;
constexpr double kPi = std::numbers::pi;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void texture_image(float* out, int cls, int classes, int size, double style, Rng& rng) {
  std::normal_distribution<double> jitter(0.0, 0.08), noise(0.0, 0.04 + 0.04 * style);
  std::uniform_real_distribution<double> phase_d(0.0, 2.0 * kPi), contrast_d(0.6, 1.0);
  const double theta = kPi * cls / classes + 0.35 * style + jitter(rng);
  const double freq = 2.0 * kPi * (2.0 + 2.0 * style) / size;
  const double phase = phase_d(rng), contrast = contrast_d(rng);
  const double tint[3] = {0.9, 0.55 + 0.35 * style, 0.35};
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double s = std::sin(freq * (x * ct + y * st) + phase);
        out[(ch * size + y) * size + x] = clamp01(0.5 + 0.45 * contrast * tint[ch] * s + noise(rng));
      }
}

void blob_image(float* out, int cls, int size, double style, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 0.03 + 0.03 * style);
  const double margin = 2.0;
  std::uniform_real_distribution<double> pos(margin, size - 1 - margin), radius_jit(0.85, 1.15);
  const double radius = 1.1 + 1.0 * style;
  const double tint[3] = {0.35 + 0.5 * style, 0.85, 0.5};
  std::vector<double> field(static_cast<std::size_t>(size) * size, 0.0);
  for (int b = 0; b <= cls; ++b) {
    const double cx = pos(rng), cy = pos(rng), r = radius * radius_jit(rng);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        field[static_cast<std::size_t>(y * size + x)] += std::exp(-d2 / (2.0 * r * r));
      }
  }
  for (int ch = 0; ch < 3; ++ch)
    for (int k = 0; k < size * size; ++k)
      out[ch * size * size + k] = clamp01(0.1 + 0.85 * tint[ch] * std::min(field[static_cast<std::size_t>(k)], 1.0) + noise(rng));
}

void planted_image(float* out, int cls, int size, double style, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 0.1 + 0.05 * style);
  const double offset = cls == 1 ? 0.2 : -0.2;
  for (int ch = 0; ch < 3; ++ch)
    for (int k = 0; k < size * size; ++k) out[ch * size * size + k] = clamp01(0.5 + (ch == 0 ? offset : 0.0) + noise(rng));
}

}  // namespace

TaskBundle generate_task(const std::string& family, std::uint64_t seed, int n, int classes, int size) {
  const auto fams = task_families();
  if (std::find(fams.begin(), fams.end(), family) == fams.end())
    throw std::invalid_argument("unknown task family '" + family + "'");
  if (classes < 2) throw std::invalid_argument("classes must be >= 2");
  if (n < 4 * classes)
    throw std::invalid_argument("n too small: need n >= 4*classes (" + std::to_string(4 * classes) + "), got " +
                                std::to_string(n));
  if (family == "planted" && classes != 2) throw std::invalid_argument("planted family has exactly 2 classes");
  if (size < 4) throw std::invalid_argument("image size must be >= 4");

  Rng style_rng(derive_seed(seed, family + ".style"));
  const double style = std::uniform_real_distribution<double>(0.0, 1.0)(style_rng);

  TaskBundle b;
  b.family_id = family;
  b.task_id = family + "-" + std::to_string(seed);
  b.seed = seed;
  b.n = n;
  b.c = 3;
  b.h = b.w = size;
  b.classes = classes;
  b.gen_params = Json{{"style", style}, {"size", size}};
  if (family == "texture") {
    b.gen_params["frequency"] = (2.0 + 2.0 * style) / size;
    b.gen_params["noise"] = 0.04 + 0.04 * style;
  } else if (family == "blob") {
    b.gen_params["radius"] = 1.1 + 1.0 * style;
    b.gen_params["noise"] = 0.03 + 0.03 * style;
  } else {
    b.gen_params["noise"] = 0.1 + 0.05 * style;
  }

  Rng rng(derive_seed(seed, family + ".samples"));
  b.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) b.labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % classes);
  std::shuffle(b.labels.begin(), b.labels.end(), rng);

  const std::size_t per = 3u * size * size;
  b.pixels.resize(static_cast<std::size_t>(n) * per);
  for (int i = 0; i < n; ++i) {
    float* out = b.pixels.data() + static_cast<std::size_t>(i) * per;
    const int cls = static_cast<int>(b.labels[static_cast<std::size_t>(i)]);
    if (family == "texture")
      texture_image(out, cls, classes, size, style, rng);
    else if (family == "blob")
      blob_image(out, cls, size, style, rng);
    else
      planted_image(out, cls, size, style, rng);
  }
  return b;
}

// Split ------------------------------------------------------------------------

std::vector<TaskBundle> benchmark_tasks(std::uint64_t seed, int n, int classes, int size) {
  std::vector<TaskBundle> out;
  for (const char* family : {"texture", "blob"})
    for (std::uint64_t k = 1; k <= 3; ++k) out.push_back(generate_task(family, 10 * seed + k, n, classes, size));
  return out;
}

Split stratified_split(const TaskBundle& bundle, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("split: val_fraction must lie in (0,1)");
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(bundle.classes));
  for (int i = 0; i < bundle.n; ++i) by_class.at(bundle.labels[static_cast<std::size_t>(i)]).push_back(i);

  Split s;
  bool extra_to_w = true;
  for (int c = 0; c < bundle.classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    const int count = static_cast<int>(idx.size());
    const int n_val = static_cast<int>(std::lround(count * val_fraction));
    const int rest = count - n_val;
    if (n_val < 1 || rest < 2)
      throw std::invalid_argument("split: class " + std::to_string(c) + " has " + std::to_string(count) +
                                  " samples, too few for validation fraction " + std::to_string(val_fraction));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    std::shuffle(idx.begin(), idx.end(), rng);
    int n_w = rest / 2;
    if (rest % 2 == 1) {
      if (extra_to_w) ++n_w;
      extra_to_w = !extra_to_w;
    }
    s.validation.insert(s.validation.end(), idx.begin(), idx.begin() + n_val);
    s.train_w.insert(s.train_w.end(), idx.begin() + n_val, idx.begin() + n_val + n_w);
    s.train_alpha.insert(s.train_alpha.end(), idx.begin() + n_val + n_w, idx.end());
  }
  for (auto* v : {&s.train_w, &s.train_alpha, &s.validation}) std::sort(v->begin(), v->end());
  return s;
}

// Bundle files -----------------------------------------------------------------

std::vector<std::uint8_t> encode_bundle(const TaskBundle& b) {
  ByteWriter w;
  w.raw("WSNB");
  w.u8(1);
  for (int v : {b.n, b.c, b.h, b.w, b.classes}) w.u32(static_cast<std::uint32_t>(v));
  for (auto l : b.labels) w.u32(l);
  for (float p : b.pixels) w.f32(p);
  w.seal();
  return w.bytes();
}

TaskBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  const auto payload = check_envelope(bytes, "WSNB", 1, "bundle");
  ByteReader r(payload.subspan(5), "bundle");
  TaskBundle b;
  b.n = static_cast<int>(r.u32("n"));
  b.c = static_cast<int>(r.u32("c"));
  b.h = static_cast<int>(r.u32("h"));
  b.w = static_cast<int>(r.u32("w"));
  b.classes = static_cast<int>(r.u32("classes"));
  const std::size_t n = static_cast<std::size_t>(b.n);
  const std::size_t npix = n * static_cast<std::size_t>(b.c) * static_cast<std::size_t>(b.h) * static_cast<std::size_t>(b.w);
  if (r.remaining() != 4 * n + 4 * npix)
    throw FormatError("bundle: payload size does not match header fields n, c, h, w");
  b.labels.resize(n);
  for (auto& l : b.labels) {
    l = r.u32("labels");
    if (l >= static_cast<std::uint32_t>(b.classes))
      throw FormatError("bundle: label " + std::to_string(l) + " outside [0, classes)");
  }
  b.pixels.resize(npix);
  for (auto& p : b.pixels) p = r.f32("pixels");
  return b;
}

std::filesystem::path bundle_meta_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".meta.json");
  return p;
}

void save_bundle(const std::filesystem::path& path, const TaskBundle& b) {
  write_file(path, encode_bundle(b));
  const Json meta{{"task_id", b.task_id}, {"family_id", b.family_id}, {"gen_params", b.gen_params}, {"seed", b.seed}};
  write_text(bundle_meta_path(path), meta.dump(2) + "\n");
}

TaskBundle load_bundle(const std::filesystem::path& path) {
  TaskBundle b = decode_bundle(read_file(path));
  const auto meta = bundle_meta_path(path);
  if (std::filesystem::exists(meta)) {
    const Json j = Json::parse(read_text(meta));
    b.task_id = j.at("task_id").get<std::string>();
    b.family_id = j.at("family_id").get<std::string>();
    b.gen_params = j.at("gen_params");
    b.seed = j.at("seed").get<std::uint64_t>();
  } else {
    b.task_id = path.stem().string();
  }
  return b;
}

}  // namespace wsnas
