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
#include "wsnas/io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace wsnas {

static_assert(std::endian::native == std::endian::little, "byte streams assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

// ByteWriter -------------------------------------------------------------------

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.insert(buf.end(), tmp, tmp + sizeof(T));
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) { put(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put(buf_, v); }
void ByteWriter::f32(float v) { put(buf_, v); }
void ByteWriter::f64(double v) { put(buf_, v); }
void ByteWriter::raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
void ByteWriter::seal() { u32(crc32(buf_)); }

// ByteReader -------------------------------------------------------------------

void ByteReader::need(std::size_t n, const char* field) const {
  if (remaining() < n) throw FormatError(what_ + ": truncated while reading " + field);
}

namespace {

template <typename T>
T get(std::span<const std::uint8_t> b, std::size_t& pos) {
  T v;
  std::memcpy(&v, b.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::uint8_t ByteReader::u8(const char* field) {
  need(1, field);
  return b_[pos_++];
}

std::uint32_t ByteReader::u32(const char* field) {
  need(4, field);
  return get<std::uint32_t>(b_, pos_);
}

std::uint64_t ByteReader::u64(const char* field) {
  need(8, field);
  return get<std::uint64_t>(b_, pos_);
}

float ByteReader::f32(const char* field) {
  need(4, field);
  return get<float>(b_, pos_);
}

double ByteReader::f64(const char* field) {
  need(8, field);
  return get<double>(b_, pos_);
}

std::string ByteReader::raw(std::size_t n, const char* field) {
  need(n, field);
  std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::span<const std::uint8_t> check_envelope(std::span<const std::uint8_t> bytes, std::string_view magic,
                                             std::uint8_t version, const std::string& what) {
  if (bytes.size() < magic.size() || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
    throw FormatError(what + ": bad magic (expected \"" + std::string(magic) + "\")");
  if (bytes.size() < magic.size() + 1) throw FormatError(what + ": truncated while reading version");
  const std::uint8_t v = bytes[magic.size()];
  if (v != version)
    throw FormatError(what + ": unsupported version " + std::to_string(v) + " (expected " + std::to_string(version) +
                      ")");
  if (bytes.size() < magic.size() + 1 + 4) throw FormatError(what + ": checksum mismatch (file too short)");
  const auto payload = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + payload.size(), 4);
  if (crc32(payload) != stored) throw FormatError(what + ": checksum mismatch");
  return payload;
}

// Files ------------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return {b.begin(), b.end()};
}

// Weights ----------------------------------------------------------------------

std::vector<std::uint8_t> encode_weights(const WeightMap& weights) {
  ByteWriter w;
  w.raw("WSNW");
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, t] : weights) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    for (diff::Index i = 0; i < t.numel(); ++i) w.f64(t.value()[i]);
  }
  w.seal();
  return w.bytes();
}

WeightMap decode_weights(std::span<const std::uint8_t> bytes) {
  const auto payload = check_envelope(bytes, "WSNW", 1, "weights");
  ByteReader r(payload.subspan(5), "weights");
  const std::uint32_t count = r.u32("tensor count");
  WeightMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.raw(r.u32("name length"), "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("weights: tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<diff::Index>(r.u64("extent")));
    const diff::Index n = diff::numel(shape);
    if (static_cast<std::size_t>(n) * 8 > r.remaining())
      throw FormatError("weights: truncated while reading values of '" + name + "'");
    diff::Vec v(n);
    for (diff::Index i = 0; i < n; ++i) v[i] = r.f64("value");
    out.emplace(name, Tensor::from(std::move(shape), std::move(v), true));
  }
  if (r.remaining() != 0) throw FormatError("weights: trailing bytes after last tensor");
  return out;
}

void save_weights(const std::filesystem::path& path, const WeightMap& weights) {
  write_file(path, encode_weights(weights));
}

WeightMap load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }

// JSON -------------------------------------------------------------------------

Json genes_to_json(const CellGenes& genes) {
  Json j = Json::array();
  for (const auto& e : genes) j.push_back(Json::array({e.pred, std::string(op_name(e.op))}));
  return j;
}

CellGenes genes_from_json(const Json& j) {
  CellGenes out;
  for (const auto& e : j) out.push_back({e.at(0).get<int>(), op_from_name(e.at(1).get<std::string>())});
  return out;
}

Json genotype_to_json(const Genotype& g) {
  return Json{{"normal", genes_to_json(g.normal)}, {"reduce", genes_to_json(g.reduce)}, {"concat", g.concat}};
}

Genotype genotype_from_json(const Json& j) {
  Genotype g;
  g.normal = genes_from_json(j.at("normal"));
  g.reduce = genes_from_json(j.at("reduce"));
  g.concat = j.at("concat").get<std::vector<int>>();
  g.steps = static_cast<int>(g.normal.size() / 2);
  if (g.normal.size() != 2 * static_cast<size_t>(g.steps) || g.reduce.size() != g.normal.size())
    throw FormatError("genotype: normal and reduce must list two edges per node");
  return g;
}

Json cell_spec_to_json(const CellSpec& spec) {
  Json edges = Json::array();
  for (const auto& ops : spec.edges()) {
    Json names = Json::array();
    for (Op op : ops) names.push_back(std::string(op_name(op)));
    edges.push_back(names);
  }
  return Json{{"kind", std::string(cell_kind_name(spec.kind()))}, {"steps", spec.steps()}, {"edges", edges}};
}

CellSpec cell_spec_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "normal" && kind != "reduce") throw FormatError("cell spec: unknown kind '" + kind + "'");
  std::vector<std::vector<Op>> edges;
  for (const auto& e : j.at("edges")) {
    std::vector<Op> ops;
    for (const auto& n : e) ops.push_back(op_from_name(n.get<std::string>()));
    edges.push_back(ops);
  }
  return CellSpec(kind == "normal" ? CellKind::Normal : CellKind::Reduction, j.at("steps").get<int>(), edges);
}

Json alpha_to_json(const Alpha& a) {
  Json out = Json::array();
  for (const auto& e : a) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      if (std::isfinite(e[k]))
        row.push_back(e[k]);
      else
        row.push_back(e[k] > 0 ? "inf" : "-inf");
    }
    out.push_back(row);
  }
  return out;
}

Alpha alpha_from_json(const Json& j) {
  Alpha a;
  for (const auto& row : j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
    for (size_t k = 0; k < row.size(); ++k) {
      const auto& x = row[k];
      if (x.is_string())
        v[static_cast<Eigen::Index>(k)] =
            (x.get<std::string>() == "-inf" ? -1.0 : 1.0) * std::numeric_limits<double>::infinity();
      else
        v[static_cast<Eigen::Index>(k)] = x.get<double>();
    }
    a.push_back(v);
  }
  return a;
}

Json network_spec_to_json(const NetworkSpec& ns) {
  return Json{{"num_cells", ns.num_cells},
              {"init_channels", ns.init_channels},
              {"in_channels", ns.in_channels},
              {"num_classes", ns.num_classes},
              {"place_reductions", ns.place_reductions}};
}

NetworkSpec network_spec_from_json(const Json& j) {
  NetworkSpec ns;
  ns.num_cells = j.at("num_cells").get<int>();
  ns.init_channels = j.at("init_channels").get<int>();
  ns.in_channels = j.at("in_channels").get<int>();
  ns.num_classes = j.at("num_classes").get<int>();
  ns.place_reductions = j.value("place_reductions", true);
  ns.validate();
  return ns;
}

}  // namespace wsnas
