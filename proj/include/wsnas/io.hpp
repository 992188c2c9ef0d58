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

// Binary and JSON persistence: CRC32-checked little-endian byte streams,
// weight maps, genotypes, search spaces and architecture logits.

#include "wsnas/cells.hpp"
#include "wsnas/network.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsnas {

using Json = nlohmann::json;

/// Raised on malformed or corrupted files; the message names the file part.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::string_view s);
  /// Appends CRC32 of everything written so far.
  void seal();
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  /// `what` prefixes error messages (e.g. "bundle").
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  std::uint8_t u8(const char* field);
  std::uint32_t u32(const char* field);
  std::uint64_t u64(const char* field);
  float f32(const char* field);
  double f64(const char* field);
  std::string raw(std::size_t n, const char* field);
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const;
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Verifies the magic, then the version byte, then the trailing CRC32 and
/// returns the payload without the checksum.
std::span<const std::uint8_t> check_envelope(std::span<const std::uint8_t> bytes, std::string_view magic,
                                             std::uint8_t version, const std::string& what);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Weights: "WSNW", u8 version 1, u32 count, then per tensor u32 name length,
// name bytes, u32 rank, u64 extents, f64 values; CRC32 trailer.
std::vector<std::uint8_t> encode_weights(const WeightMap& weights);
WeightMap decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::filesystem::path& path, const WeightMap& weights);
WeightMap load_weights(const std::filesystem::path& path);

Json genes_to_json(const CellGenes& genes);
CellGenes genes_from_json(const Json& j);
/// {"normal": [[pred, op], ...], "reduce": [...], "concat": [2, 3, 4, 5]}
Json genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const Json& j);

Json cell_spec_to_json(const CellSpec& spec);
CellSpec cell_spec_from_json(const Json& j);
Json alpha_to_json(const Alpha& a);
Alpha alpha_from_json(const Json& j);
Json network_spec_to_json(const NetworkSpec& ns);
NetworkSpec network_spec_from_json(const Json& j);

}  // namespace wsnas
