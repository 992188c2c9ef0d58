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

// Output handling shared by the wsnas subcommands: non-overwriting paths,
// provenance sidecars, and the directory lock.

#include "wsnas/io.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsnas::cli {

/// Bad flags or flag combinations; exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `path` with its extension replaced by `suffix` (".hat.json" etc).
std::filesystem::path sibling(const std::filesystem::path& path, const std::string& suffix);

/// Where to write `path` and its siblings. With `force` the path is used as
/// given. Otherwise the first of path, stem-01.ext, stem-02.ext, ... whose
/// file and siblings (and their provenance sidecars) are all absent.
std::filesystem::path resolve_output(const std::filesystem::path& path, bool force,
                                     const std::vector<std::string>& sibling_suffixes = {});

std::filesystem::path provenance_path(const std::filesystem::path& output);

/// {"command", "argv", "seed", "inputs": [{"path", "crc32", "provenance"}]}.
/// Each input carries its own sidecar, so the chain reaches back to the
/// generated tasks.
Json provenance(const std::vector<std::string>& argv, std::optional<std::uint64_t> seed,
                const std::vector<std::filesystem::path>& inputs);
void write_provenance(const std::filesystem::path& output, const Json& prov);

/// Exclusive advisory lock on <dir>/.wsnas.lock for the process lifetime.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

Json error_json(const std::string& kind, const std::string& message, int exit_code);

}  // namespace wsnas::cli
