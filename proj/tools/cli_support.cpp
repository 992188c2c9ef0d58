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
#include "cli_support.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

namespace wsnas::cli {

namespace fs = std::filesystem;

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

fs::path provenance_path(const fs::path& output) {
  fs::path p = output;
  p += ".prov.json";
  return p;
}

namespace {

bool all_free(const fs::path& p, const std::vector<std::string>& suffixes) {
  if (fs::exists(p) || fs::exists(provenance_path(p))) return false;
  for (const auto& s : suffixes)
    if (fs::exists(sibling(p, s)) || fs::exists(provenance_path(sibling(p, s)))) return false;
  return true;
}

}  // namespace

fs::path resolve_output(const fs::path& path, bool force, const std::vector<std::string>& sibling_suffixes) {
  if (path.empty()) throw UsageError("empty output path");
  if (force || all_free(path, sibling_suffixes)) return path;
  const fs::path dir = path.parent_path();
  const std::string stem = path.stem().string(), ext = path.extension().string();
  for (int k = 1; k < 100; ++k) {
    char num[8];
    std::snprintf(num, sizeof num, "-%02d", k);
    const fs::path candidate = dir / (stem + num + ext);
    if (all_free(candidate, sibling_suffixes)) return candidate;
  }
  throw std::runtime_error("no free output name for '" + path.string() + "' (tried -01 to -99)");
}

Json provenance(const std::vector<std::string>& argv, std::optional<std::uint64_t> seed,
                const std::vector<fs::path>& inputs) {
  std::string line;
  for (const auto& a : argv) line += (line.empty() ? "" : " ") + a;
  Json in = Json::array();
  for (const auto& p : inputs) {
    const auto bytes = read_file(p);
    Json entry{{"path", p.string()}, {"crc32", crc32(bytes)}, {"provenance", nullptr}};
    if (fs::exists(provenance_path(p))) entry["provenance"] = Json::parse(read_text(provenance_path(p)));
    in.push_back(std::move(entry));
  }
  return Json{{"command", line},
              {"argv", argv},
              {"seed", seed ? Json(*seed) : Json(nullptr)},
              {"inputs", std::move(in)}};
}

void write_provenance(const fs::path& output, const Json& prov) {
  write_text(provenance_path(output), prov.dump(2) + "\n");
}

DirLock::DirLock(const fs::path& dir) {
  const fs::path d = dir.empty() ? fs::path(".") : dir;
  fs::create_directories(d);
  const fs::path lock = d / ".wsnas.lock";
  fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open lock file '" + lock.string() + "': " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw std::runtime_error("directory '" + d.string() + "' is locked by another wsnas process");
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

Json error_json(const std::string& kind, const std::string& message, int exit_code) {
  return Json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", exit_code}}}};
}

}  // namespace wsnas::cli
