#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "aap/canonical.hpp"
#include "aap/common.hpp"
#include "aap/config.hpp"

namespace aap {

// File-backed store. Current state lives in canonical JSON files (one
// directory per record family, systems grouped per deployment type); every
// mutation is also appended to an NDJSON log, so the log holds all record
// versions and the files are the compacted index. Air-gapped material lives
// under sealed/ with owner-only permissions and its own log; nothing in the
// public tree may reference sealed content by value.
class Store {
 public:
  explicit Store(std::filesystem::path root) : root_(std::move(root)) {
    namespace fs = std::filesystem;
    for (const char* d : {"deployment_types", "ontologies", "templates", "systems", "folds",
                          "reports", "transcripts", "findings", "log"}) {
      fs::create_directories(root_ / d);
    }
    const fs::path sealed = root_ / "sealed";
    for (const char* d : {"folds", "transcripts", "reports", "log"}) {
      fs::create_directories(sealed / d);
    }
    fs::permissions(sealed, fs::perms::owner_all, fs::perm_options::replace);
    if (!fs::exists(root_ / "config.json")) {
      write_canonical_file(root_ / "config.json", Config{}.to_json());
    }
  }

  const std::filesystem::path& root() const { return root_; }

  Config config() const { return Config::load_or_default(root_ / "config.json"); }

  void put_json(const std::string& rel, const Json& j) {
    std::lock_guard<std::mutex> lk(write_mutex_);
    write_canonical_file(root_ / rel, j);
    append_log_line(root_ / "log" / "registry.ndjson",
                    Json{{"op", "put"}, {"path", rel}, {"record", j}});
  }

  std::optional<Json> get_json(const std::string& rel) const {
    const auto p = root_ / rel;
    if (!std::filesystem::exists(p)) return std::nullopt;
    return read_json_file(p);
  }

  void put_sealed(const std::string& rel, const Json& j) {
    std::lock_guard<std::mutex> lk(write_mutex_);
    write_canonical_file(root_ / "sealed" / rel, j);
    append_log_line(root_ / "sealed" / "log" / "registry.ndjson",
                    Json{{"op", "put"}, {"path", rel}, {"record", j}});
  }

  std::optional<Json> get_sealed(const std::string& rel) const {
    const auto p = root_ / "sealed" / rel;
    if (!std::filesystem::exists(p)) return std::nullopt;
    return read_json_file(p);
  }

  // Sorted regular-file names directly under a public directory.
  std::vector<std::string> list_dir(const std::string& rel) const {
    return list_under(root_ / rel);
  }

  std::vector<std::string> list_sealed_dir(const std::string& rel) const {
    return list_under(root_ / "sealed" / rel);
  }

  // Subdirectory names (used for the per-deployment-type system layout).
  std::vector<std::string> list_subdirs(const std::string& rel) const {
    std::vector<std::string> out;
    const auto p = root_ / rel;
    if (!std::filesystem::exists(p)) return out;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (e.is_directory()) out.push_back(e.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Scans every byte of the public tree (sealed/ excluded) for the given
  // needles; returns "file: needle#i" hits. The card-confidentiality check.
  std::vector<std::string> scan_public_for(const std::vector<std::string>& needles) const {
    std::vector<std::string> hits;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root_)) {
      if (!e.is_regular_file()) continue;
      const auto rel = std::filesystem::relative(e.path(), root_).string();
      if (rel.rfind("sealed", 0) == 0 || rel == ".lock") continue;
      const std::string body = read_text_file(e.path());
      for (std::size_t i = 0; i < needles.size(); ++i) {
        if (!needles[i].empty() && body.find(needles[i]) != std::string::npos) {
          hits.push_back(rel + ": needle#" + std::to_string(i));
        }
      }
    }
    return hits;
  }

  // Cross-process writer exclusion for CLI invocations.
  class FileLock {
   public:
    explicit FileLock(const std::filesystem::path& p) {
      fd_ = ::open(p.c_str(), O_CREAT | O_RDWR, 0644);
      if (fd_ < 0) throw Error("io", "cannot open lock file " + p.string());
      if (::flock(fd_, LOCK_EX) != 0) {
        ::close(fd_);
        throw Error("io", "cannot lock " + p.string());
      }
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;
    ~FileLock() {
      if (fd_ >= 0) ::close(fd_);
    }

   private:
    int fd_ = -1;
  };

  FileLock exclusive_lock() const { return FileLock(root_ / ".lock"); }

 private:
  static void append_log_line(const std::filesystem::path& p, const Json& j) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::app);
    if (!out) throw Error("io", "cannot append to " + p.string());
    out << canonical_line(j);
  }

  std::vector<std::string> list_under(const std::filesystem::path& p) const {
    std::vector<std::string> out;
    if (!std::filesystem::exists(p)) return out;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (e.is_regular_file()) out.push_back(e.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::filesystem::path root_;
  mutable std::mutex write_mutex_;
};

}  // namespace aap
