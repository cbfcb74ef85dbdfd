#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "aap/common.hpp"

namespace aap {

// Canonical JSON: sorted keys (nlohmann objects are std::map), UTF-8,
// shortest round-trip number form, single LF-terminated line. Everything
// persisted or hashed goes through here so digests stay stable.
inline std::string canonical_dump(const Json& j) { return j.dump(); }

inline std::string canonical_line(const Json& j) { return j.dump() + "\n"; }

inline void write_text_file(const std::filesystem::path& p, const std::string& body) {
  std::filesystem::create_directories(p.parent_path());
  const std::filesystem::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + tmp.string());
    out << body;
  }
  std::filesystem::rename(tmp, p);
}

inline void write_canonical_file(const std::filesystem::path& p, const Json& j) {
  write_text_file(p, canonical_line(j));
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("io", "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json_file(const std::filesystem::path& p) {
  const std::string body = read_text_file(p);
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error("bad_json", "invalid JSON in " + p.string());
  return j;
}

}  // namespace aap
