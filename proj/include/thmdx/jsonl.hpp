#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "thmdx/error.hpp"

namespace thmdx::jsonl {

using json = nlohmann::json;

/// Calls `fn` for every well-formed line. A malformed final line (a write
/// interrupted mid-line) is ignored; malformed interior lines throw.
inline void for_each(const std::filesystem::path& path, const std::function<void(const json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::string pending_error;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!pending_error.empty()) throw Error(ErrorCode::IoError, pending_error);
    if (line.empty() || line == "\r") continue;
    json value = json::parse(line, nullptr, false);
    if (value.is_discarded()) {
      pending_error = path.string() + ":" + std::to_string(lineno) + ": malformed JSON line";
      continue;
    }
    fn(value);
  }
}

inline std::vector<json> read_all(const std::filesystem::path& path) {
  std::vector<json> out;
  for_each(path, [&](const json& v) { out.push_back(v); });
  return out;
}

/// Set of `key` values already present in a sidecar file (empty when missing).
inline std::unordered_set<std::string> existing_keys(const std::filesystem::path& path,
                                                     const std::string& key) {
  std::unordered_set<std::string> keys;
  if (!std::filesystem::exists(path)) return keys;
  for_each(path, [&](const json& v) {
    if (v.contains(key) && v[key].is_string()) keys.insert(v[key].get<std::string>());
  });
  return keys;
}

inline void write_all(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

/// Append-only writer. On open, a trailing partial line left by an
/// interrupted run is cut off so new lines start on a clean boundary.
class Appender {
 public:
  explicit Appender(std::filesystem::path path) : path_(std::move(path)) {
    repair_tail();
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw Error(ErrorCode::IoError, "cannot append to " + path_.string());
  }

  void append(const json& row) {
    std::lock_guard lock(mu_);
    out_ << row.dump() << '\n';
    out_.flush();
    if (!out_) throw Error(ErrorCode::IoError, "append failed: " + path_.string());
  }

 private:
  void repair_tail() {
    namespace fs = std::filesystem;
    if (!fs::exists(path_)) return;
    auto size = fs::file_size(path_);
    if (size == 0) return;
    std::ifstream in(path_, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.back() == '\n') return;
    auto last_nl = data.rfind('\n');
    fs::resize_file(path_, last_nl == std::string::npos ? 0 : last_nl + 1);
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mu_;
};

}  // namespace thmdx::jsonl
