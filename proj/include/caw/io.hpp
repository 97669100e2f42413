#pragma once

// Artifact persistence: atomic file writes, deterministic CSV formatting,
// config hashing and the per-run manifest.

#include <caw/core.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace caw {

inline constexpr const char* kVersion = "caw 0.1.0";

inline std::string fnv1a64_hex(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Shortest round-trip decimal for a double; stable across runs.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CawError("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, p);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) body_ += ',';
      body_ += header[i];
    }
    body_ += '\n';
    cols_ = header.size();
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != cols_) throw CawError("csv: column count mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) body_ += ',';
      body_ += cells[i];
    }
    body_ += '\n';
  }

  const std::string& str() const { return body_; }
  void save(const std::string& path) const { atomic_write_file(path, body_); }

 private:
  std::string body_;
  std::size_t cols_ = 0;
};

struct Manifest {
  std::string subcommand;
  std::string config_hash;
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;
  nlohmann::json witness;  // machine-readable failure cause, null on success
  int exit_code = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = kVersion;
    j["subcommand"] = subcommand;
    j["config_hash"] = config_hash;
    j["outputs"] = outputs;
    j["wall_time_s"] = wall_time_s;
    j["witness"] = witness.is_null() ? nlohmann::json(nullptr) : witness;
    j["exit_code"] = exit_code;
    return j;
  }

  void save(const std::string& path) const { atomic_write_file(path, to_json().dump(2) + "\n"); }
};

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace caw
