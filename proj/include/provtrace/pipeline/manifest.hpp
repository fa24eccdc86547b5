#pragma once

// Run manifest: config snapshot, tool version, and for every stage the cache
// key it ran under plus the SHA-256 of each artifact it wrote. Paths are
// relative to the output directory and nothing time-dependent is recorded, so
// two runs with the same config and seed produce byte-identical manifests.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "provtrace/error.hpp"

#ifndef PROVTRACE_VERSION
#define PROVTRACE_VERSION "0.0.0"
#endif

namespace provtrace::pipeline {

namespace fs = std::filesystem;

inline constexpr std::string_view tool_version = PROVTRACE_VERSION;

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw Error("SHA-256 initialisation failed");
  }

  Sha256& update(std::string_view bytes) {
    if (EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()) != 1)
      throw Error("SHA-256 update failed");
    return *this;
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest.data(), &len) != 1)
      throw Error("SHA-256 finalisation failed");
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", digest[i]);
      out += buf;
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view bytes) { return Sha256().update(bytes).hex(); }

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Writes through a temporary file and renames, so readers never see a
/// partial artifact.
inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

/// Cache key of a stage: its name, the checksums of its inputs and the
/// settings that influence it.
inline std::string stage_key(std::string_view stage, const nlohmann::json& inputs,
                             const nlohmann::json& settings) {
  return sha256_hex(nlohmann::json{{"stage", stage}, {"inputs", inputs}, {"settings", settings}}.dump());
}

struct StageRecord {
  std::string key;
  std::map<std::string, std::string> artifacts;  // relative path -> sha256
};

/// Thread-safe manifest of one output directory.
class Manifest {
 public:
  explicit Manifest(fs::path out_dir) : dir_(std::move(out_dir)) {
    const auto path = dir_ / "manifest.json";
    if (!fs::exists(path)) return;
    try {
      doc_ = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception&) {
      doc_ = nlohmann::json::object();  // unreadable: rebuild everything
    }
  }

  const fs::path& dir() const noexcept { return dir_; }

  void set_config(const nlohmann::json& config, std::string_view hash) {
    std::lock_guard lock(mu_);
    doc_["tool"] = "provtrace";
    doc_["version"] = tool_version;
    doc_["config"] = config;
    doc_["config_hash"] = hash;
  }

  /// True when `stage` last ran under `key` and every artifact it wrote is
  /// still on disk with the recorded checksum.
  bool fresh(const std::string& stage, const std::string& key) const {
    std::lock_guard lock(mu_);
    const auto it = doc_.find("stages");
    if (it == doc_.end() || !it->contains(stage)) return false;
    const auto& rec = (*it)[stage];
    if (rec.value("key", "") != key) return false;
    for (const auto& [rel, sum] : rec.at("artifacts").items()) {
      const auto path = dir_ / rel;
      if (!fs::exists(path) || sha256_file(path) != sum.get<std::string>()) return false;
    }
    return true;
  }

  /// Records `stage`, hashing each listed artifact.
  void record(const std::string& stage, const std::string& key,
              const std::vector<std::string>& artifacts) {
    StageRecord rec{key, {}};
    for (const auto& rel : artifacts) rec.artifacts[rel] = sha256_file(dir_ / rel);
    std::lock_guard lock(mu_);
    doc_["stages"][stage] = {{"key", rec.key}, {"artifacts", rec.artifacts}};
  }

  std::string artifact_sum(const std::string& stage, const std::string& rel) const {
    std::lock_guard lock(mu_);
    return doc_.at("stages").at(stage).at("artifacts").at(rel).get<std::string>();
  }

  void set(const std::string& key, nlohmann::json value) {
    std::lock_guard lock(mu_);
    doc_[key] = std::move(value);
  }

  nlohmann::json document() const {
    std::lock_guard lock(mu_);
    return doc_;
  }

  void save() const {
    std::string text;
    {
      std::lock_guard lock(mu_);
      text = doc_.dump(2) + "\n";
    }
    write_file(dir_ / "manifest.json", text);
  }

 private:
  fs::path dir_;
  nlohmann::json doc_ = nlohmann::json::object();
  mutable std::mutex mu_;
};

}  // namespace provtrace::pipeline
