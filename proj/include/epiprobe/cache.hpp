#pragma once

#include <json.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include "completion.hpp"
#include "error.hpp"
#include "util.hpp"

namespace epiprobe {

struct CacheCounters {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t corrupt = 0;
};

struct CacheDirStats {
  std::uint64_t entries = 0;
  std::uint64_t bytes = 0;
};

inline std::filesystem::path cache_entry_path(const std::filesystem::path& dir, const std::string& digest) {
  return dir / digest.substr(0, 2) / (digest + ".json");
}

inline CacheDirStats cache_dir_stats(const std::filesystem::path& dir) {
  CacheDirStats s;
  if (!std::filesystem::exists(dir)) return s;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    ++s.entries;
    s.bytes += e.file_size();
  }
  return s;
}

// Removes every cache entry under `dir`; returns the number removed.
inline std::uint64_t clear_cache_dir(const std::filesystem::path& dir) {
  const auto n = cache_dir_stats(dir).entries;
  if (std::filesystem::exists(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir)) std::filesystem::remove_all(e.path());
  return n;
}

// Content-addressed completion cache in front of another backend.
class CachedBackend final : public Backend {
 public:
  CachedBackend(std::shared_ptr<Backend> inner, std::filesystem::path dir) : inner_(std::move(inner)), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  Completion complete(const CompletionRequest& request) override {
    const auto material = request_key_material(request);
    const auto digest = sha256_hex(material);
    const auto path = cache_entry_path(dir_, digest);
    std::lock_guard lock(stripes_[fnv1a64(digest) % stripes_.size()]);

    if (std::filesystem::exists(path)) {
      try {
        auto entry = nlohmann::json::parse(read_file(path));
        if (entry.at("request").dump() != material) throw ParseError("request mismatch");
        auto c = completion_from_json(entry.at("completion"));
        hits_.fetch_add(1);
        return c;
      } catch (const std::exception& e) {
        corrupt_.fetch_add(1);
        warn("discarding corrupt cache entry " + path.string() + ": " + e.what());
        std::error_code ec;
        std::filesystem::remove(path, ec);
      }
    }

    misses_.fetch_add(1);
    auto c = inner_->complete(request);
    nlohmann::json entry = {{"request", nlohmann::json::parse(material)}, {"completion", to_json(c)}};
    write_file_atomic(path, entry.dump());
    return c;
  }

  std::vector<TokenStep> score_text(std::string_view context, std::string_view continuation) override {
    return inner_->score_text(context, continuation);
  }

  bool supports_scoring() const override { return inner_->supports_scoring(); }
  std::string model_id() const override { return inner_->model_id(); }
  std::size_t max_concurrency() const override { return inner_->max_concurrency(); }

  CacheCounters counters() const { return {hits_.load(), misses_.load(), corrupt_.load()}; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::shared_ptr<Backend> inner_;
  std::filesystem::path dir_;
  std::array<std::mutex, 64> stripes_;
  std::atomic<std::uint64_t> hits_{0}, misses_{0}, corrupt_{0};
};

}  // namespace epiprobe
