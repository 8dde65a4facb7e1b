#pragma once

// JSON API over the store, the models and the template catalog. ServiceCore
// produces the exact response bytes; the HTTP server and the CLI only carry
// them, so all three surfaces agree byte for byte.

#include "trialsum/checkpoint.hpp"
#include "trialsum/decoding.hpp"
#include "trialsum/provenance.hpp"
#include "trialsum/template_engine.hpp"
#include "trialsum/trial_store.hpp"

#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace trialsum {

inline constexpr std::string_view kWarning =
    "Research prototype. Automatically generated summaries can be wrong or misleading and must not be used to "
    "inform medical decisions.";

struct Response {
  int status = 200;
  std::string body;  // JSON
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

struct ServiceConfig {
  std::size_t cache_size = 128;
  DecodeConfig decode;
  InfillConfig infill;
};

/// Fixed-capacity least-recently-used map; safe for concurrent use.
template <typename Value>
class LruCache {
 public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

  void put(const std::string& key, std::shared_ptr<const Value> value) {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(key); it != index_.end()) {
      order_.erase(it->second);
      index_.erase(it);
    }
    if (capacity_ == 0) return;
    order_.emplace_front(key, std::move(value));
    index_[key] = order_.begin();
    while (order_.size() > capacity_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
  }

  std::shared_ptr<const Value> get(const std::string& key) {
    std::lock_guard lock(mu_);
    auto it = index_.find(key);
    if (it == index_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return order_.size();
  }

 private:
  using Entry = std::pair<std::string, std::shared_ptr<const Value>>;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<Entry> order_;
  std::unordered_map<std::string, typename std::list<Entry>::iterator> index_;
};

class ServiceCore {
 public:
  /// Either model may be absent; requests for it then fail with 400.
  ServiceCore(TrialStore store, std::shared_ptr<const Checkpoint> multihead, std::shared_ptr<const Checkpoint> baseline,
              std::vector<Template> catalog, ServiceConfig config = {});

  /// GET /search. Terms are comma separated; `k` defaults to 5.
  Response search(const std::multimap<std::string, std::string>& params) const;
  /// POST /summarize
  Response summarize(std::string_view body);
  /// POST /infill
  Response infill(std::string_view body);
  /// GET /templates
  Response templates() const;
  /// GET /trials/{id}
  Response trial(std::string_view id) const;
  /// POST /provenance
  Response provenance(std::string_view body);

  /// Routes a request by method and path (used by the HTTP server).
  Response handle(std::string_view method, std::string_view path,
                  const std::multimap<std::string, std::string>& params, std::string_view body);

  const TrialStore& store() const { return store_; }
  std::size_t cache_entries() const { return cache_.size(); }

 private:
  struct Cached;
  std::shared_ptr<const Checkpoint> model_for(Architecture a) const;
  std::vector<TrialRecord> resolve_records(const nlohmann::json& request) const;

  TrialStore store_;
  std::shared_ptr<const Checkpoint> multihead_;
  std::shared_ptr<const Checkpoint> baseline_;
  std::vector<Template> catalog_;
  ServiceConfig config_;
  LruCache<Cached> cache_;
};

/// HTTP front end: every request is passed to ServiceCore::handle.
class HttpServer {
 public:
  explicit HttpServer(ServiceCore& core, const std::string& static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trialsum
