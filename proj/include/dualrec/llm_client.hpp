#pragma once

/// @file llm_client.hpp
/// @brief Chat-completion client: remote OpenRouter-compatible endpoint with
/// retries, a content-addressed response cache, and a deterministic mock.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dualrec/dataset.hpp"
#include "dualrec/error.hpp"
#include "dualrec/random.hpp"

namespace dualrec {

using Seconds = std::chrono::duration<double>;

struct LlmRequest {
  std::string model_name;
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 512;
  Seconds timeout{60.0};

  void validate() const {
    if (prompt.empty()) throw ConfigError("LLM request: empty prompt");
    if (max_tokens <= 0) throw ConfigError("LLM request: max_tokens must be positive");
    if (!(temperature >= 0.0)) throw ConfigError("LLM request: temperature must be >= 0");
  }
};

enum class LlmProvider { remote, mock, cache };

inline std::string_view to_string(LlmProvider p) {
  switch (p) {
    case LlmProvider::remote: return "remote";
    case LlmProvider::mock: return "mock";
    case LlmProvider::cache: return "cache";
  }
  return "?";
}

struct LlmResponse {
  std::string text;
  Seconds latency{0.0};
  LlmProvider provider = LlmProvider::mock;
};

/// Cache key over (model, prompt, temperature).
inline std::uint64_t request_key(const LlmRequest& r) {
  char temp[32];
  std::snprintf(temp, sizeof temp, "%.17g", r.temperature);
  std::string material = r.model_name;
  material += '\0';
  material += r.prompt;
  material += '\0';
  material += temp;
  return fnv1a64(material);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Thread-safe completion cache, optionally mirrored to one JSON file per key.
/// Entries store the full request so a hash collision reads as a miss.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(*dir_);
  }

  std::optional<std::string> get(const LlmRequest& r) {
    const auto key = request_key(r);
    std::lock_guard lock(mu_);
    if (auto it = mem_.find(key); it != mem_.end()) {
      if (matches(it->second, r)) return it->second["text"].get<std::string>();
      return std::nullopt;
    }
    if (!dir_) return std::nullopt;
    std::ifstream in(file_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    auto entry = nlohmann::json::parse(in, nullptr, false);
    if (entry.is_discarded() || !matches(entry, r)) return std::nullopt;
    auto text = entry["text"].get<std::string>();
    mem_.emplace(key, std::move(entry));
    return text;
  }

  void put(const LlmRequest& r, const std::string& text) {
    const auto key = request_key(r);
    nlohmann::json entry = {{"model", r.model_name},
                            {"prompt", r.prompt},
                            {"temperature", r.temperature},
                            {"text", text}};
    std::lock_guard lock(mu_);
    if (dir_) {
      const auto path = file_for(key);
      const auto tmp = path.string() + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << entry.dump();
      }
      std::error_code ec;
      std::filesystem::rename(tmp, path, ec);
    }
    mem_[key] = std::move(entry);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return mem_.size();
  }

 private:
  static bool matches(const nlohmann::json& e, const LlmRequest& r) {
    return e.value("model", "") == r.model_name && e.value("prompt", "") == r.prompt &&
           e.value("temperature", -1.0) == r.temperature && e.contains("text");
  }
  std::filesystem::path file_for(std::uint64_t key) const { return *dir_ / (hex64(key) + ".json"); }

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, nlohmann::json> mem_;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual LlmResponse call(const LlmRequest& request) = 0;
};

/// Scripted completions keyed by prompt hash. Unscripted prompts fall back to
/// three catalog movies picked from the prompt hash, or an empty answer when
/// no catalog was supplied.
class MockLlm : public LlmBackend {
 public:
  MockLlm() = default;
  explicit MockLlm(std::vector<Movie> catalog) : catalog_(std::move(catalog)) {}

  void script(std::string_view prompt, std::string text) {
    std::lock_guard lock(mu_);
    scripted_[fnv1a64(prompt)] = std::move(text);
  }

  LlmResponse call(const LlmRequest& request) override {
    const auto key = fnv1a64(request.prompt);
    {
      std::lock_guard lock(mu_);
      if (auto it = scripted_.find(key); it != scripted_.end()) {
        return {it->second, Seconds{0.0}, LlmProvider::mock};
      }
    }
    return {fallback(key), Seconds{0.0}, LlmProvider::mock};
  }

 private:
  std::string fallback(std::uint64_t key) const {
    if (catalog_.empty()) return {};
    std::mt19937_64 rng(key);
    std::vector<std::size_t> picked;
    const std::size_t want = std::min<std::size_t>(3, catalog_.size());
    while (picked.size() < want) {
      const auto i = static_cast<std::size_t>(uniform_below(rng, catalog_.size()));
      if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
    }
    std::string out = "Here are some movies you might enjoy:\n";
    for (auto i : picked) {
      const auto& m = catalog_[i];
      out += "- " + title_with_year(m) + " (" + m.genres.join(", ") + ")\n";
    }
    return out;
  }

  std::vector<Movie> catalog_;
  std::mutex mu_;
  std::unordered_map<std::uint64_t, std::string> scripted_;
};

struct RemoteLlmOptions {
  std::string base_url = "https://openrouter.ai/api/v1";
  std::string api_key_env = "OPENROUTER_API_KEY";
  int max_attempts = 5;
  Seconds backoff_base{1.0};
  // Injected so tests can record the schedule instead of waiting it out.
  std::function<void(Seconds)> sleeper = [](Seconds s) { std::this_thread::sleep_for(s); };
};

namespace detail {

// "https://host:port/api/v1" -> {"https://host:port", "/api/v1"}
inline std::pair<std::string, std::string> split_base_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw ConfigError("base_url lacks a scheme: " + std::string(url));
  const auto path = url.find('/', scheme + 3);
  std::string host(url.substr(0, path));
  std::string prefix = path == std::string_view::npos ? "" : std::string(url.substr(path));
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {host, prefix};
}

inline std::string extract_completion(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("LLM response is not valid JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("LLM response lacks choices[0].message.content");
  }
}

}  // namespace detail

/// POSTs to <base_url>/chat/completions. HTTP 429, 5xx and connection
/// failures are retried with delays base, 2*base, 4*base, ...
class RemoteLlm : public LlmBackend {
 public:
  explicit RemoteLlm(RemoteLlmOptions opts = {}) : opts_(std::move(opts)) {
    const char* key = std::getenv(opts_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError("remote LLM provider needs the " + opts_.api_key_env +
                        " environment variable");
    }
    api_key_ = key;
    std::tie(host_, prefix_) = detail::split_base_url(opts_.base_url);
    if (opts_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  }

  LlmResponse call(const LlmRequest& request) override {
    const nlohmann::json body = {
        {"model", request.model_name},
        {"messages", {{{"role", "user"}, {"content", request.prompt}}}},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens}};
    const auto payload = body.dump();
    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
      httplib::Client client(host_);
      const auto t = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout);
      client.set_connection_timeout(t);
      client.set_read_timeout(t);
      client.set_write_timeout(t);
      const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
      auto res = client.Post(prefix_ + "/chat/completions", headers, payload, "application/json");
      if (res && res->status == 200) {
        return {detail::extract_completion(res->body),
                std::chrono::steady_clock::now() - start, LlmProvider::remote};
      }
      if (res && (res->status == 401 || res->status == 403)) {
        throw ConfigError("LLM endpoint rejected the credential (HTTP " +
                          std::to_string(res->status) + ")");
      }
      if (res && res->status != 429 && res->status < 500) {
        throw TransportError("LLM endpoint returned HTTP " + std::to_string(res->status));
      }
      last_error = res ? "HTTP " + std::to_string(res->status)
                       : "connection error: " + httplib::to_string(res.error());
      if (attempt < opts_.max_attempts) opts_.sleeper(opts_.backoff_base * (1 << (attempt - 1)));
    }
    throw TransportError("LLM request failed after " + std::to_string(opts_.max_attempts) +
                         " attempts (" + last_error + ")");
  }

 private:
  RemoteLlmOptions opts_;
  std::string api_key_;
  std::string host_;
  std::string prefix_;
};

/// One batch slot: a response or the exception that replaced it.
struct BatchItem {
  std::optional<LlmResponse> response;
  std::exception_ptr error;

  bool ok() const { return response.has_value(); }
  std::string error_message() const {
    if (!error) return {};
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      return e.what();
    } catch (...) {
      return "unknown error";
    }
  }
};

/// Front door for completions. Shareable across threads.
class LlmClient {
 public:
  LlmClient(std::shared_ptr<LlmBackend> backend,
            std::shared_ptr<ResponseCache> cache = std::make_shared<ResponseCache>())
      : backend_(std::move(backend)), cache_(std::move(cache)) {}

  LlmResponse complete(const LlmRequest& request) {
    request.validate();
    if (auto hit = cache_->get(request)) return {*hit, Seconds{0.0}, LlmProvider::cache};
    ++backend_calls_;
    auto response = backend_->call(request);
    cache_->put(request, response.text);
    return response;
  }

  /// Results in request order; at most `max_in_flight` calls run at once and a
  /// failing item never stops the rest.
  std::vector<BatchItem> batch_complete(const std::vector<LlmRequest>& requests,
                                        int max_in_flight) {
    if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
    std::vector<BatchItem> out(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (auto i = next++; i < requests.size(); i = next++) {
        try {
          out[i].response = complete(requests[i]);
        } catch (...) {
          out[i].error = std::current_exception();
        }
      }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), requests.size());
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    return out;
  }

  std::size_t backend_calls() const { return backend_calls_.load(); }

 private:
  std::shared_ptr<LlmBackend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  std::atomic<std::size_t> backend_calls_{0};
};

}  // namespace dualrec
