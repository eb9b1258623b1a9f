#pragma once

/// @file config.hpp
/// @brief Run configuration: one JSON file plus command-line overrides.
/// Relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "dualrec/dataset.hpp"
#include "dualrec/error.hpp"
#include "dualrec/eval.hpp"
#include "dualrec/lstm.hpp"
#include "dualrec/random.hpp"

namespace dualrec {

struct LlmSettings {
  std::string provider = "mock";  // mock | remote
  std::string base_url = "https://openrouter.ai/api/v1";
  std::string model = "mistralai/mistral-7b-instruct";
  double temperature = 0.0;
  int max_tokens = 512;
  int max_in_flight = 4;
  int max_attempts = 5;
  double timeout_s = 60.0;
  std::string api_key_env = "OPENROUTER_API_KEY";
  std::string cache_dir;  // empty: <output_dir>/llm_cache for remote, memory only for mock
};

struct EmbeddingSettings {
  std::string provider = "mock";  // mock | remote
  std::string url;
};

struct EvalSettings {
  EvalMode mode = EvalMode::strict;
  bool rerank = true;
  int max_users = 0;  // 0 = every eligible test user
  int sknn_neighbors = 100;
};

/// Every random stream in a run, each derived from the top-level seed.
struct Seeds {
  std::uint64_t base = 0;
  std::uint64_t split = 0;
  std::uint64_t lstm = 0;
  std::uint64_t finetune = 0;
  std::uint64_t embedding = 0;

  static Seeds from(std::uint64_t base) {
    return {base, derive_seed(base, "split"), derive_seed(base, "lstm"),
            derive_seed(base, "finetune"), derive_seed(base, "embedding")};
  }
  std::string describe() const {
    return "seed=" + std::to_string(base) + " split_seed=" + std::to_string(split) +
           " lstm_seed=" + std::to_string(lstm) + " finetune_seed=" + std::to_string(finetune) +
           " embedding_seed=" + std::to_string(embedding);
  }
};

struct RunConfig {
  std::filesystem::path ratings_path;
  std::filesystem::path movies_path;
  std::filesystem::path output_dir = "dualrec_out";
  int top_k_movies = 1000;
  SplitRatios split;
  int window_stride = 1;
  LstmConfig lstm;  // classes and vocab_size are set from the catalog at train time
  LlmSettings llm;
  EmbeddingSettings embedding;
  EvalSettings eval;
  bool finetune_genre_annotated = false;
  Seeds seeds = Seeds::from(0);

  std::filesystem::path artifact(std::string_view name) const { return output_dir / name; }

  void validate() const {
    if (top_k_movies <= 0) throw ConfigError("top_k_movies must be positive");
    if (window_stride <= 0) throw ConfigError("window_stride must be positive");
    const double total = split.train + split.val + split.test;
    if (split.train <= 0 || split.val < 0 || split.test <= 0 || std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("split ratios must be non-negative, with train and test > 0, summing to 1");
    }
    if (llm.provider != "mock" && llm.provider != "remote") {
      throw ConfigError("llm.provider must be mock or remote");
    }
    if (embedding.provider != "mock" && embedding.provider != "remote") {
      throw ConfigError("embedding.provider must be mock or remote");
    }
    if (embedding.provider == "remote" && embedding.url.empty()) {
      throw ConfigError("embedding.url is required for the remote embedding provider");
    }
    if (llm.max_in_flight < 1) throw ConfigError("llm.max_in_flight must be >= 1");
    if (llm.max_tokens < 1) throw ConfigError("llm.max_tokens must be >= 1");
    if (!(llm.temperature >= 0)) throw ConfigError("llm.temperature must be >= 0");
    if (eval.max_users < 0) throw ConfigError("eval.max_users must be >= 0");
    if (eval.sknn_neighbors < 1) throw ConfigError("eval.sknn_neighbors must be >= 1");
    try {
      LstmConfig probe = lstm;
      probe.classes = std::max(probe.classes, 1);
      probe.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  void check_inputs_exist() const {
    for (const auto& p : {ratings_path, movies_path}) {
      if (p.empty()) throw ConfigError("data.ratings and data.movies must be set");
      if (!std::filesystem::exists(p)) throw ConfigError("input file not found: " + p.string());
    }
  }
};

namespace detail {

// Reads known keys of one JSON object into fields; anything else is a typo.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }
  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key " + where_ + "." + k);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Parses a config document. `base_dir` anchors relative paths.
/// A `seed_override` (the --seed flag) replaces the file's seed.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
  RunConfig c;
  detail::ObjectReader root(j, "config");
  const bool has_seed = j.contains("seed");
  std::uint64_t seed = 0;
  root.get("seed", seed);
  if (seed_override) seed = *seed_override;
  if (!has_seed && !seed_override) throw ConfigError("config must set an explicit top-level \"seed\"");
  c.seeds = Seeds::from(seed);
  std::string output_dir = c.output_dir.string();
  root.get("output_dir", output_dir);
  c.output_dir = output_dir;
  root.get("top_k_movies", c.top_k_movies);
  root.get("window_stride", c.window_stride);

  if (auto d = root.child("data")) {
    detail::ObjectReader r(*d, "data");
    std::string ratings, movies;
    r.get("ratings", ratings);
    r.get("movies", movies);
    r.finish();
    c.ratings_path = ratings;
    c.movies_path = movies;
  }
  if (auto s = root.child("split")) {
    detail::ObjectReader r(*s, "split");
    r.get("train", c.split.train);
    r.get("val", c.split.val);
    r.get("test", c.split.test);
    r.finish();
  }
  if (auto l = root.child("lstm")) {
    detail::ObjectReader r(*l, "lstm");
    r.get("seq_len", c.lstm.seq_len);
    r.get("title_len", c.lstm.title_len);
    r.get("movie_embed_dim", c.lstm.movie_embed_dim);
    r.get("word_embed_dim", c.lstm.word_embed_dim);
    r.get("genre_dense_dim", c.lstm.genre_dense_dim);
    r.get("lstm1_units", c.lstm.lstm1_units);
    r.get("lstm2_units", c.lstm.lstm2_units);
    r.get("dropout", c.lstm.dropout);
    r.get("epochs", c.lstm.epochs);
    r.get("batch_size", c.lstm.batch_size);
    r.get("learning_rate", c.lstm.learning_rate);
    r.get("clip_norm", c.lstm.clip_norm);
    r.finish();
  }
  if (auto l = root.child("llm")) {
    detail::ObjectReader r(*l, "llm");
    r.get("provider", c.llm.provider);
    r.get("base_url", c.llm.base_url);
    r.get("model", c.llm.model);
    r.get("temperature", c.llm.temperature);
    r.get("max_tokens", c.llm.max_tokens);
    r.get("max_in_flight", c.llm.max_in_flight);
    r.get("max_attempts", c.llm.max_attempts);
    r.get("timeout_s", c.llm.timeout_s);
    r.get("api_key_env", c.llm.api_key_env);
    r.get("cache_dir", c.llm.cache_dir);
    r.finish();
  }
  if (auto e = root.child("embedding")) {
    detail::ObjectReader r(*e, "embedding");
    r.get("provider", c.embedding.provider);
    r.get("url", c.embedding.url);
    r.finish();
  }
  if (auto e = root.child("eval")) {
    detail::ObjectReader r(*e, "eval");
    std::string mode = std::string(to_string(c.eval.mode));
    r.get("mode", mode);
    c.eval.mode = parse_eval_mode(mode);
    r.get("rerank", c.eval.rerank);
    r.get("max_users", c.eval.max_users);
    r.get("sknn_neighbors", c.eval.sknn_neighbors);
    r.finish();
  }
  if (auto f = root.child("finetune")) {
    detail::ObjectReader r(*f, "finetune");
    r.get("genre_annotated", c.finetune_genre_annotated);
    r.finish();
  }
  root.finish();

  auto anchor = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base_dir / p;
  };
  anchor(c.ratings_path);
  anchor(c.movies_path);
  anchor(c.output_dir);
  if (!c.llm.cache_dir.empty()) {
    std::filesystem::path cd = c.llm.cache_dir;
    anchor(cd);
    c.llm.cache_dir = cd.string();
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path(),
                      seed_override);
}

}  // namespace dualrec
