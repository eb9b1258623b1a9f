#pragma once

/// @file rerank.hpp
/// @brief Title embeddings and cosine re-ranking of LLM recommendations
/// against the LSTM anchor title.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dualrec/error.hpp"
#include "dualrec/llm_client.hpp"
#include "dualrec/parse_recs.hpp"
#include "dualrec/random.hpp"

namespace dualrec {

inline constexpr std::size_t kEmbeddingDim = 384;

using Embedding = std::vector<double>;

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;
  virtual std::size_t dimension() const { return kEmbeddingDim; }
  /// Raw vectors, one per text; callers go through embed()/embed_all().
  virtual std::vector<Embedding> raw_embed(std::span<const std::string> texts) = 0;
};

/// Checks shape and normalizes to unit length. Throws ProtocolError on a
/// count or dimension mismatch, or a zero vector.
inline std::vector<Embedding> embed_all(std::span<const std::string> texts,
                                        EmbeddingProvider& provider) {
  auto vecs = provider.raw_embed(texts);
  if (vecs.size() != texts.size()) {
    throw ProtocolError("embedding provider returned " + std::to_string(vecs.size()) +
                        " vectors for " + std::to_string(texts.size()) + " texts");
  }
  for (auto& v : vecs) {
    if (v.size() != provider.dimension()) {
      throw ProtocolError("embedding dimension " + std::to_string(v.size()) + ", expected " +
                          std::to_string(provider.dimension()));
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (!(norm > 0.0) || !std::isfinite(norm)) throw ProtocolError("degenerate embedding");
    for (auto& x : v) x /= norm;
  }
  return vecs;
}

inline Embedding embed(const std::string& text, EmbeddingProvider& provider) {
  return embed_all(std::span<const std::string>(&text, 1), provider).front();
}

/// u.v / (|u| |v|), clamped to [-1, 1].
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw std::invalid_argument("cosine: zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

/// Pseudo-random unit vectors seeded by a hash of the normalized title, so
/// "Bug's Life, A (1998)" and "A Bug's Life" embed identically.
class MockEmbedder : public EmbeddingProvider {
 public:
  explicit MockEmbedder(std::uint64_t seed = 0) : seed_(seed) {}
  std::string name() const override { return "mock"; }
  bool deterministic() const override { return true; }

  std::vector<Embedding> raw_embed(std::span<const std::string> texts) override {
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
      std::uint64_t state = derive_seed(seed_, fnv1a64(normalize_title(t)));
      Embedding v(kEmbeddingDim);
      for (auto& x : v) x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::uint64_t seed_;
};

/// Fixed text -> vector table; unknown texts fail like an unreachable service.
class ScriptedEmbedder : public EmbeddingProvider {
 public:
  explicit ScriptedEmbedder(std::size_t dim = kEmbeddingDim) : dim_(dim) {}
  void set(const std::string& text, Embedding v) { table_[text] = std::move(v); }
  std::string name() const override { return "scripted"; }
  bool deterministic() const override { return true; }
  std::size_t dimension() const override { return dim_; }

  std::vector<Embedding> raw_embed(std::span<const std::string> texts) override {
    std::vector<Embedding> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      if (it == table_.end()) throw TransportError("no scripted embedding for \"" + t + "\"");
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, Embedding> table_;
};

/// POST {"texts": [...]} to `url`, expects {"vectors": [[...], ...]}.
class RemoteEmbedder : public EmbeddingProvider {
 public:
  explicit RemoteEmbedder(std::string url, Seconds timeout = Seconds{30.0})
      : timeout_(timeout) {
    std::tie(host_, path_) = detail::split_base_url(url);
    if (path_.empty()) path_ = "/";
  }
  std::string name() const override { return "remote"; }
  bool deterministic() const override { return false; }

  std::vector<Embedding> raw_embed(std::span<const std::string> texts) override {
    httplib::Client client(host_);
    const auto t = std::chrono::duration_cast<std::chrono::microseconds>(timeout_);
    client.set_connection_timeout(t);
    client.set_read_timeout(t);
    const nlohmann::json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) throw TransportError("embedding service unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("embedding service HTTP " + std::to_string(res->status));
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    try {
      if (j.is_discarded()) throw ProtocolError("embedding response is not JSON");
      return j.at("vectors").get<std::vector<Embedding>>();
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("embedding response lacks a numeric \"vectors\" array");
    }
  }

 private:
  std::string host_;
  std::string path_;
  Seconds timeout_;
};

struct RankedList {
  std::vector<Recommendation> items;
  std::string anchor;
  bool degraded = false;  // embeddings failed; items kept in generation order
  std::string warning;
};

/// Attaches cosine(embed(rec), embed(anchor)) to every rec and stable-sorts
/// descending. Any provider failure leaves the input order untouched.
inline RankedList rerank(std::vector<Recommendation> recs, const std::string& anchor,
                         EmbeddingProvider& provider) {
  if (recs.empty()) throw std::invalid_argument("rerank: no recommendations");
  RankedList out;
  out.anchor = anchor;
  try {
    std::vector<std::string> texts;
    texts.reserve(recs.size() + 1);
    texts.push_back(anchor);
    for (const auto& r : recs) texts.push_back(r.display());
    const auto vecs = embed_all(texts, provider);
    std::vector<double> sims;
    for (std::size_t i = 0; i < recs.size(); ++i) sims.push_back(cosine(vecs[i + 1], vecs[0]));
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].similarity = sims[i];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const auto& a, const auto& b) { return *a.similarity > *b.similarity; });
  } catch (const std::exception& e) {
    for (auto& r : recs) r.similarity.reset();
    out.degraded = true;
    out.warning = std::string("re-rank skipped: ") + e.what();
  }
  out.items = std::move(recs);
  return out;
}

}  // namespace dualrec
