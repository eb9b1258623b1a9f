#pragma once

/// @file features.hpp
/// @brief Per-movie encodings fed to the sequence model: class index,
/// fixed-length title token ids and the 18-way genre multi-hot.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualrec/dataset.hpp"
#include "dualrec/genres.hpp"

namespace dualrec {

using TokenId = std::int32_t;

inline constexpr int kVocabCap = 5000;
inline constexpr int kTitleLen = 10;

struct VocabOptions {
  int max_words = kVocabCap;
  bool keep_year = true;  // keep "(1998)" as the word "1998"
};

/// Lowercases, deletes ASCII punctuation (apostrophes included) and splits on
/// whitespace. Digits and non-ASCII bytes are kept.
inline std::vector<std::string> title_words(std::string_view title,
                                            bool keep_year = true) {
  if (!keep_year) {
    const auto pos = title.rfind('(');
    if (pos != std::string_view::npos && extract_year(title.substr(pos))) {
      title = title.substr(0, pos);
    }
  }
  std::vector<std::string> words;
  std::string cur;
  for (char ch : title) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Word -> id in [1, size]; id 0 is the pad and never names a word.
class TitleVocab {
 public:
  TitleVocab() = default;
  TitleVocab(std::vector<std::string> words, bool keep_year)
      : words_(std::move(words)), keep_year_(keep_year) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      ids_.emplace(words_[i], static_cast<TokenId>(i + 1));
    }
  }

  std::size_t size() const { return words_.size(); }
  bool keep_year() const { return keep_year_; }

  TokenId id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? 0 : it->second;
  }

  const std::string& word(TokenId id) const { return words_.at(id - 1); }
  const std::vector<std::string>& words() const { return words_; }

  // Two-column audit file: "word<TAB>id".
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      out += words_[i] + "\t" + std::to_string(i + 1) + "\n";
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
  bool keep_year_ = true;
};

/// Ranks title words by corpus frequency over the catalog (class order),
/// breaking ties by first appearance, and keeps the top max_words.
inline TitleVocab build_vocab(const Catalog& catalog, VocabOptions opts = {}) {
  if (catalog.size() == 0) throw std::invalid_argument("build_vocab: empty catalog");
  struct Stat {
    std::int64_t freq = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Stat> stats;
  std::vector<std::string> order;
  for (const auto& m : catalog.movies()) {
    for (auto& w : title_words(m.title, opts.keep_year)) {
      auto [it, fresh] = stats.try_emplace(w, Stat{0, order.size()});
      if (fresh) order.push_back(w);
      ++it->second.freq;
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) {
                     return stats[a].freq > stats[b].freq;
                   });
  if (order.size() > static_cast<std::size_t>(opts.max_words)) {
    order.resize(opts.max_words);
  }
  return TitleVocab(std::move(order), opts.keep_year);
}

/// In-vocabulary word ids in order, out-of-vocabulary words dropped,
/// right-padded with 0 and truncated to `length`.
inline std::vector<TokenId> tokenize_title(std::string_view title,
                                           const TitleVocab& vocab,
                                           int length = kTitleLen) {
  std::vector<TokenId> out;
  out.reserve(length);
  for (const auto& w : title_words(title, vocab.keep_year())) {
    if (out.size() == static_cast<std::size_t>(length)) break;
    if (auto id = vocab.id(w); id != 0) out.push_back(id);
  }
  out.resize(length, 0);
  return out;
}

using GenreVec = std::array<std::uint8_t, kGenreCount>;

inline GenreVec encode_genres(GenreSet genres) {
  GenreVec v{};
  for (std::size_t g = 0; g < kGenreCount; ++g) v[g] = genres.contains(g) ? 1 : 0;
  return v;
}

inline GenreVec encode_genres(std::span<const std::string> labels) {
  GenreSet set;
  for (const auto& label : labels) {
    auto g = genre_index(label);
    if (!g) throw std::invalid_argument("unknown genre label: " + label);
    set.insert(*g);
  }
  return encode_genres(set);
}

struct EncodedMovie {
  ClassIndex class_index = 0;
  std::vector<TokenId> title_tokens;  // exactly title_len entries
  GenreVec genre_vec{};

  bool operator==(const EncodedMovie&) const = default;
};

struct EncodedWindow {
  std::vector<EncodedMovie> steps;
  ClassIndex target = 0;
};

// Compact window of class indices; expanded through a FeatureTable per batch.
struct ClassWindow {
  std::vector<ClassIndex> inputs;
  ClassIndex target = 0;
};

// EncodedMovie for every catalog class, built once.
class FeatureTable {
 public:
  FeatureTable() = default;
  FeatureTable(const Catalog& catalog, const TitleVocab& vocab,
               int title_len = kTitleLen)
      : title_len_(title_len) {
    rows_.reserve(catalog.size());
    for (std::size_t c = 0; c < catalog.size(); ++c) {
      const auto& m = catalog.by_class(static_cast<ClassIndex>(c));
      rows_.push_back({static_cast<ClassIndex>(c),
                       tokenize_title(m.title, vocab, title_len),
                       encode_genres(m.genres)});
    }
  }
  explicit FeatureTable(std::vector<EncodedMovie> rows, int title_len)
      : rows_(std::move(rows)), title_len_(title_len) {}

  const EncodedMovie& operator[](ClassIndex cls) const { return rows_.at(cls); }
  std::size_t size() const { return rows_.size(); }
  int title_len() const { return title_len_; }

  EncodedWindow expand(const ClassWindow& w) const {
    EncodedWindow out;
    out.steps.reserve(w.inputs.size());
    for (auto c : w.inputs) out.steps.push_back(rows_.at(c));
    out.target = w.target;
    return out;
  }

 private:
  std::vector<EncodedMovie> rows_;
  int title_len_ = kTitleLen;
};

inline ClassWindow to_class_window(const Window& window, const Catalog& catalog) {
  auto lookup = [&](MovieId id) {
    auto cls = catalog.class_index(id);
    if (!cls) {
      throw std::logic_error("window references movie outside catalog: " +
                             std::to_string(id));
    }
    return *cls;
  };
  ClassWindow out;
  out.inputs.reserve(window.inputs.size());
  for (auto id : window.inputs) out.inputs.push_back(lookup(id));
  out.target = lookup(window.target);
  return out;
}

/// Per-timestep encodings of a window, chronological, target as class index.
inline EncodedWindow encode_window(const Window& window, const Catalog& catalog,
                                   const TitleVocab& vocab,
                                   int title_len = kTitleLen) {
  EncodedWindow out;
  const auto cw = to_class_window(window, catalog);
  out.steps.reserve(cw.inputs.size());
  for (auto cls : cw.inputs) {
    const auto& m = catalog.by_class(cls);
    out.steps.push_back(
        {cls, tokenize_title(m.title, vocab, title_len), encode_genres(m.genres)});
  }
  out.target = cw.target;
  return out;
}

}  // namespace dualrec
