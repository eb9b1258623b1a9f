#pragma once

/// @file parse_recs.hpp
/// @brief Turns free-text LLM answers into structured recommendations and
/// resolves them against the catalog.

#include <algorithm>
#include <cctype>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualrec/dataset.hpp"
#include "dualrec/genres.hpp"

namespace dualrec {

struct Recommendation {
  std::string title;
  std::optional<int> year;
  std::vector<std::string> genres;  // as written, possibly outside the universe
  std::optional<MovieId> resolved_id;
  std::optional<double> similarity;

  // Labels that belong to the 18-genre universe.
  GenreSet genre_set() const {
    GenreSet s;
    for (const auto& g : genres) {
      if (auto i = genre_index(g)) s.insert(*i);
    }
    return s;
  }

  // "Title (Year)" or just the title when the year is unknown.
  std::string display() const {
    return year ? title + " (" + std::to_string(*year) + ")" : title;
  }

  bool operator==(const Recommendation&) const = default;
};

struct ParsedRecommendations {
  std::vector<Recommendation> items;
  bool parse_failed = false;  // no item could be extracted
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Strips a list marker ("-", "*", "•", "1.", "2)") and returns the remainder,
// or nullopt when the line is not a list item.
inline std::optional<std::string_view> strip_list_marker(std::string_view line) {
  line = trim(line);
  if (line.starts_with("- ") || line.starts_with("* ") || line.starts_with("+ ")) {
    return trim(line.substr(2));
  }
  if (line.starts_with("\xE2\x80\xA2")) return trim(line.substr(3));  // U+2022
  std::size_t digits = 0;
  while (digits < line.size() && digits < 3 &&
         std::isdigit(static_cast<unsigned char>(line[digits]))) {
    ++digits;
  }
  if (digits > 0 && digits + 1 < line.size() &&
      (line[digits] == '.' || line[digits] == ')') && line[digits + 1] == ' ') {
    return trim(line.substr(digits + 2));
  }
  return std::nullopt;
}

inline std::string strip_markdown(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != '*' && c != '_' && c != '"') out.push_back(c);
  }
  return out;
}

inline std::vector<std::string> split_genre_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find_first_of(",|/", pos);
    if (next == std::string_view::npos) next = s.size();
    auto label = trim(s.substr(pos, next - pos));
    while (!label.empty() && (label.back() == '.' || label.back() == ')')) {
      label.remove_suffix(1);
    }
    if (label.starts_with("and ")) label.remove_prefix(4);
    label = trim(label);
    if (!label.empty()) {
      // Canonicalize case for universe labels ("children's" -> "Children's").
      std::string text(label);
      const auto lower = ascii_lower(text);
      for (auto g : kGenres) {
        if (ascii_lower(g) == lower) text = std::string(g);
      }
      out.push_back(std::move(text));
    }
    pos = next + 1;
  }
  return out;
}

// Position of the last "(YYYY)" group, or npos.
inline std::size_t last_year_group(std::string_view s) {
  for (auto pos = s.rfind('('); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : s.rfind('(', pos - 1)) {
    if (pos + 5 < s.size() && s[pos + 5] == ')' &&
        std::all_of(s.begin() + pos + 1, s.begin() + pos + 5,
                    [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      return pos;
    }
  }
  return std::string_view::npos;
}

inline std::string_view trim_title_tail(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '-' || s.back() == ':' || s.back() == ',' ||
                        std::isspace(static_cast<unsigned char>(s.back())))) {
    s.remove_suffix(1);
  }
  // Em dash (U+2014) left dangling at the end.
  if (s.ends_with("\xE2\x80\x94")) s.remove_suffix(3);
  return trim(s);
}

inline std::optional<Recommendation> parse_item(std::string_view body) {
  const std::string clean = strip_markdown(body);
  std::string_view text = clean;
  Recommendation rec;

  std::string_view head = text;
  std::string_view tail;
  if (auto y = last_year_group(text); y != std::string_view::npos) {
    rec.year = std::stoi(std::string(text.substr(y + 1, 4)));
    head = text.substr(0, y);
    tail = text.substr(y + 6);
  } else {
    // No year: the genre clause (if any) ends the title.
    const auto lower = ascii_lower(text);
    auto g = lower.find("genre");
    if (g != std::string::npos) {
      head = text.substr(0, g);
      tail = text.substr(g);
    } else if (auto p = text.rfind(" ("); p != std::string_view::npos && text.ends_with(")")) {
      head = text.substr(0, p);
      tail = text.substr(p);
    }
  }

  tail = trim(tail);
  const auto lower_tail = ascii_lower(tail);
  if (auto g = lower_tail.find("genre"); g != std::string::npos) {
    auto colon = tail.find(':', g);
    if (colon != std::string_view::npos) rec.genres = split_genre_list(tail.substr(colon + 1));
  } else if (tail.starts_with("(")) {
    auto close = tail.find(')');
    rec.genres = split_genre_list(tail.substr(1, close == std::string_view::npos ? tail.size() - 1 : close - 1));
  }

  head = trim_title_tail(head);
  if (head.empty()) return std::nullopt;
  rec.title = std::string(head);
  return rec;
}

}  // namespace detail

/// Extracts list items in generation order. Prose lines are ignored; an answer
/// with no parseable item sets `parse_failed`.
inline ParsedRecommendations parse_recommendations(std::string_view text) {
  ParsedRecommendations out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (auto body = detail::strip_list_marker(line)) {
      if (auto rec = detail::parse_item(*body)) out.items.push_back(std::move(*rec));
    }
  }
  out.parse_failed = out.items.empty();
  return out;
}

inline constexpr std::string_view kTrailingArticles[] = {
    "The", "A", "An", "Les", "Le", "La", "L'", "Il", "El", "Los", "Las",
    "Das", "Der", "Die", "Det", "Den"};

/// Canonical matching key: drops the trailing year and alternate-title
/// parentheticals, moves a MovieLens trailing article (", The") to the front,
/// lowercases and deletes punctuation. Idempotent.
inline std::string normalize_title(std::string_view title) {
  std::string_view t = detail::trim(title);
  // Strip trailing parentheticals: "(1995)", "(Cité des enfants perdus, La)".
  while (t.ends_with(")")) {
    auto open = t.rfind('(');
    if (open == std::string_view::npos || open == 0) break;
    t = detail::trim(t.substr(0, open));
  }
  std::string moved(t);
  if (auto comma = t.rfind(", "); comma != std::string_view::npos) {
    const auto article = t.substr(comma + 2);
    for (auto a : kTrailingArticles) {
      if (article == a) {
        const std::string sep = a.ends_with("'") ? "" : " ";
        moved = std::string(a) + sep + std::string(t.substr(0, comma));
        break;
      }
    }
  }
  std::string out;
  bool space = false;
  for (char ch : moved) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (c < 0x80 && std::ispunct(c)) {
      if (c == '&') {
        if (space || !out.empty()) out += ' ';
        out += "and";
        space = true;
      }
      continue;
    }
    if (space) out += ' ';
    space = false;
    out.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  return out;
}

/// Levenshtein distance, abandoning once every cell exceeds `cap`
/// (then returns cap + 1).
inline std::size_t edit_distance(std::string_view a, std::string_view b,
                                 std::size_t cap = std::numeric_limits<std::size_t>::max() - 1) {
  if (a.size() > b.size()) std::swap(a, b);
  if (b.size() - a.size() > cap) return cap + 1;
  std::vector<std::size_t> prev(a.size() + 1), cur(a.size() + 1);
  for (std::size_t i = 0; i <= a.size(); ++i) prev[i] = i;
  for (std::size_t j = 1; j <= b.size(); ++j) {
    cur[0] = j;
    std::size_t row_min = cur[0];
    for (std::size_t i = 1; i <= a.size(); ++i) {
      const std::size_t sub = prev[i - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[i] = std::min({prev[i] + 1, cur[i - 1] + 1, sub});
      row_min = std::min(row_min, cur[i]);
    }
    if (row_min > cap) return cap + 1;
    std::swap(prev, cur);
  }
  return std::min(prev[a.size()], cap + 1);
}

inline constexpr std::size_t kMaxEditDistance = 2;

// Normalized-title index over a catalog.
class TitleIndex {
 public:
  explicit TitleIndex(const Catalog& catalog) : catalog_(&catalog) {
    for (const auto& m : catalog.movies()) {
      auto key = normalize_title(m.title);
      by_key_[key].push_back(m.movie_id);
      keys_.emplace_back(std::move(key), m.movie_id);
    }
  }

  /// Exact normalized match first (year-confirmed when both sides have one),
  /// then a unique nearest neighbour within edit distance 2.
  std::optional<MovieId> resolve(const Recommendation& rec) const {
    const auto key = normalize_title(rec.title);
    if (key.empty()) return std::nullopt;
    if (auto it = by_key_.find(key); it != by_key_.end()) {
      const auto& ids = it->second;
      if (!rec.year) {
        return ids.size() == 1 ? std::optional<MovieId>(ids[0]) : std::nullopt;
      }
      std::vector<MovieId> same_year;
      for (auto id : ids) {
        if (catalog_->movie(id).year == *rec.year) same_year.push_back(id);
      }
      if (same_year.size() == 1) return same_year[0];
      if (same_year.empty() && ids.size() == 1 &&
          std::abs(catalog_->movie(ids[0]).year - *rec.year) <= 1) {
        return ids[0];
      }
      return std::nullopt;
    }
    std::size_t best = kMaxEditDistance + 1;
    std::vector<MovieId> best_ids;
    for (const auto& [k, id] : keys_) {
      if (rec.year && catalog_->movie(id).year != *rec.year) continue;
      const auto d = edit_distance(key, k, kMaxEditDistance);
      if (d < best) {
        best = d;
        best_ids = {id};
      } else if (d == best && d <= kMaxEditDistance) {
        best_ids.push_back(id);
      }
    }
    if (best <= kMaxEditDistance && best_ids.size() == 1) return best_ids[0];
    return std::nullopt;
  }

 private:
  const Catalog* catalog_;
  std::unordered_map<std::string, std::vector<MovieId>> by_key_;
  std::vector<std::pair<std::string, MovieId>> keys_;
};

inline std::optional<MovieId> resolve_to_catalog(const Recommendation& rec,
                                                 const Catalog& catalog) {
  return TitleIndex(catalog).resolve(rec);
}

}  // namespace dualrec
