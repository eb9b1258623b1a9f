#pragma once

/// @file dataset.hpp
/// @brief MovieLens-1M ingestion: parsing, popularity filtering, user-level
/// splits and fixed-length sliding windows.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualrec/error.hpp"
#include "dualrec/genres.hpp"
#include "dualrec/random.hpp"

namespace dualrec {

using UserId = std::int32_t;
using MovieId = std::int32_t;
using ClassIndex = std::int32_t;

struct Interaction {
  UserId user_id = 0;
  MovieId movie_id = 0;
  int rating = 0;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct Movie {
  MovieId movie_id = 0;
  std::string title;  // raw MovieLens form, UTF-8, e.g. "Bug's Life, A (1998)"
  int year = 0;
  GenreSet genres;

  bool operator==(const Movie&) const = default;
};

struct ParseReport {
  std::size_t kept = 0;
  std::size_t skipped = 0;
  // First few offending line numbers (1-based) with a reason.
  std::vector<std::string> examples;

  double error_rate() const {
    const auto total = kept + skipped;
    return total == 0 ? 0.0 : static_cast<double>(skipped) / total;
  }

  void reject(std::size_t line_no, std::string_view why) {
    ++skipped;
    if (examples.size() < 10) {
      examples.push_back("line " + std::to_string(line_no) + ": " +
                         std::string(why));
    }
  }
};

template <typename Record>
struct Parsed {
  std::vector<Record> records;
  ParseReport report;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line,
                                                  std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = line.find(delim, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + delim.size();
  }
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  Int value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
  return value;
}

// Calls fn(line_no, line) for each non-blank line; strips a trailing '\r'.
template <typename Fn>
void for_each_line(std::string_view raw, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    auto nl = raw.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw.size();
    auto line = raw.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    fn(line_no, line);
  }
}

}  // namespace detail

inline std::string latin1_to_utf8(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (unsigned char c : in) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

// Inverse of latin1_to_utf8 for code points below U+0100; others become '?'.
inline std::string utf8_to_latin1(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto c = static_cast<unsigned char>(in[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else if ((c & 0xE0) == 0xC0 && i + 1 < in.size()) {
      const auto cp = ((c & 0x1F) << 6) |
                      (static_cast<unsigned char>(in[i + 1]) & 0x3F);
      out.push_back(cp < 0x100 ? static_cast<char>(cp) : '?');
      ++i;
    } else {
      out.push_back('?');
      while (i + 1 < in.size() &&
             (static_cast<unsigned char>(in[i + 1]) & 0xC0) == 0x80) {
        ++i;
      }
    }
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

/// Parses "UserID::MovieID::Rating::Timestamp" lines. Malformed lines are
/// skipped and tallied in the report.
inline Parsed<Interaction> parse_ratings(std::string_view raw) {
  Parsed<Interaction> out;
  detail::for_each_line(raw, [&](std::size_t line_no, std::string_view line) {
    const auto f = detail::split_fields(line, "::");
    if (f.size() != 4) {
      out.report.reject(line_no, "expected 4 fields");
      return;
    }
    auto user = detail::parse_int<UserId>(f[0]);
    auto movie = detail::parse_int<MovieId>(f[1]);
    auto rating = detail::parse_int<int>(f[2]);
    auto ts = detail::parse_int<std::int64_t>(f[3]);
    if (!user || !movie || !rating || !ts) {
      out.report.reject(line_no, "non-integer field");
      return;
    }
    if (*user <= 0 || *movie <= 0 || *rating < 1 || *rating > 5 || *ts <= 0) {
      out.report.reject(line_no, "field out of range");
      return;
    }
    out.records.push_back({*user, *movie, *rating, *ts});
    ++out.report.kept;
  });
  return out;
}

/// Year from the last "(YYYY)" group of a title.
inline std::optional<int> extract_year(std::string_view title) {
  for (auto pos = title.rfind('('); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : title.rfind('(', pos - 1)) {
    if (pos + 5 < title.size() && title[pos + 5] == ')') {
      if (auto y = detail::parse_int<int>(title.substr(pos + 1, 4))) return y;
    }
  }
  return std::nullopt;
}

/// Parses "MovieID::Title (Year)::Genre|Genre" lines (Latin-1). Titles are
/// converted to UTF-8; records with no year or an unknown genre are skipped.
// Raw MovieLens titles already end in "(YYYY)"; others get it appended.
inline std::string title_with_year(const Movie& m) {
  if (extract_year(m.title) && m.title.ends_with(")")) return m.title;
  return m.title + " (" + std::to_string(m.year) + ")";
}

inline Parsed<Movie> parse_movies(std::string_view raw) {
  Parsed<Movie> out;
  detail::for_each_line(raw, [&](std::size_t line_no, std::string_view line) {
    const auto first = line.find("::");
    const auto last = line.rfind("::");
    if (first == std::string_view::npos || first == last) {
      out.report.reject(line_no, "expected 3 fields");
      return;
    }
    auto id = detail::parse_int<MovieId>(line.substr(0, first));
    if (!id || *id <= 0) {
      out.report.reject(line_no, "bad movie id");
      return;
    }
    const auto title = line.substr(first + 2, last - first - 2);
    const auto year = extract_year(title);
    if (!year || *year < 1900 || *year > 2100) {
      out.report.reject(line_no, "missing year");
      return;
    }
    GenreSet genres;
    for (auto label : detail::split_fields(line.substr(last + 2), "|")) {
      auto g = genre_index(label);
      if (!g) {
        out.report.reject(line_no, "unknown genre '" + std::string(label) + "'");
        return;
      }
      genres.insert(*g);
    }
    if (genres.empty()) {
      out.report.reject(line_no, "no genres");
      return;
    }
    out.records.push_back({*id, latin1_to_utf8(title), *year, genres});
    ++out.report.kept;
  });
  return out;
}

inline std::string serialize_ratings(const std::vector<Interaction>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += std::to_string(r.user_id) + "::" + std::to_string(r.movie_id) +
           "::" + std::to_string(r.rating) + "::" +
           std::to_string(r.timestamp) + "\n";
  }
  return out;
}

inline std::string serialize_movies(const std::vector<Movie>& rows) {
  std::string out;
  for (const auto& m : rows) {
    out += std::to_string(m.movie_id) + "::" + utf8_to_latin1(m.title) +
           "::" + m.genres.join("|") + "\n";
  }
  return out;
}

// Retained movies with a dense class index assigned by descending popularity.
class Catalog {
 public:
  Catalog() = default;

  void add(Movie movie, std::int64_t count) {
    const auto cls = static_cast<ClassIndex>(movies_.size());
    class_of_.emplace(movie.movie_id, cls);
    movies_.push_back(std::move(movie));
    counts_.push_back(count);
  }

  std::size_t size() const { return movies_.size(); }
  bool contains(MovieId id) const { return class_of_.contains(id); }

  std::optional<ClassIndex> class_index(MovieId id) const {
    auto it = class_of_.find(id);
    if (it == class_of_.end()) return std::nullopt;
    return it->second;
  }

  const Movie& by_class(ClassIndex cls) const { return movies_.at(cls); }
  MovieId movie_id(ClassIndex cls) const { return movies_.at(cls).movie_id; }
  std::int64_t count(ClassIndex cls) const { return counts_.at(cls); }

  const Movie& movie(MovieId id) const {
    auto it = class_of_.find(id);
    if (it == class_of_.end()) {
      throw std::out_of_range("movie not in catalog: " + std::to_string(id));
    }
    return movies_[it->second];
  }

  const std::vector<Movie>& movies() const { return movies_; }

 private:
  std::vector<Movie> movies_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<MovieId, ClassIndex> class_of_;
};

struct FilterResult {
  Catalog catalog;
  std::vector<Interaction> interactions;
};

/// Keeps the k most-interacted movies (ties to the lower id) and drops every
/// interaction that references anything else. Interactions whose movie has no
/// metadata never count.
inline FilterResult filter_top_k(const std::vector<Interaction>& interactions,
                                 const std::vector<Movie>& movies, int k) {
  if (k <= 0) throw std::invalid_argument("filter_top_k: k must be positive");
  std::unordered_map<MovieId, const Movie*> meta;
  for (const auto& m : movies) meta.emplace(m.movie_id, &m);

  std::map<MovieId, std::int64_t> counts;
  for (const auto& r : interactions) {
    if (meta.contains(r.movie_id)) ++counts[r.movie_id];
  }
  std::vector<std::pair<MovieId, std::int64_t>> ranked(counts.begin(),
                                                       counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(k);

  FilterResult out;
  for (const auto& [id, count] : ranked) out.catalog.add(*meta.at(id), count);
  for (const auto& r : interactions) {
    if (out.catalog.contains(r.movie_id)) out.interactions.push_back(r);
  }
  return out;
}

struct UserHistory {
  UserId user_id = 0;
  std::vector<Interaction> events;  // ascending (timestamp, movie_id)
};

/// Groups interactions by user (ascending id) and sorts each history
/// chronologically, breaking timestamp ties by movie id.
inline std::vector<UserHistory> group_histories(
    const std::vector<Interaction>& interactions) {
  std::map<UserId, std::vector<Interaction>> by_user;
  for (const auto& r : interactions) by_user[r.user_id].push_back(r);
  std::vector<UserHistory> out;
  out.reserve(by_user.size());
  for (auto& [user, events] : by_user) {
    std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp
                                        : a.movie_id < b.movie_id;
    });
    out.push_back({user, std::move(events)});
  }
  return out;
}

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct Split {
  std::vector<UserId> train_users;
  std::vector<UserId> val_users;
  std::vector<UserId> test_users;

  bool operator==(const Split&) const = default;
};

/// Seeded shuffle followed by a contiguous partition. Train and validation
/// sizes are rounded to the nearest user; test takes the remainder. Each
/// member is returned sorted ascending.
inline Split split_users(std::vector<UserId> users, SplitRatios ratios,
                         std::uint64_t seed) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 ||
      ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::mt19937_64 rng(seed);
  portable_shuffle(std::span<UserId>(users), rng);

  const auto n = static_cast<long long>(users.size());
  const auto n_train = std::min(n, std::llround(ratios.train * n));
  const auto n_val = std::min(n - n_train, std::llround(ratios.val * n));

  Split s;
  s.train_users.assign(users.begin(), users.begin() + n_train);
  s.val_users.assign(users.begin() + n_train, users.begin() + n_train + n_val);
  s.test_users.assign(users.begin() + n_train + n_val, users.end());
  std::sort(s.train_users.begin(), s.train_users.end());
  std::sort(s.val_users.begin(), s.val_users.end());
  std::sort(s.test_users.begin(), s.test_users.end());
  return s;
}

struct Window {
  std::vector<MovieId> inputs;  // chronological
  MovieId target = 0;

  bool operator==(const Window&) const = default;
};

inline constexpr int kWindowLen = 30;

/// Every offset (step `stride`) where window_len inputs plus one target fit.
inline std::vector<Window> build_windows(const UserHistory& history,
                                         int window_len = kWindowLen,
                                         int stride = 1) {
  if (window_len <= 0 || stride <= 0) {
    throw std::invalid_argument("build_windows: window_len and stride must be positive");
  }
  std::vector<Window> out;
  const auto n = history.events.size();
  const auto len = static_cast<std::size_t>(window_len);
  for (std::size_t off = 0; off + len < n; off += stride) {
    Window w;
    w.inputs.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      w.inputs.push_back(history.events[off + i].movie_id);
    }
    w.target = history.events[off + len].movie_id;
    out.push_back(std::move(w));
  }
  return out;
}

struct Holdout {
  std::vector<Interaction> context;
  std::vector<Interaction> truth;  // last `truth_len` events
};

inline constexpr int kTruthWindow = 5;

/// Splits off the final events as a ground-truth window. Histories that leave
/// no context (fewer than truth_len + 1 events) yield nullopt.
inline std::optional<Holdout> holdout_for_llm(const UserHistory& history,
                                              int truth_len = kTruthWindow) {
  const auto n = history.events.size();
  if (n < static_cast<std::size_t>(truth_len) + 1) return std::nullopt;
  Holdout h;
  h.context.assign(history.events.begin(), history.events.end() - truth_len);
  h.truth.assign(history.events.end() - truth_len, history.events.end());
  return h;
}

inline std::string format_parse_report(const ParseReport& ratings,
                                       const ParseReport& movies) {
  std::ostringstream ss;
  ss << "ratings kept=" << ratings.kept << " skipped=" << ratings.skipped << "\n";
  for (const auto& e : ratings.examples) ss << "  ratings " << e << "\n";
  ss << "movies kept=" << movies.kept << " skipped=" << movies.skipped << "\n";
  for (const auto& e : movies.examples) ss << "  movies " << e << "\n";
  return ss.str();
}

// catalog.tsv: class_index, movie_id, count, year, genres, title
inline std::string serialize_catalog(const Catalog& catalog) {
  std::string out = "class_index\tmovie_id\tcount\tyear\tgenres\ttitle\n";
  for (std::size_t c = 0; c < catalog.size(); ++c) {
    const auto& m = catalog.by_class(static_cast<ClassIndex>(c));
    out += std::to_string(c) + "\t" + std::to_string(m.movie_id) + "\t" +
           std::to_string(catalog.count(static_cast<ClassIndex>(c))) + "\t" +
           std::to_string(m.year) + "\t" + m.genres.join("|") + "\t" + m.title +
           "\n";
  }
  return out;
}

inline Catalog parse_catalog(std::string_view raw) {
  Catalog catalog;
  bool header = true;
  detail::for_each_line(raw, [&](std::size_t line_no, std::string_view line) {
    if (header) {
      header = false;
      return;
    }
    const auto f = detail::split_fields(line, "\t");
    if (f.size() != 6) {
      throw DataError("catalog line " + std::to_string(line_no) + ": expected 6 columns");
    }
    auto cls = detail::parse_int<ClassIndex>(f[0]);
    auto id = detail::parse_int<MovieId>(f[1]);
    auto count = detail::parse_int<std::int64_t>(f[2]);
    auto year = detail::parse_int<int>(f[3]);
    if (!cls || !id || !count || !year ||
        *cls != static_cast<ClassIndex>(catalog.size())) {
      throw DataError("catalog line " + std::to_string(line_no) + ": bad fields");
    }
    GenreSet genres;
    for (auto label : detail::split_fields(f[4], "|")) {
      auto g = genre_index(label);
      if (!g) throw DataError("catalog line " + std::to_string(line_no) + ": unknown genre");
      genres.insert(*g);
    }
    catalog.add(Movie{*id, std::string(f[5]), *year, genres}, *count);
  });
  return catalog;
}

// splits.tsv: user_id, split name
inline std::string serialize_split(const Split& split) {
  std::vector<std::pair<UserId, std::string_view>> rows;
  for (auto u : split.train_users) rows.emplace_back(u, "train");
  for (auto u : split.val_users) rows.emplace_back(u, "val");
  for (auto u : split.test_users) rows.emplace_back(u, "test");
  std::sort(rows.begin(), rows.end());
  std::string out = "user_id\tsplit\n";
  for (const auto& [u, name] : rows) {
    out += std::to_string(u) + "\t" + std::string(name) + "\n";
  }
  return out;
}

inline Split parse_split(std::string_view raw) {
  Split s;
  bool header = true;
  detail::for_each_line(raw, [&](std::size_t line_no, std::string_view line) {
    if (header) {
      header = false;
      return;
    }
    const auto f = detail::split_fields(line, "\t");
    auto u = f.size() == 2 ? detail::parse_int<UserId>(f[0]) : std::nullopt;
    if (!u) throw DataError("splits line " + std::to_string(line_no) + ": bad row");
    if (f[1] == "train") {
      s.train_users.push_back(*u);
    } else if (f[1] == "val") {
      s.val_users.push_back(*u);
    } else if (f[1] == "test") {
      s.test_users.push_back(*u);
    } else {
      throw DataError("splits line " + std::to_string(line_no) + ": unknown split");
    }
  });
  return s;
}

}  // namespace dualrec
