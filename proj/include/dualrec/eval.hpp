#pragma once

/// @file eval.hpp
/// @brief HR@k, NDCG@k, genre Jaccard, LSTM top-k accuracy, the MostPop and
/// SKNN baselines, and report rendering.
///
/// Aggregates are kept exact: hit counts and Jaccard sums as reduced
/// fractions, NDCG as a histogram of hit ranks. Floating point appears only
/// when a value is rendered.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dualrec/dataset.hpp"
#include "dualrec/error.hpp"
#include "dualrec/genres.hpp"
#include "dualrec/lstm.hpp"
#include "dualrec/parse_recs.hpp"

namespace dualrec {

inline constexpr int kCandidateSlots = 5;

// Non-negative fraction in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    if (d <= 0) throw std::invalid_argument("Rational: denominator must be positive");
    const auto g = std::gcd(n, d);
    return g == 0 ? Rational{0, 1} : Rational{n / g, d / g};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  Rational operator+(const Rational& o) const {
    const auto g = std::gcd(den, o.den);
    const __int128 d = static_cast<__int128>(den / g) * o.den;
    const __int128 n =
        static_cast<__int128>(num) * (o.den / g) + static_cast<__int128>(o.num) * (den / g);
    return reduce128(n, d);
  }
  Rational divided_by(std::int64_t k) const {
    return reduce128(static_cast<__int128>(num), static_cast<__int128>(den) * k);
  }
  bool operator==(const Rational&) const = default;
  auto operator<=>(const Rational& o) const {
    return static_cast<__int128>(num) * o.den <=> static_cast<__int128>(o.num) * den;
  }

 private:
  static Rational reduce128(__int128 n, __int128 d) {
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
      const auto t = a % b;
      a = b;
      b = t;
    }
    if (a == 0) return {0, 1};
    n /= a;
    d /= a;
    if (d > INT64_MAX || n > INT64_MAX) throw std::overflow_error("Rational overflow");
    return {static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)};
  }
};

inline std::ostream& operator<<(std::ostream& os, const Rational& r) {
  return os << r.num << '/' << r.den;
}

/// One candidate slot. An empty `movie` is an unresolved LLM title: it takes
/// a place in the ranking but can never match the truth.
struct Slot {
  std::optional<MovieId> movie;
  GenreSet genres;  // parsed labels, used when `movie` is empty
  std::string label;

  bool operator==(const Slot&) const = default;
};

/// LLM recommendations in (re-ranked) order, then LSTM predictions in
/// probability order, skipping movies already placed, until `slots` are
/// filled. Short LSTM lists leave trailing empty slots.
inline std::vector<Slot> assemble_candidates(std::span<const Recommendation> reranked,
                                             std::span<const MovieId> lstm_topk,
                                             int slots = kCandidateSlots) {
  std::vector<Slot> out;
  std::unordered_set<MovieId> placed;
  for (const auto& rec : reranked) {
    if (static_cast<int>(out.size()) == slots) break;
    if (rec.resolved_id) {
      if (!placed.insert(*rec.resolved_id).second) continue;
      out.push_back({rec.resolved_id, {}, rec.display()});
    } else {
      out.push_back({std::nullopt, rec.genre_set(), rec.display()});
    }
  }
  for (auto id : lstm_topk) {
    if (static_cast<int>(out.size()) == slots) break;
    if (placed.insert(id).second) out.push_back({id, {}, {}});
  }
  while (static_cast<int>(out.size()) < slots) out.push_back({});
  return out;
}

enum class EvalMode { strict, window };

inline std::string_view to_string(EvalMode m) { return m == EvalMode::strict ? "strict" : "window"; }

inline EvalMode parse_eval_mode(std::string_view s) {
  if (s == "strict") return EvalMode::strict;
  if (s == "window") return EvalMode::window;
  throw ConfigError("eval mode must be strict or window, got \"" + std::string(s) + "\"");
}

struct EvalCase {
  UserId user_id = 0;
  std::vector<Slot> candidates;      // final ranked order
  MovieId truth = 0;                 // immediate next movie
  std::vector<MovieId> truth_window; // the 5 held-out movies (window mode)
  GenreSet top1_genres;              // genres of candidates[0]
  GenreSet truth_genres;
  int llm_titles = 0;
  int unresolved_titles = 0;
};

/// 1-based rank of the first slot that matches the truth, if any.
inline std::optional<int> hit_rank(const EvalCase& c, EvalMode mode = EvalMode::strict) {
  for (std::size_t i = 0; i < c.candidates.size(); ++i) {
    const auto& m = c.candidates[i].movie;
    if (!m) continue;
    const bool hit = mode == EvalMode::strict
                         ? *m == c.truth
                         : std::find(c.truth_window.begin(), c.truth_window.end(), *m) !=
                               c.truth_window.end();
    if (hit) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

namespace detail {
inline void check_metric_args(std::size_t cases, int k) {
  if (cases == 0) throw UndefinedMetric("metric over an empty case set");
  if (k < 1 || k > kCandidateSlots) throw std::invalid_argument("k must be in [1, 5]");
}
}  // namespace detail

inline Rational hr_at_k(std::span<const EvalCase> cases, int k, EvalMode mode = EvalMode::strict) {
  detail::check_metric_args(cases.size(), k);
  std::int64_t hits = 0;
  for (const auto& c : cases) {
    if (auto r = hit_rank(c, mode); r && *r <= k) ++hits;
  }
  return Rational::make(hits, static_cast<std::int64_t>(cases.size()));
}

/// Counts of cases by hit rank (1..k) out of `cases`; the NDCG value is
/// sum_r counts[r-1] / log2(r + 1), divided by `cases`.
struct RankHistogram {
  std::vector<std::int64_t> counts;
  std::int64_t cases = 0;

  double value() const {
    double dcg = 0;
    for (std::size_t r = 1; r <= counts.size(); ++r) {
      if (counts[r - 1] != 0) dcg += static_cast<double>(counts[r - 1]) / std::log2(static_cast<double>(r) + 1.0);
    }
    return dcg / static_cast<double>(cases);
  }
  bool operator==(const RankHistogram&) const = default;
};

inline RankHistogram ndcg_at_k(std::span<const EvalCase> cases, int k,
                               EvalMode mode = EvalMode::strict) {
  detail::check_metric_args(cases.size(), k);
  RankHistogram h{std::vector<std::int64_t>(k, 0), static_cast<std::int64_t>(cases.size())};
  for (const auto& c : cases) {
    if (auto r = hit_rank(c, mode); r && *r <= k) ++h.counts[*r - 1];
  }
  return h;
}

/// |A n B| / |A u B|. Throws invalid_argument when either set is empty.
inline Rational genre_jaccard(GenreSet rec, GenreSet truth) {
  if (rec.empty() || truth.empty()) throw std::invalid_argument("genre_jaccard: empty genre set");
  return Rational::make(static_cast<std::int64_t>((rec & truth).size()),
                        static_cast<std::int64_t>((rec | truth).size()));
}

struct JaccardSummary {
  std::optional<Rational> mean;  // empty when every case was excluded
  std::int64_t included = 0;
  std::int64_t excluded = 0;     // top-1 had no usable genres
};

inline JaccardSummary mean_genre_jaccard(std::span<const EvalCase> cases) {
  JaccardSummary s;
  Rational sum;
  for (const auto& c : cases) {
    if (c.top1_genres.empty() || c.truth_genres.empty()) {
      ++s.excluded;
      continue;
    }
    sum = sum + genre_jaccard(c.top1_genres, c.truth_genres);
    ++s.included;
  }
  if (s.included > 0) s.mean = sum.divided_by(s.included);
  return s;
}

/// Fraction of windows whose target is among the model's top-k classes.
template <typename T>
Rational lstm_topk_accuracy(const LstmModel<T>& model, std::span<const ClassWindow> windows,
                            const FeatureTable& table, int k, int batch_size = 256) {
  if (windows.empty()) throw UndefinedMetric("top-k accuracy over no windows");
  if (k < 1 || k > model.config.classes) throw std::invalid_argument("k must be in [1, classes]");
  std::int64_t hits = 0;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const auto n = std::min<std::size_t>(batch_size, windows.size() - start);
    const auto batch = make_batch(windows.subspan(start, n), table);
    const auto probs = forward(model, batch);
    for (std::size_t b = 0; b < n; ++b) {
      hits += detail::target_rank(probs, static_cast<Eigen::Index>(b), batch.targets[b]) < k;
    }
  }
  return Rational::make(hits, static_cast<std::int64_t>(windows.size()));
}

struct EvalReport {
  std::string variant;
  std::int64_t cases = 0;
  Rational hr1, hr5;
  RankHistogram ndcg1, ndcg5;
  JaccardSummary jaccard;
  Rational unresolved_rate;  // unresolved LLM titles / all LLM titles
  std::int64_t fallbacks = 0;
};

inline EvalReport make_report(std::string variant, std::span<const EvalCase> cases,
                              EvalMode mode = EvalMode::strict, std::int64_t fallbacks = 0) {
  EvalReport r;
  r.variant = std::move(variant);
  r.cases = static_cast<std::int64_t>(cases.size());
  r.hr1 = hr_at_k(cases, 1, mode);
  r.hr5 = hr_at_k(cases, 5, mode);
  r.ndcg1 = ndcg_at_k(cases, 1, mode);
  r.ndcg5 = ndcg_at_k(cases, 5, mode);
  r.jaccard = mean_genre_jaccard(cases);
  std::int64_t titles = 0, unresolved = 0;
  for (const auto& c : cases) {
    titles += c.llm_titles;
    unresolved += c.unresolved_titles;
  }
  r.unresolved_rate = titles == 0 ? Rational{} : Rational::make(unresolved, titles);
  r.fallbacks = fallbacks;
  return r;
}

// ---------------------------------------------------------------- baselines

/// The k most frequent movies in `train`, ties toward the lower id.
inline std::vector<MovieId> most_popular(std::span<const Interaction> train, int k) {
  std::unordered_map<MovieId, std::int64_t> counts;
  for (const auto& r : train) ++counts[r.movie_id];
  std::vector<std::pair<MovieId, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<MovieId> out;
  for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

struct BaselineCase {
  UserId user_id = 0;
  std::vector<MovieId> recent;  // last context movies (up to 5), chronological
  MovieId truth = 0;
  std::vector<MovieId> truth_window;
};

namespace detail {
inline EvalCase baseline_case(const BaselineCase& b, std::span<const MovieId> ranked,
                              const Catalog& catalog) {
  EvalCase c;
  c.user_id = b.user_id;
  for (auto id : ranked) c.candidates.push_back({id, {}, {}});
  while (c.candidates.size() < static_cast<std::size_t>(kCandidateSlots)) c.candidates.push_back({});
  c.truth = b.truth;
  c.truth_window = b.truth_window;
  if (!ranked.empty() && catalog.contains(ranked[0])) c.top1_genres = catalog.movie(ranked[0]).genres;
  if (catalog.contains(b.truth)) c.truth_genres = catalog.movie(b.truth).genres;
  return c;
}
}  // namespace detail

inline EvalReport mostpop_baseline(std::span<const Interaction> train,
                                   std::span<const BaselineCase> cases, const Catalog& catalog,
                                   EvalMode mode = EvalMode::strict, int k = kCandidateSlots) {
  const auto top = most_popular(train, k);
  std::vector<EvalCase> scored;
  for (const auto& b : cases) scored.push_back(detail::baseline_case(b, top, catalog));
  return make_report("MostPop", scored, mode);
}

struct SknnResult {
  std::vector<MovieId> ranked;
  bool fallback = false;  // no neighbour overlapped, MostPop used outright
  bool filled = false;    // MostPop topped up a short neighbour list
};

/// Session kNN over binary history sets. sim(R, H) = |R n H| / sqrt(|R| |H|)
/// between the recent set R and each training history H; the `neighbors`
/// most similar histories vote for their items with weight sim. Items in R
/// are not recommended.
class SknnIndex {
 public:
  SknnIndex(std::span<const UserHistory> train, int neighbors = 100)
      : neighbors_(neighbors) {
    if (neighbors < 1) throw std::invalid_argument("neighbors must be >= 1");
    for (const auto& h : train) {
      std::vector<MovieId> items;
      for (const auto& e : h.events) items.push_back(e.movie_id);
      std::sort(items.begin(), items.end());
      items.erase(std::unique(items.begin(), items.end()), items.end());
      if (items.empty()) continue;
      const auto row = histories_.size();
      for (auto id : items) postings_[id].push_back(row);
      users_.push_back(h.user_id);
      histories_.push_back(std::move(items));
    }
    std::vector<Interaction> flat;
    for (const auto& h : train) flat.insert(flat.end(), h.events.begin(), h.events.end());
    popular_ = most_popular(flat, static_cast<int>(postings_.size()));
  }

  SknnResult recommend(std::span<const MovieId> recent, int k) const {
    std::vector<MovieId> r(recent.begin(), recent.end());
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());

    std::map<std::size_t, int> overlap;  // history row -> |R n H|
    for (auto id : r) {
      if (auto it = postings_.find(id); it != postings_.end()) {
        for (auto row : it->second) ++overlap[row];
      }
    }
    struct Neighbor {
      std::size_t row;
      double sim;
    };
    std::vector<Neighbor> nbrs;
    for (const auto& [row, common] : overlap) {
      nbrs.push_back({row, common / std::sqrt(static_cast<double>(r.size()) *
                                              static_cast<double>(histories_[row].size()))});
    }
    std::sort(nbrs.begin(), nbrs.end(), [&](const Neighbor& a, const Neighbor& b) {
      return a.sim != b.sim ? a.sim > b.sim : users_[a.row] < users_[b.row];
    });
    if (nbrs.size() > static_cast<std::size_t>(neighbors_)) nbrs.resize(neighbors_);

    std::map<MovieId, double> score;
    for (const auto& n : nbrs) {
      for (auto id : histories_[n.row]) {
        if (!std::binary_search(r.begin(), r.end(), id)) score[id] += n.sim;
      }
    }
    std::vector<std::pair<MovieId, double>> ranked(score.begin(), score.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });

    SknnResult out;
    for (const auto& [id, s] : ranked) {
      if (static_cast<int>(out.ranked.size()) == k) break;
      out.ranked.push_back(id);
    }
    out.fallback = out.ranked.empty();
    if (static_cast<int>(out.ranked.size()) < k) {
      out.filled = !out.fallback;
      for (auto id : popular_) {
        if (static_cast<int>(out.ranked.size()) == k) break;
        if (std::binary_search(r.begin(), r.end(), id) ||
            std::find(out.ranked.begin(), out.ranked.end(), id) != out.ranked.end()) {
          continue;
        }
        out.ranked.push_back(id);
      }
    }
    return out;
  }

 private:
  int neighbors_;
  std::vector<UserId> users_;
  std::vector<std::vector<MovieId>> histories_;
  std::unordered_map<MovieId, std::vector<std::size_t>> postings_;
  std::vector<MovieId> popular_;
};

inline EvalReport sknn_baseline(std::span<const UserHistory> train,
                                std::span<const BaselineCase> cases, const Catalog& catalog,
                                EvalMode mode = EvalMode::strict, int k = kCandidateSlots,
                                int neighbors = 100) {
  const SknnIndex index(train, neighbors);
  std::vector<EvalCase> scored;
  std::int64_t fallbacks = 0;
  for (const auto& b : cases) {
    const auto res = index.recommend(b.recent, k);
    fallbacks += res.fallback;
    scored.push_back(detail::baseline_case(b, res.ranked, catalog));
  }
  return make_report("SKNN", scored, mode, fallbacks);
}

// ---------------------------------------------------------------- rendering

inline std::string fmt_metric(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// One row per report. Exact fractions follow the decimal columns so reruns
/// can be compared without rounding.
inline std::string reports_to_csv(std::span<const EvalReport> reports,
                                  const std::vector<std::string>& header_comments = {}) {
  std::ostringstream os;
  for (const auto& c : header_comments) os << "# " << c << '\n';
  os << "variant,cases,hr@1,hr@5,ndcg@1,ndcg@5,genre_jaccard,jaccard_cases,jaccard_excluded,"
        "unresolved_rate,fallbacks,hr@1_exact,hr@5_exact,genre_jaccard_exact\n";
  for (const auto& r : reports) {
    os << r.variant << ',' << r.cases << ',' << fmt_metric(r.hr1.value()) << ','
       << fmt_metric(r.hr5.value()) << ',' << fmt_metric(r.ndcg1.value()) << ','
       << fmt_metric(r.ndcg5.value()) << ','
       << (r.jaccard.mean ? fmt_metric(r.jaccard.mean->value()) : "NA") << ','
       << r.jaccard.included << ',' << r.jaccard.excluded << ','
       << fmt_metric(r.unresolved_rate.value()) << ',' << r.fallbacks << ',' << r.hr1 << ','
       << r.hr5 << ',';
    if (r.jaccard.mean) os << *r.jaccard.mean;
    else os << "NA";
    os << '\n';
  }
  return os.str();
}

/// Variant x metric comparison table.
inline std::string reports_to_table(std::span<const EvalReport> reports) {
  std::size_t width = 7;
  for (const auto& r : reports) width = std::max(width, r.variant.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Variant";
  for (const char* h : {"HR@1", "HR@5", "NDCG@1", "NDCG@5", "GenreSim"}) os << "  " << std::setw(8) << h;
  os << '\n' << std::string(width + 5 * 10, '-') << '\n';
  for (const auto& r : reports) {
    os << std::setw(static_cast<int>(width)) << r.variant;
    for (double v : {r.hr1.value(), r.hr5.value(), r.ndcg1.value(), r.ndcg5.value()}) {
      os << "  " << std::setw(8) << fmt_metric(v, 4);
    }
    os << "  " << std::setw(8) << (r.jaccard.mean ? fmt_metric(r.jaccard.mean->value(), 4) : "NA");
    os << '\n';
  }
  return os.str();
}

}  // namespace dualrec
