#pragma once

// Brute-force recount of the ranking and genre metrics, used to check the
// harness on randomized cases.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dualrec/eval.hpp"

namespace dualrec::testing {

// Slots drawn from a small id range so hits are common; some unresolved.
inline std::vector<EvalCase> random_cases(std::mt19937_64& rng, int n) {
  std::vector<EvalCase> cases;
  for (int i = 0; i < n; ++i) {
    EvalCase c;
    c.user_id = i;
    for (int s = 0; s < 5; ++s) {
      if (rng() % 7 == 0) c.candidates.push_back({std::nullopt, {}, {}});
      else c.candidates.push_back({static_cast<MovieId>(1 + rng() % 12), {}, {}});
    }
    c.truth = static_cast<MovieId>(1 + rng() % 12);
    for (int w = 0; w < 5; ++w) c.truth_window.push_back(w == 0 ? c.truth : static_cast<MovieId>(1 + rng() % 12));
    c.top1_genres = GenreSet(static_cast<std::uint32_t>(rng() % (1u << 18)) & (rng() % 4 == 0 ? 0u : 0x3FFFFu));
    c.truth_genres = GenreSet(static_cast<std::uint32_t>(1 + rng() % ((1u << 18) - 1)));
    c.llm_titles = 3;
    c.unresolved_titles = static_cast<int>(rng() % 4);
    cases.push_back(c);
  }
  return cases;
}

// First matching slot by plain scan, 0 for a miss.
inline int oracle_rank(const EvalCase& c, bool window) {
  for (int i = 0; i < 5; ++i) {
    const auto& m = c.candidates[i].movie;
    if (!m.has_value()) continue;
    bool hit = false;
    if (window) {
      for (auto t : c.truth_window) hit = hit || t == *m;
    } else {
      hit = *m == c.truth;
    }
    if (hit) return i + 1;
  }
  return 0;
}

// Compares every metric against the recount; describes the first mismatch.
inline std::optional<std::string> oracle_mismatch(const std::vector<EvalCase>& cases) {
  constexpr std::int64_t L = 12252240;  // lcm(1..18)
  const auto n = static_cast<std::int64_t>(cases.size());
  for (bool window : {false, true}) {
    const auto mode = window ? EvalMode::window : EvalMode::strict;
    for (int k : {1, 5}) {
      std::int64_t hits = 0;
      std::vector<std::int64_t> hist(k, 0);
      double dcg = 0;
      for (const auto& c : cases) {
        const int r = oracle_rank(c, window);
        if (r >= 1 && r <= k) {
          ++hits;
          ++hist[r - 1];
        }
      }
      for (int r = 1; r <= k; ++r) dcg += hist[r - 1] / std::log2(r + 1.0);
      const std::string at = std::string(to_string(mode)) + " k=" + std::to_string(k);
      const auto hr = hr_at_k(cases, k, mode);
      if (static_cast<__int128>(hr.num) * n != static_cast<__int128>(hits) * hr.den) return "HR " + at;
      const auto nd = ndcg_at_k(cases, k, mode);
      if (nd.counts != hist || nd.cases != n) return "NDCG counts " + at;
      if (std::abs(nd.value() - dcg / n) > 1e-15) return "NDCG value " + at;
    }
    if (ndcg_at_k(cases, 1, mode).value() != hr_at_k(cases, 1, mode).value()) {
      return "NDCG@1 != HR@1";
    }
  }
  // Jaccard over label sets, summed over a common denominator.
  std::int64_t sum_scaled = 0, included = 0;
  for (const auto& c : cases) {
    const auto a = c.top1_genres.labels();
    const auto b = c.truth_genres.labels();
    if (a.empty() || b.empty()) continue;
    std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end()), uni = sa;
    uni.insert(sb.begin(), sb.end());
    std::int64_t inter = 0;
    for (const auto& g : sa) inter += static_cast<std::int64_t>(sb.count(g));
    sum_scaled += inter * (L / static_cast<std::int64_t>(uni.size()));
    ++included;
  }
  const auto j = mean_genre_jaccard(cases);
  if (j.included != included || j.excluded != n - included) return "Jaccard case counts";
  if (included == 0) {
    if (j.mean.has_value()) return "Jaccard defined on no cases";
  } else if (!j.mean || static_cast<__int128>(j.mean->num) * L * included !=
                            static_cast<__int128>(sum_scaled) * j.mean->den) {
    return "Jaccard mean";
  }
  return std::nullopt;
}

}  // namespace dualrec::testing
