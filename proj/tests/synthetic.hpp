#pragma once

// Synthetic catalogs, histories and MovieLens-format corpora for tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dualrec/dataset.hpp"
#include "dualrec/features.hpp"
#include "dualrec/random.hpp"

namespace dualrec::testing {

// Movie ids 1..n with distinct two-word titles and one or two genres each.
inline std::vector<Movie> toy_movies(int n) {
  static const char* kWords[] = {"red",   "blue",  "night", "river", "star",
                                 "ghost", "city",  "storm", "dream", "iron",
                                 "glass", "wolf",  "queen", "road",  "fire",
                                 "stone", "winter", "light", "shadow", "sea"};
  std::vector<Movie> movies;
  for (int i = 1; i <= n; ++i) {
    Movie m;
    m.movie_id = i;
    m.year = 1950 + (i * 7) % 50;
    m.title = std::string(kWords[i % 20]) + " " + kWords[(i / 20 + i * 3) % 20] +
              " " + std::to_string(i) + " (" + std::to_string(m.year) + ")";
    m.genres.insert(static_cast<std::size_t>(i % kGenreCount));
    if (i % 3 == 0) m.genres.insert(static_cast<std::size_t>((i * 5 + 1) % kGenreCount));
    movies.push_back(m);
  }
  return movies;
}

// Catalog over toy_movies(n), class index = movie_id - 1.
inline Catalog toy_catalog(int n) {
  Catalog c;
  for (auto& m : toy_movies(n)) c.add(m, 1000 - m.movie_id);
  return c;
}

// Windows over `classes` classes whose target equals the last input.
inline std::vector<ClassWindow> copy_last_windows(int count, int classes, int seq_len,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ClassWindow> out;
  for (int i = 0; i < count; ++i) {
    ClassWindow w;
    for (int t = 0; t < seq_len; ++t) {
      w.inputs.push_back(static_cast<ClassIndex>(uniform_below(rng, classes)));
    }
    w.target = w.inputs.back();
    out.push_back(std::move(w));
  }
  return out;
}

// Uniformly random inputs and targets.
inline std::vector<ClassWindow> random_windows(int count, int classes, int seq_len,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ClassWindow> out;
  for (int i = 0; i < count; ++i) {
    ClassWindow w;
    for (int t = 0; t < seq_len; ++t) {
      w.inputs.push_back(static_cast<ClassIndex>(uniform_below(rng, classes)));
    }
    w.target = static_cast<ClassIndex>(uniform_below(rng, classes));
    out.push_back(std::move(w));
  }
  return out;
}

struct Corpus {
  std::string ratings;  // ratings.dat contents
  std::string movies;   // movies.dat contents
};

// MovieLens-1M formatted corpus. Each user watches a run of consecutive
// movie ids starting at a random offset, so histories are learnable.
inline Corpus synthetic_corpus(int users, int movies, int min_len, int max_len,
                               std::uint64_t seed) {
  Corpus c;
  c.movies = serialize_movies(toy_movies(movies));
  std::mt19937_64 rng(seed);
  std::vector<Interaction> rows;
  for (int u = 1; u <= users; ++u) {
    const int len = min_len + static_cast<int>(uniform_below(rng, max_len - min_len + 1));
    int movie = 1 + static_cast<int>(uniform_below(rng, movies));
    std::int64_t ts = 978300000 + static_cast<std::int64_t>(u) * 10000;
    std::vector<int> seen(movies + 1, 0);
    for (int i = 0; i < len; ++i) {
      int tries = 0;
      while (seen[movie] && tries++ < movies) movie = movie % movies + 1;
      if (seen[movie]) break;
      seen[movie] = 1;
      rows.push_back({u, movie, 1 + static_cast<int>(uniform_below(rng, 5)), ts});
      ts += 1 + static_cast<std::int64_t>(uniform_below(rng, 3));
      movie = movie % movies + 1 + (uniform_below(rng, 4) == 0 ? 1 : 0);
      if (movie > movies) movie -= movies;
    }
  }
  c.ratings = serialize_ratings(rows);
  return c;
}

}  // namespace dualrec::testing
