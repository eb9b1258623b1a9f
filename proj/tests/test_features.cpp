#include <gtest/gtest.h>

#include <set>

#include "dualrec/features.hpp"
#include "synthetic.hpp"

namespace dualrec {
namespace {

Catalog catalog_of(const std::vector<std::string>& titles) {
  Catalog c;
  MovieId id = 1;
  for (const auto& t : titles) {
    GenreSet g;
    g.insert(7);
    c.add(Movie{id++, t, 1990, g}, 1);
  }
  return c;
}

TEST(TitleWords, Normalization) {
  EXPECT_EQ(title_words("Bug's Life, A (1998)"),
            (std::vector<std::string>{"bugs", "life", "a", "1998"}));
  EXPECT_EQ(title_words("Bug's Life, A (1998)", false),
            (std::vector<std::string>{"bugs", "life", "a"}));
  EXPECT_EQ(title_words("  Star Wars:   Episode IV "),
            (std::vector<std::string>{"star", "wars", "episode", "iv"}));
}

TEST(BuildVocab, FrequencyThenFirstAppearance) {
  const auto vocab = build_vocab(catalog_of({"A B", "B C"}));
  ASSERT_EQ(vocab.size(), 3u);
  EXPECT_EQ(vocab.id("b"), 1);
  EXPECT_EQ(vocab.id("a"), 2);
  EXPECT_EQ(vocab.id("c"), 3);
  EXPECT_EQ(vocab.id("zzz"), 0);
  EXPECT_EQ(vocab.serialize(), "b\t1\na\t2\nc\t3\n");
}

TEST(BuildVocab, CapsAtFiveThousand) {
  std::vector<std::string> titles;
  for (int i = 0; i < 3000; ++i) {
    titles.push_back("w" + std::to_string(2 * i) + " w" + std::to_string(2 * i + 1));
  }
  const auto vocab = build_vocab(catalog_of(titles));
  EXPECT_EQ(vocab.size(), 5000u);
  EXPECT_EQ(vocab.id("w0"), 1);
  EXPECT_EQ(vocab.id("w5999"), 0);
}

TEST(BuildVocab, Deterministic) {
  const auto catalog = testing::toy_catalog(200);
  EXPECT_EQ(build_vocab(catalog).serialize(), build_vocab(catalog).serialize());
  EXPECT_THROW(build_vocab(Catalog{}), std::invalid_argument);
}

TEST(TokenizeTitle, PadsDropsAndTruncates) {
  TitleVocab vocab({"a", "b", "c", "toy", "d", "e", "f", "g", "story"}, true);
  EXPECT_EQ(vocab.id("toy"), 4);
  EXPECT_EQ(vocab.id("story"), 9);
  EXPECT_EQ(tokenize_title("Toy Story", vocab),
            (std::vector<TokenId>{4, 9, 0, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(tokenize_title("Unknown Words Only", vocab), std::vector<TokenId>(10, 0));
  EXPECT_EQ(tokenize_title("a b c toy d e f g story a b c", vocab),
            (std::vector<TokenId>{1, 2, 3, 4, 5, 6, 7, 8, 9, 1}));
  EXPECT_EQ(tokenize_title("toy x story", vocab, 3), (std::vector<TokenId>{4, 9, 0}));
}

TEST(TokenizeTitle, LengthAndRangeProperty) {
  const auto catalog = testing::toy_catalog(300);
  const auto vocab = build_vocab(catalog, {.max_words = 25});
  for (const auto& m : catalog.movies()) {
    const auto tokens = tokenize_title(m.title, vocab);
    ASSERT_EQ(tokens.size(), 10u);
    for (auto t : tokens) {
      EXPECT_GE(t, 0);
      EXPECT_LE(t, static_cast<TokenId>(vocab.size()));
    }
  }
}

TEST(EncodeGenres, UniverseOrder) {
  const std::vector<std::string> ac = {"Animation", "Children's"};
  const auto v = encode_genres(std::span<const std::string>(ac));
  for (std::size_t g = 0; g < kGenreCount; ++g) EXPECT_EQ(v[g], (g == 2 || g == 3) ? 1 : 0);

  std::vector<std::string> all(kGenres.begin(), kGenres.end());
  const auto ones = encode_genres(std::span<const std::string>(all));
  for (auto b : ones) EXPECT_EQ(b, 1);

  const std::vector<std::string> bad = {"Cooking"};
  EXPECT_THROW(encode_genres(std::span<const std::string>(bad)), std::invalid_argument);
  EXPECT_EQ(kGenres.front(), "Action");
  EXPECT_EQ(kGenres.back(), "Western");
}

TEST(EncodeGenres, InjectiveOverAllSets) {
  // Exhaustive over 2^18 sets: distinct sets give distinct vectors.
  std::set<GenreVec> seen;
  for (std::uint32_t bits = 0; bits < (1u << kGenreCount); ++bits) {
    seen.insert(encode_genres(GenreSet(bits)));
  }
  EXPECT_EQ(seen.size(), 1u << kGenreCount);
}

TEST(EncodeWindow, ShapeAndOrder) {
  const auto catalog = testing::toy_catalog(40);
  const auto vocab = build_vocab(catalog);
  Window w;
  for (int i = 0; i < 30; ++i) w.inputs.push_back(i % 2 == 0 ? 3 : 8);
  w.target = 12;
  const auto enc = encode_window(w, catalog, vocab);
  ASSERT_EQ(enc.steps.size(), 30u);
  EXPECT_EQ(enc.target, 11);
  const auto& m3 = catalog.movie(3);
  const auto& m8 = catalog.movie(8);
  for (int i = 0; i < 30; ++i) {
    const auto& m = i % 2 == 0 ? m3 : m8;
    EXPECT_EQ(enc.steps[i].class_index, m.movie_id - 1);
    EXPECT_EQ(enc.steps[i].title_tokens, tokenize_title(m.title, vocab));
    EXPECT_EQ(enc.steps[i].genre_vec, encode_genres(m.genres));
    int bits = 0;
    for (auto b : enc.steps[i].genre_vec) bits += b;
    EXPECT_GE(bits, 1);
  }
  Window same;
  same.inputs.assign(30, 5);
  same.target = 5;
  const auto rep = encode_window(same, catalog, vocab);
  for (const auto& s : rep.steps) EXPECT_EQ(s, rep.steps[0]);

  Window missing = same;
  missing.inputs[4] = 999;
  EXPECT_THROW(encode_window(missing, catalog, vocab), std::logic_error);
}

TEST(FeatureTable, ExpandMatchesEncodeWindow) {
  const auto catalog = testing::toy_catalog(15);
  const auto vocab = build_vocab(catalog);
  const FeatureTable table(catalog, vocab);
  Window w;
  for (int i = 0; i < 30; ++i) w.inputs.push_back(1 + (i * 7) % 15);
  w.target = 4;
  const auto direct = encode_window(w, catalog, vocab);
  const auto via = table.expand(to_class_window(w, catalog));
  EXPECT_EQ(direct.steps, via.steps);
  EXPECT_EQ(direct.target, via.target);
}

}  // namespace
}  // namespace dualrec
