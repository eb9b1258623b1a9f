// Writes a small MovieLens-format corpus (ratings.dat, movies.dat) for trying
// the pipeline without the real dataset.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a toy MovieLens-format corpus"};
  std::string dir = "toy";
  int users = 300, movies = 120, min_len = 20, max_len = 60;
  std::uint64_t seed = 1;
  app.add_option("dir", dir, "output directory");
  app.add_option("--users", users);
  app.add_option("--movies", movies);
  app.add_option("--min-len", min_len);
  app.add_option("--max-len", max_len);
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  const auto corpus = dualrec::testing::synthetic_corpus(users, movies, min_len, max_len, seed);
  std::filesystem::create_directories(dir);
  std::ofstream(std::filesystem::path(dir) / "ratings.dat", std::ios::binary) << corpus.ratings;
  std::ofstream(std::filesystem::path(dir) / "movies.dat", std::ios::binary) << corpus.movies;
  std::cout << "wrote " << dir << "/ratings.dat and " << dir << "/movies.dat\n";
}
