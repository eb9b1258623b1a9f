#pragma once

// A throwaway directory with a synthetic MovieLens corpus and a small run
// config, driven through the command-line front end.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualrec/cli.hpp"
#include "synthetic.hpp"

namespace dualrec::testing {

inline nlohmann::json toy_config_json(std::uint64_t seed) {
  return {
      {"seed", seed},
      {"data", {{"ratings", "ratings.dat"}, {"movies", "movies.dat"}}},
      {"output_dir", "out"},
      {"top_k_movies", 50},
      {"window_stride", 3},
      {"lstm",
       {{"seq_len", 8}, {"movie_embed_dim", 8}, {"word_embed_dim", 4}, {"genre_dense_dim", 4},
        {"lstm1_units", 12}, {"lstm2_units", 8}, {"epochs", 2}, {"batch_size", 32},
        {"learning_rate", 0.005}}},
      {"llm", {{"provider", "mock"}, {"model", "mock-model"}, {"max_in_flight", 3}}},
      {"embedding", {{"provider", "mock"}}},
      {"eval", {{"mode", "strict"}, {"rerank", true}}},
  };
}

class ToyRun {
 public:
  explicit ToyRun(const std::string& name, std::uint64_t seed = 11, int users = 120)
      : dir_(std::filesystem::temp_directory_path() / ("dualrec_" + name)) {
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
    const auto corpus = synthetic_corpus(users, 60, 15, 40, seed);
    write("ratings.dat", corpus.ratings);
    write("movies.dat", corpus.movies);
    set_config(toy_config_json(seed));
  }
  ~ToyRun() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  ToyRun(const ToyRun&) = delete;
  ToyRun& operator=(const ToyRun&) = delete;

  void set_config(const nlohmann::json& j) {
    config_json_ = j;
    write("config.json", j.dump(2));
  }
  const nlohmann::json& config_json() const { return config_json_; }
  std::filesystem::path config_path() const { return dir_ / "config.json"; }
  std::filesystem::path out(std::string_view name) const { return dir_ / "out" / name; }
  const std::filesystem::path& dir() const { return dir_; }
  RunConfig config() const { return load_config(config_path()); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name, std::ios::binary | std::ios::trunc) << text;
  }
  std::string read(const std::filesystem::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  /// Runs `dualrec -c config.json <args...>`; captures stdout and stderr.
  int cli(std::vector<std::string> args) {
    args.insert(args.begin(), {"dualrec", "-c", config_path().string()});
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    stdout_ = o.str();
    stderr_ = e.str();
    return rc;
  }
  const std::string& stdout_text() const { return stdout_; }
  const std::string& stderr_text() const { return stderr_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json config_json_;
  std::string stdout_, stderr_;
};

}  // namespace dualrec::testing
