#pragma once

/// @file prompting.hpp
/// @brief Inference prompt rendering and the instruction-tuning dataset
/// exporter (JSON lines, keys instruction/input/output).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualrec/dataset.hpp"
#include "dualrec/error.hpp"
#include "dualrec/random.hpp"

namespace dualrec {

inline constexpr std::string_view kPromptHeader = "Below is a user's movie watching history:";
inline constexpr std::string_view kPromptLstmLead = "Based on this, the system (LSTM) recommends: ";
inline constexpr std::string_view kPromptInstruction =
    "Now, as a helpful assistant, recommend 3 more full movie titles with release "
    "years and genres that this user would likely enjoy next.";
inline constexpr std::string_view kFinetuneInstruction =
    "Given the user's watched movies and the LSTM recommendation, recommend 3 more "
    "movies the user is likely to enjoy.";

inline constexpr int kPromptRecent = 5;
inline constexpr int kFinetuneTargets = 3;

struct PromptContext {
  std::vector<Movie> recent;  // exactly 5, chronological
  Movie lstm_top1;
};

/// Header, five "- Title (Year) (Genre, ...)" lines, the LSTM suggestion and
/// the closing instruction, one per line.
inline std::string build_inference_prompt(const PromptContext& ctx) {
  if (ctx.recent.size() != kPromptRecent) {
    throw std::invalid_argument("build_inference_prompt: expected exactly 5 recent movies");
  }
  std::string out(kPromptHeader);
  out += '\n';
  for (const auto& m : ctx.recent) {
    out += "- " + title_with_year(m) + " (" + m.genres.join(", ") + ")\n";
  }
  out += std::string(kPromptLstmLead) + title_with_year(ctx.lstm_top1) + ".\n";
  out += kPromptInstruction;
  return out;
}

struct FinetuneExample {
  std::string instruction;
  std::string input;
  std::string output;

  bool operator==(const FinetuneExample&) const = default;

  nlohmann::ordered_json to_json() const {
    return {{"instruction", instruction}, {"input", input}, {"output", output}};
  }
};

struct FinetuneOptions {
  bool genre_annotated = false;  // "Title (Genre, ...)" in the watched list
};

/// Indices of 3 of the 5 truth slots, sampled without replacement, ascending.
inline std::vector<int> sample_targets(std::uint64_t seed, int pool = kTruthWindow,
                                       int take = kFinetuneTargets) {
  std::vector<int> idx(pool);
  for (int i = 0; i < pool; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < take; ++i) {
    const auto j = i + static_cast<int>(uniform_below(rng, pool - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// One instruction/input/output record: the last five context movies and the
/// LSTM suggestion as input, three of the five held-out movies as output.
/// Returns nullopt when preconditions fail or a target would leak into the
/// input list.
inline std::optional<FinetuneExample> build_finetune_example(
    std::span<const Movie> context, const Movie& lstm_top1,
    std::span<const Movie> truth_window, std::uint64_t seed,
    const FinetuneOptions& opts = {}) {
  if (context.size() < static_cast<std::size_t>(kPromptRecent) ||
      truth_window.size() != static_cast<std::size_t>(kTruthWindow)) {
    return std::nullopt;
  }
  const auto recent = context.subspan(context.size() - kPromptRecent);
  FinetuneExample ex;
  ex.instruction = std::string(kFinetuneInstruction);
  ex.input = "- Watched: ";
  for (std::size_t i = 0; i < recent.size(); ++i) {
    if (i > 0) ex.input += ", ";
    ex.input += title_with_year(recent[i]);
    if (opts.genre_annotated) ex.input += " (" + recent[i].genres.join(", ") + ")";
  }
  ex.input += "\n- LSTM Suggests: " + title_with_year(lstm_top1);

  for (int k : sample_targets(seed)) {
    const auto& target = truth_window[k];
    for (const auto& seen : recent) {
      if (seen.movie_id == target.movie_id) return std::nullopt;
    }
    if (!ex.output.empty()) ex.output += '\n';
    ex.output += "- " + title_with_year(target);
  }
  return ex;
}

struct ExportSummary {
  std::size_t written = 0;
  std::size_t ineligible = 0;  // fewer than 10 events
  std::size_t skipped = 0;     // builder rejected the example
};

inline constexpr int kFinetuneMinEvents = kPromptRecent + kTruthWindow;

// Given a user's context events, the LSTM's top-1 movie.
using SuggestFn = std::function<MovieId(std::span<const Interaction> context)>;

/// Writes one JSON line per eligible user (>= 10 events), ascending user id.
/// The file is written to a temporary path and renamed into place; on any
/// failure the partial file is removed and the error rethrown.
inline ExportSummary export_finetune_dataset(std::vector<UserHistory> users,
                                             const Catalog& catalog,
                                             const SuggestFn& suggest,
                                             std::uint64_t seed,
                                             const std::string& path,
                                             const FinetuneOptions& opts = {}) {
  std::sort(users.begin(), users.end(),
            [](const auto& a, const auto& b) { return a.user_id < b.user_id; });
  const std::string tmp = path + ".tmp";
  ExportSummary summary;
  try {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    for (const auto& user : users) {
      if (user.events.size() < static_cast<std::size_t>(kFinetuneMinEvents)) {
        ++summary.ineligible;
        continue;
      }
      const auto split = holdout_for_llm(user);
      std::vector<Movie> context, truth;
      for (const auto& e : split->context) context.push_back(catalog.movie(e.movie_id));
      for (const auto& e : split->truth) truth.push_back(catalog.movie(e.movie_id));
      const auto top1 = suggest(split->context);
      auto ex = build_finetune_example(context, catalog.movie(top1), truth,
                                       derive_seed(seed, static_cast<std::uint64_t>(user.user_id)),
                                       opts);
      if (!ex) {
        ++summary.skipped;
        continue;
      }
      out << ex->to_json().dump() << '\n';
      ++summary.written;
    }
    out.flush();
    if (!out) throw DataError("write failed: " + tmp);
    out.close();
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    std::filesystem::remove(path, ec);
    throw;
  }
  return summary;
}

}  // namespace dualrec
