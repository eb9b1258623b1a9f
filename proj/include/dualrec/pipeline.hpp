#pragma once

/// @file pipeline.hpp
/// @brief End-to-end stages behind the command-line tool: ingest, train,
/// recommend, evaluate and fine-tune export. Every stage reads and writes
/// artifacts under the configured output directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dualrec/config.hpp"
#include "dualrec/dataset.hpp"
#include "dualrec/eval.hpp"
#include "dualrec/features.hpp"
#include "dualrec/llm_client.hpp"
#include "dualrec/lstm.hpp"
#include "dualrec/parse_recs.hpp"
#include "dualrec/prompting.hpp"
#include "dualrec/rerank.hpp"

namespace dualrec {

using Model = LstmModel<float>;

inline constexpr std::string_view kCatalogFile = "catalog.tsv";
inline constexpr std::string_view kSplitsFile = "splits.tsv";
inline constexpr std::string_view kParseReportFile = "parse_report.txt";
inline constexpr std::string_view kVocabFile = "vocab.tsv";
inline constexpr std::string_view kCheckpointFile = "model.ckpt";
inline constexpr std::string_view kTrainReportFile = "train_report.csv";
inline constexpr std::string_view kEvalCsvFile = "eval_report.csv";
inline constexpr std::string_view kEvalTableFile = "eval_table.txt";
inline constexpr std::string_view kFinetuneFile = "finetune.jsonl";

inline constexpr double kMaxParseErrorRate = 0.01;
// 5 prompt movies + 5 held-out movies.
inline constexpr int kMinEvalEvents = kPromptRecent + kTruthWindow;

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw DataError("write failed: " + path.string());
}

// ------------------------------------------------------------------- ingest

struct IngestSummary {
  ParseReport ratings;
  ParseReport movies;
  std::size_t catalog_size = 0;
  std::size_t interactions = 0;
  Split split;

  std::string describe() const {
    std::ostringstream os;
    os << "ratings: " << ratings.kept << " kept, " << ratings.skipped << " skipped\n"
       << "movies: " << movies.kept << " kept, " << movies.skipped << " skipped\n"
       << "catalog: " << catalog_size << " movies, " << interactions << " interactions\n"
       << "users: " << split.train_users.size() << " train, " << split.val_users.size()
       << " val, " << split.test_users.size() << " test\n";
    return os.str();
  }
};

struct LoadedRatings {
  FilterResult filtered;
  ParseReport ratings;
  ParseReport movies;
};

inline LoadedRatings load_and_filter(const RunConfig& cfg) {
  cfg.check_inputs_exist();
  auto ratings = parse_ratings(read_file(cfg.ratings_path.string()));
  auto movies = parse_movies(read_file(cfg.movies_path.string()));
  for (const auto* rep : {&ratings.report, &movies.report}) {
    if (rep->error_rate() > kMaxParseErrorRate) {
      throw DataError("parse error rate " + std::to_string(rep->error_rate()) +
                      " exceeds 1% (" + format_parse_report(ratings.report, movies.report) + ")");
    }
  }
  return {filter_top_k(ratings.records, movies.records, cfg.top_k_movies), ratings.report,
          movies.report};
}

inline IngestSummary run_ingest(const RunConfig& cfg) {
  auto loaded = load_and_filter(cfg);
  const auto& catalog = loaded.filtered.catalog;
  std::vector<UserId> users;
  for (const auto& h : group_histories(loaded.filtered.interactions)) users.push_back(h.user_id);
  const auto split = split_users(users, cfg.split, cfg.seeds.split);

  std::filesystem::create_directories(cfg.output_dir);
  write_text(cfg.artifact(kCatalogFile), serialize_catalog(catalog));
  write_text(cfg.artifact(kSplitsFile), serialize_split(split));
  write_text(cfg.artifact(kVocabFile), build_vocab(catalog).serialize());
  write_text(cfg.artifact(kParseReportFile),
             "# " + cfg.seeds.describe() + "\n" + format_parse_report(loaded.ratings, loaded.movies));
  return {loaded.ratings, loaded.movies, catalog.size(), loaded.filtered.interactions.size(), split};
}

// ---------------------------------------------------------------- workspace

/// Everything later stages need: the ingest artifacts plus the ratings
/// re-read and restricted to the catalog.
struct Workspace {
  RunConfig cfg;
  Catalog catalog;
  Split split;
  std::map<UserId, UserHistory> histories;
  TitleVocab vocab;
  FeatureTable table;

  std::vector<UserHistory> users_of(const std::vector<UserId>& ids) const {
    std::vector<UserHistory> out;
    for (auto u : ids) {
      if (auto it = histories.find(u); it != histories.end()) out.push_back(it->second);
    }
    return out;
  }
};

inline Workspace load_workspace(const RunConfig& cfg) {
  for (auto name : {kCatalogFile, kSplitsFile}) {
    if (!std::filesystem::exists(cfg.artifact(name))) {
      throw DataError("missing " + cfg.artifact(name).string() + " (run ingest first)");
    }
  }
  Workspace ws;
  ws.cfg = cfg;
  ws.catalog = parse_catalog(read_file(cfg.artifact(kCatalogFile).string()));
  ws.split = parse_split(read_file(cfg.artifact(kSplitsFile).string()));
  cfg.check_inputs_exist();
  const auto ratings = parse_ratings(read_file(cfg.ratings_path.string()));
  std::vector<Interaction> kept;
  for (const auto& r : ratings.records) {
    if (ws.catalog.contains(r.movie_id)) kept.push_back(r);
  }
  for (auto& h : group_histories(kept)) ws.histories.emplace(h.user_id, std::move(h));
  ws.vocab = build_vocab(ws.catalog);
  ws.table = FeatureTable(ws.catalog, ws.vocab, cfg.lstm.title_len);
  return ws;
}

inline LstmConfig model_config(const Workspace& ws) {
  LstmConfig c = ws.cfg.lstm;
  c.classes = static_cast<int>(ws.catalog.size());
  c.vocab_size = static_cast<int>(ws.vocab.size());
  c.seed = ws.cfg.seeds.lstm;
  return c;
}

inline std::vector<ClassWindow> windows_for(const Workspace& ws, const std::vector<UserId>& users) {
  std::vector<ClassWindow> out;
  for (const auto& h : ws.users_of(users)) {
    for (const auto& w : build_windows(h, ws.cfg.lstm.seq_len, ws.cfg.window_stride)) {
      out.push_back(to_class_window(w, ws.catalog));
    }
  }
  return out;
}

/// Input window over the last `seq_len` context events. Shorter contexts are
/// left-padded by repeating the earliest event.
inline ClassWindow context_window(std::span<const Interaction> context, const Workspace& ws) {
  if (context.empty()) throw std::invalid_argument("context_window: empty context");
  const auto len = static_cast<std::size_t>(ws.cfg.lstm.seq_len);
  const auto take = std::min(len, context.size());
  const auto tail = context.subspan(context.size() - take);
  ClassWindow w;
  for (std::size_t i = take; i < len; ++i) w.inputs.push_back(*ws.catalog.class_index(tail[0].movie_id));
  for (const auto& e : tail) w.inputs.push_back(*ws.catalog.class_index(e.movie_id));
  return w;
}

inline std::vector<ScoredMovie> lstm_topk(const Model& model, const Workspace& ws,
                                          std::span<const Interaction> context, int k) {
  return predict_topk(model, ws.table.expand(context_window(context, ws)), k, ws.catalog);
}

// -------------------------------------------------------------------- train

inline Model load_model(const Workspace& ws) {
  const auto path = ws.cfg.artifact(kCheckpointFile);
  if (!std::filesystem::exists(path)) {
    throw DataError("missing " + path.string() + " (run train first)");
  }
  auto model = load_checkpoint<float>(path.string());
  if (model.config.classes != static_cast<int>(ws.catalog.size())) {
    throw DataError("checkpoint has " + std::to_string(model.config.classes) +
                    " classes but the catalog has " + std::to_string(ws.catalog.size()));
  }
  return model;
}

/// Trains (or resumes) the LSTM, checkpointing after every epoch. The CSV
/// keeps rows of epochs completed before a resume.
inline TrainReport run_train(const Workspace& ws, bool resume, std::ostream& log) {
  const auto& cfg = ws.cfg;
  const auto train = windows_for(ws, ws.split.train_users);
  const auto val = windows_for(ws, ws.split.val_users);
  if (train.empty()) throw DataError("no training windows (histories shorter than seq_len + 1)");

  Model model = resume ? load_model(ws) : init_model<float>(model_config(ws), cfg.seeds.lstm);
  if (resume) model.config.epochs = cfg.lstm.epochs;

  TrainReport report;
  const auto csv_path = cfg.artifact(kTrainReportFile);
  if (resume && std::filesystem::exists(csv_path)) {
    std::istringstream in(read_file(csv_path.string()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.starts_with("epoch")) continue;
      std::istringstream row(line);
      EpochMetrics m;
      char comma;
      row >> m.epoch >> comma >> m.train_loss >> comma >> m.val_loss >> comma >> m.train_acc >>
          comma >> m.val_acc >> comma >> m.train_top5 >> comma >> m.val_top5;
      if (row && m.epoch <= model.epochs_completed) report.epochs.push_back(m);
    }
  }
  const auto header = cfg.seeds.describe() + " train_windows=" + std::to_string(train.size()) +
                      " val_windows=" + std::to_string(val.size());
  log << "training on " << train.size() << " windows, validating on " << val.size() << "\n";
  fit(model, train, val, ws.table, [&](const EpochMetrics& m) {
    report.epochs.push_back(m);
    save_checkpoint(cfg.artifact(kCheckpointFile).string(), model);
    write_text(csv_path, report.to_csv(header));
    log << "epoch " << m.epoch << " train_loss " << m.train_loss << " val_loss " << m.val_loss
        << " val_acc " << m.val_acc << " val_top5 " << m.val_top5 << "\n";
  });
  if (report.epochs.empty() || !std::filesystem::exists(cfg.artifact(kCheckpointFile))) {
    save_checkpoint(cfg.artifact(kCheckpointFile).string(), model);
    write_text(csv_path, report.to_csv(header));
  }
  return report;
}

// ---------------------------------------------------------------- providers

inline std::shared_ptr<LlmBackend> make_llm_backend(const Workspace& ws) {
  const auto& s = ws.cfg.llm;
  if (s.provider == "mock") return std::make_shared<MockLlm>(ws.catalog.movies());
  RemoteLlmOptions opts;
  opts.base_url = s.base_url;
  opts.api_key_env = s.api_key_env;
  opts.max_attempts = s.max_attempts;
  return std::make_shared<RemoteLlm>(opts);
}

inline std::shared_ptr<ResponseCache> make_cache(const RunConfig& cfg) {
  if (!cfg.llm.cache_dir.empty()) return std::make_shared<ResponseCache>(cfg.llm.cache_dir);
  if (cfg.llm.provider == "remote") return std::make_shared<ResponseCache>(cfg.artifact("llm_cache"));
  return std::make_shared<ResponseCache>();
}

inline std::unique_ptr<EmbeddingProvider> make_embedder(const RunConfig& cfg) {
  if (cfg.embedding.provider == "remote") return std::make_unique<RemoteEmbedder>(cfg.embedding.url);
  return std::make_unique<MockEmbedder>(cfg.seeds.embedding);
}

inline LlmRequest make_request(const RunConfig& cfg, std::string prompt) {
  return {cfg.llm.model, std::move(prompt), cfg.llm.temperature, cfg.llm.max_tokens,
          Seconds{cfg.llm.timeout_s}};
}

// ---------------------------------------------------------------- recommend

/// Prompt context: the last five context movies and the LSTM's top-1.
inline std::string prompt_for(const Workspace& ws, const Model& model,
                              std::span<const Interaction> context) {
  if (context.size() < static_cast<std::size_t>(kPromptRecent)) {
    throw std::invalid_argument("prompt needs at least 5 context events");
  }
  PromptContext ctx;
  for (const auto& e : context.subspan(context.size() - kPromptRecent)) {
    ctx.recent.push_back(ws.catalog.movie(e.movie_id));
  }
  ctx.lstm_top1 = ws.catalog.movie(lstm_topk(model, ws, context, 1).front().movie_id);
  return build_inference_prompt(ctx);
}

// Enough LSTM predictions to fill the slots even if all three LLM titles
// duplicate one of them.
inline constexpr int kLstmFill = kCandidateSlots + 3;

struct RecommendationTrace {
  std::string prompt;
  std::string raw_answer;
  std::string llm_error;
  ParsedRecommendations parsed;
  RankedList ranked;
  bool reranked = false;
  std::vector<ScoredMovie> lstm;
  std::vector<Slot> candidates;
};

/// Stages 2 and 3 for one user given the LLM answer (or error) for its prompt.
inline RecommendationTrace finish_trace(const Workspace& ws, const Model& model,
                                        std::span<const Interaction> context, std::string prompt,
                                        const BatchItem& answer, EmbeddingProvider& embedder,
                                        bool rerank_enabled) {
  RecommendationTrace t;
  t.prompt = std::move(prompt);
  t.lstm = lstm_topk(model, ws, context, std::min<int>(kLstmFill, static_cast<int>(ws.catalog.size())));
  if (answer.ok()) {
    t.raw_answer = answer.response->text;
  } else {
    t.llm_error = answer.error_message();
  }
  t.parsed = parse_recommendations(t.raw_answer);
  const TitleIndex index(ws.catalog);
  for (auto& rec : t.parsed.items) rec.resolved_id = index.resolve(rec);
  t.ranked.items = t.parsed.items;
  t.ranked.anchor = title_with_year(ws.catalog.movie(t.lstm.front().movie_id));
  if (rerank_enabled && !t.parsed.items.empty()) {
    t.ranked = rerank(t.parsed.items, t.ranked.anchor, embedder);
    t.reranked = !t.ranked.degraded;
  }
  std::vector<MovieId> lstm_ids;
  for (const auto& s : t.lstm) lstm_ids.push_back(s.movie_id);
  t.candidates = assemble_candidates(t.ranked.items, lstm_ids);
  return t;
}

inline RecommendationTrace recommend_for(const Workspace& ws, const Model& model, LlmClient& llm,
                                         EmbeddingProvider& embedder,
                                         std::span<const Interaction> context, bool rerank_enabled) {
  auto prompt = prompt_for(ws, model, context);
  const auto answers = llm.batch_complete({make_request(ws.cfg, prompt)}, 1);
  return finish_trace(ws, model, context, std::move(prompt), answers.front(), embedder,
                      rerank_enabled);
}

inline std::string format_trace(const RecommendationTrace& t, const Catalog& catalog) {
  std::ostringstream os;
  os << "=== Stage 1: LSTM top predictions\n";
  for (const auto& s : t.lstm) {
    os << "  " << title_with_year(catalog.movie(s.movie_id)) << "  p=" << fmt_metric(s.probability) << "\n";
  }
  os << "=== Stage 2: prompt\n" << t.prompt << "\n";
  os << "=== Stage 2: LLM answer\n";
  if (!t.llm_error.empty()) os << "[error] " << t.llm_error << "\n";
  else os << t.raw_answer << (t.raw_answer.ends_with('\n') ? "" : "\n");
  os << "=== Stage 2: parsed recommendations\n";
  if (t.parsed.parse_failed) os << "  (no recommendation could be parsed)\n";
  for (const auto& r : t.parsed.items) {
    os << "  " << r.display() << " [" << (r.resolved_id ? "movie " + std::to_string(*r.resolved_id) : "unresolved")
       << "]\n";
  }
  os << "=== Stage 3: re-ranked against " << t.ranked.anchor << "\n";
  if (t.ranked.degraded) os << "  [warning] " << t.ranked.warning << "\n";
  else if (!t.reranked) os << "  (re-ranking disabled)\n";
  for (const auto& r : t.ranked.items) {
    os << "  " << r.display();
    if (r.similarity) os << "  sim=" << fmt_metric(*r.similarity, 4);
    os << "\n";
  }
  os << "=== Final top-" << t.candidates.size() << "\n";
  int rank = 1;
  for (const auto& s : t.candidates) {
    os << "  " << rank++ << ". ";
    if (s.movie) os << title_with_year(catalog.movie(*s.movie));
    else if (!s.label.empty()) os << s.label << " (not in catalog)";
    else os << "(empty)";
    os << "\n";
  }
  return os.str();
}

// ----------------------------------------------------------------- evaluate

struct UserCase {
  UserId user_id = 0;
  Holdout holdout;
};

/// Test users with at least 10 events, ascending id, capped by eval.max_users.
inline std::vector<UserCase> evaluation_users(const Workspace& ws) {
  std::vector<UserCase> out;
  for (const auto& h : ws.users_of(ws.split.test_users)) {
    if (h.events.size() < static_cast<std::size_t>(kMinEvalEvents)) continue;
    out.push_back({h.user_id, *holdout_for_llm(h)});
    if (ws.cfg.eval.max_users > 0 && static_cast<int>(out.size()) == ws.cfg.eval.max_users) break;
  }
  return out;
}

inline EvalCase to_eval_case(const Workspace& ws, const UserCase& u, std::vector<Slot> candidates,
                             int llm_titles, int unresolved) {
  EvalCase c;
  c.user_id = u.user_id;
  c.candidates = std::move(candidates);
  c.truth = u.holdout.truth.front().movie_id;
  for (const auto& e : u.holdout.truth) c.truth_window.push_back(e.movie_id);
  const auto& top = c.candidates.front();
  c.top1_genres = top.movie ? ws.catalog.movie(*top.movie).genres : top.genres;
  c.truth_genres = ws.catalog.movie(c.truth).genres;
  c.llm_titles = llm_titles;
  c.unresolved_titles = unresolved;
  return c;
}

struct EvaluationResult {
  std::vector<EvalReport> reports;
  std::vector<std::string> header;
  std::size_t llm_errors = 0;
  std::size_t parse_failures = 0;
  std::size_t rerank_degraded = 0;

  std::string csv() const { return reports_to_csv(reports, header); }
  std::string table() const { return reports_to_table(reports); }
};

/// DUALRec, LSTM-only, MostPop and SKNN over the same evaluation users.
inline EvaluationResult run_evaluate(const Workspace& ws, const Model& model, LlmClient& llm,
                                     EmbeddingProvider& embedder) {
  const auto& cfg = ws.cfg;
  const auto users = evaluation_users(ws);
  if (users.empty()) throw UndefinedMetric("no test user has at least 10 events");
  const auto mode = cfg.eval.mode;

  std::vector<std::string> prompts;
  std::vector<LlmRequest> requests;
  for (const auto& u : users) {
    prompts.push_back(prompt_for(ws, model, u.holdout.context));
    requests.push_back(make_request(cfg, prompts.back()));
  }
  const auto answers = llm.batch_complete(requests, cfg.llm.max_in_flight);

  EvaluationResult result;
  std::vector<EvalCase> dual, lstm_only;
  std::vector<BaselineCase> baseline;
  for (std::size_t i = 0; i < users.size(); ++i) {
    const auto& u = users[i];
    const auto t = finish_trace(ws, model, u.holdout.context, prompts[i], answers[i], embedder,
                                cfg.eval.rerank);
    result.llm_errors += !answers[i].ok();
    result.parse_failures += t.parsed.parse_failed;
    result.rerank_degraded += t.ranked.degraded;
    int unresolved = 0;
    for (const auto& r : t.parsed.items) unresolved += !r.resolved_id;
    dual.push_back(to_eval_case(ws, u, t.candidates, static_cast<int>(t.parsed.items.size()), unresolved));

    std::vector<MovieId> ids;
    for (const auto& s : t.lstm) ids.push_back(s.movie_id);
    lstm_only.push_back(to_eval_case(ws, u, assemble_candidates({}, ids), 0, 0));

    BaselineCase b{u.user_id, {}, dual.back().truth, dual.back().truth_window};
    const auto& ctx = u.holdout.context;
    for (auto k = ctx.size() - std::min<std::size_t>(kPromptRecent, ctx.size()); k < ctx.size(); ++k) {
      b.recent.push_back(ctx[k].movie_id);
    }
    baseline.push_back(std::move(b));
  }

  std::vector<Interaction> train_events;
  const auto train_users = ws.users_of(ws.split.train_users);
  for (const auto& h : train_users) train_events.insert(train_events.end(), h.events.begin(), h.events.end());

  result.reports.push_back(make_report(cfg.eval.rerank ? "DUALRec" : "DUALRec-norerank", dual, mode));
  result.reports.push_back(make_report("LSTM", lstm_only, mode));
  result.reports.push_back(mostpop_baseline(train_events, baseline, ws.catalog, mode));
  result.reports.push_back(sknn_baseline(train_users, baseline, ws.catalog, mode, kCandidateSlots,
                                         cfg.eval.sknn_neighbors));
  result.header = {cfg.seeds.describe(),
                   "mode=" + std::string(to_string(mode)) + " llm_provider=" + cfg.llm.provider +
                       " llm_model=" + cfg.llm.model + " embedding_provider=" + cfg.embedding.provider +
                       " rerank=" + (cfg.eval.rerank ? "on" : "off"),
                   "users=" + std::to_string(users.size()) + " llm_errors=" + std::to_string(result.llm_errors) +
                       " parse_failures=" + std::to_string(result.parse_failures) +
                       " rerank_degraded=" + std::to_string(result.rerank_degraded)};
  return result;
}

inline EvaluationResult write_evaluation(const Workspace& ws, const Model& model, LlmClient& llm,
                                         EmbeddingProvider& embedder) {
  auto result = run_evaluate(ws, model, llm, embedder);
  write_text(ws.cfg.artifact(kEvalCsvFile), result.csv());
  write_text(ws.cfg.artifact(kEvalTableFile), result.table());
  return result;
}

// ---------------------------------------------------------- fine-tune export

inline ExportSummary run_export_finetune(const Workspace& ws, const Model& model) {
  const SuggestFn suggest = [&](std::span<const Interaction> context) {
    return lstm_topk(model, ws, context, 1).front().movie_id;
  };
  return export_finetune_dataset(ws.users_of(ws.split.train_users), ws.catalog, suggest,
                                 ws.cfg.seeds.finetune, ws.cfg.artifact(kFinetuneFile).string(),
                                 {.genre_annotated = ws.cfg.finetune_genre_annotated});
}

}  // namespace dualrec
