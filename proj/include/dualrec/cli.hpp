#pragma once

/// @file cli.hpp
/// @brief Subcommand front end shared by the `dualrec` tool and the tests.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dualrec/pipeline.hpp"

namespace dualrec {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> provider;
  std::optional<std::string> eval_mode;
  bool no_rerank = false;
  bool resume = false;
  UserId user = 0;
};

inline RunConfig resolve_config(const CliOptions& o) {
  auto cfg = load_config(o.config_path, o.seed);
  if (o.provider) cfg.llm.provider = *o.provider;
  if (o.eval_mode) cfg.eval.mode = parse_eval_mode(*o.eval_mode);
  if (o.no_rerank) cfg.eval.rerank = false;
  cfg.validate();
  return cfg;
}

inline int exit_code_for(std::exception_ptr e, std::ostream& err) {
  auto fail = [&](ExitCode code, const char* kind, const std::exception& ex) {
    err << "dualrec: " << kind << ": " << ex.what() << "\n";
    return static_cast<int>(code);
  };
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& ex) {
    return fail(ExitCode::kConfig, "configuration error", ex);
  } catch (const DataError& ex) {
    return fail(ExitCode::kData, "data error", ex);
  } catch (const TransportError& ex) {
    return fail(ExitCode::kTransport, "transport error", ex);
  } catch (const ProtocolError& ex) {
    return fail(ExitCode::kTransport, "protocol error", ex);
  } catch (const NumericError& ex) {
    return fail(ExitCode::kNumeric, "numeric error", ex);
  } catch (const std::exception& ex) {
    return fail(ExitCode::kOther, "error", ex);
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"DUALRec: LSTM + LLM hybrid movie recommender"};
  app.require_subcommand(1);
  CliOptions o;
  app.add_option("-c,--config", o.config_path, "JSON run configuration")->required();
  app.add_option("--seed", o.seed, "override the top-level seed");
  app.add_option("--provider", o.provider, "LLM provider")->check(CLI::IsMember({"mock", "remote"}));
  app.add_option("--eval-mode", o.eval_mode, "ground truth: strict or window")
      ->check(CLI::IsMember({"strict", "window"}));
  app.add_flag("--no-rerank", o.no_rerank, "skip embedding re-ranking");

  auto* ingest = app.add_subcommand("ingest", "parse ratings, build catalog and user splits");
  auto* train = app.add_subcommand("train", "train the LSTM");
  train->add_flag("--resume", o.resume, "continue from the saved checkpoint");
  auto* recommend = app.add_subcommand("recommend", "print the three-stage trace for one user");
  recommend->add_option("-u,--user", o.user, "user id")->required();
  auto* evaluate = app.add_subcommand("evaluate", "HR/NDCG/genre report for all variants");
  auto* finetune = app.add_subcommand("export-finetune", "write the instruction-tuning JSONL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    const auto cfg = resolve_config(o);
    if (ingest->parsed()) {
      out << run_ingest(cfg).describe();
      out << "artifacts in " << cfg.output_dir.string() << "\n";
      return 0;
    }
    const auto ws = load_workspace(cfg);
    if (train->parsed()) {
      const auto report = run_train(ws, o.resume, out);
      out << "checkpoint: " << cfg.artifact(kCheckpointFile).string() << " (" << report.epochs.size()
          << " epochs recorded)\n";
      return 0;
    }
    const auto model = load_model(ws);
    if (finetune->parsed()) {
      const auto s = run_export_finetune(ws, model);
      out << cfg.artifact(kFinetuneFile).string() << ": " << s.written << " records (" << s.ineligible
          << " users below 10 events, " << s.skipped << " skipped)\n";
      return 0;
    }
    LlmClient llm(make_llm_backend(ws), make_cache(cfg));
    auto embedder = make_embedder(cfg);
    if (recommend->parsed()) {
      auto it = ws.histories.find(o.user);
      if (it == ws.histories.end()) throw DataError("unknown user " + std::to_string(o.user));
      if (it->second.events.size() < static_cast<std::size_t>(kPromptRecent)) {
        throw DataError("user " + std::to_string(o.user) + " has fewer than 5 catalog movies");
      }
      const auto t = recommend_for(ws, model, llm, *embedder, it->second.events, cfg.eval.rerank);
      out << format_trace(t, ws.catalog);
      return 0;
    }
    if (evaluate->parsed()) {
      const auto result = write_evaluation(ws, model, llm, *embedder);
      out << result.table();
      out << "written: " << cfg.artifact(kEvalCsvFile).string() << ", "
          << cfg.artifact(kEvalTableFile).string() << "\n";
      return 0;
    }
  } catch (...) {
    return exit_code_for(std::current_exception(), err);
  }
  return static_cast<int>(ExitCode::kOther);
}

}  // namespace dualrec
