// thmdx: corpus pipeline, search server and evaluation CLI.
//
// Exit codes: 0 success, 1 fatal error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "thmdx/config.hpp"
#include "thmdx/eval.hpp"
#include "thmdx/pipeline.hpp"
#include "thmdx/server.hpp"

namespace fs = std::filesystem;
using namespace thmdx;

namespace {

constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  for (const auto& item : detail::split_list(s)) {
    try {
      long long k = std::stoll(item);
      if (k < 1) throw UsageError("k values must be >= 1");
      ks.push_back(static_cast<std::size_t>(k));
    } catch (const std::logic_error&) {
      throw UsageError("bad k value: " + item);
    }
  }
  if (ks.empty()) throw UsageError("--k needs at least one value");
  return ks;
}

std::vector<GradeLevel> parse_levels(const std::string& s) {
  std::vector<GradeLevel> levels;
  for (const auto& item : detail::split_list(s)) {
    auto l = parse_grade_level(item);
    if (!l) throw UsageError("unknown level: " + item);
    levels.push_back(*l);
  }
  if (levels.empty()) throw UsageError("--levels needs at least one value");
  return levels;
}

void print_stage(const char* name, const StageSummary& s) {
  std::fprintf(stderr, "%s: %zu processed, %zu skipped, %zu failed\n", name, s.processed, s.skipped, s.failed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic search over theorem statements"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("--config", config_path, "Service config file");
    if (required) opt->required();
  };

  auto* ingest = app.add_subcommand("ingest", "Extract theorem records from the corpus");
  add_config(ingest, true);
  auto* sloganize = app.add_subcommand("sloganize", "Generate a slogan per record");
  add_config(sloganize, true);
  std::size_t workers = 8;
  sloganize->add_option("--workers", workers, "Concurrent chat requests")->check(CLI::Range(1, 256));
  auto* embed = app.add_subcommand("embed", "Embed slogans");
  add_config(embed, true);
  auto* index = app.add_subcommand("index", "Build the vector index");
  add_config(index, true);
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  add_config(serve_cmd, true);

  auto* eval = app.add_subcommand("eval", "Score runs (or the live index) against labeled queries");
  add_config(eval, false);
  std::string golds, k_list = "1,10,20", level_list = "theorem,paper", out_dir = ".";
  std::vector<std::string> runs;
  eval->add_option("--golds", golds, "Labeled queries (JSON lines)")->required();
  eval->add_option("--runs", runs, "Run files (JSON lines), one system each");
  eval->add_option("--k", k_list, "Comma-separated cutoffs");
  eval->add_option("--levels", level_list, "Comma-separated grading levels");
  eval->add_option("--out", out_dir, "Directory for report.txt / report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*eval) {
      auto ks = parse_ks(k_list);
      auto levels = parse_levels(level_list);
      if (runs.empty() == config_path.empty())
        throw UsageError("eval needs exactly one of --runs or --config");
      EvalReport report;
      if (!runs.empty()) {
        auto gold_set = load_golds(golds);
        std::map<std::string, std::vector<RunResult>> systems;
        for (const auto& r : runs) {
          auto name = fs::path(r).stem().string();
          if (systems.count(name)) throw UsageError("two run files named " + name);
          systems[name] = load_runs(r);
        }
        report = evaluate(systems, gold_set, ks, levels);
        write_report(report, out_dir);
      } else {
        auto config = load_config(config_path);
        auto embedder = make_embed_provider(config);
        auto reranker = make_rerank_provider(config);
        report = cmd_eval(config, golds, ks, levels, out_dir, *embedder, reranker.get());
      }
      for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::cout << format_report_text(report);
      return 0;
    }

    auto config = load_config(config_path);
    if (*ingest) {
      auto s = cmd_ingest(config);
      for (const auto& e : s.errors) std::fprintf(stderr, "error: %s\n", e.c_str());
      std::fprintf(stderr, "ingest: %zu documents, %zu records, %zu filtered\n", s.documents, s.records,
                   s.totals.filtered());
      return s.records == 0 ? 1 : 0;
    }
    if (*sloganize) {
      auto chat = make_chat_provider(config);
      print_stage("sloganize", cmd_sloganize(config, *chat, workers));
      return 0;
    }
    if (*embed) {
      auto embedder = make_embed_provider(config);
      print_stage("embed", cmd_embed(config, *embedder));
      return 0;
    }
    if (*index) {
      auto n = cmd_index(config);
      std::fprintf(stderr, "index: %zu theorems -> %s\n", n, config.index_path.string().c_str());
      return 0;
    }
    if (*serve_cmd) {
      SearchService service(config, make_embed_provider(config), make_rerank_provider(config));
      httplib::Server server;
      return serve(service, server);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kUsage;
}
