#pragma once

// Batch stages: ingest -> sloganize -> embed -> index, plus evaluation of a
// built index against labeled queries. Each stage reads the previous
// stage's JSON-lines output under work_dir; sloganize and embed append and
// skip record_ids already present, so re-running them is a no-op.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "thmdx/config.hpp"
#include "thmdx/corpus.hpp"
#include "thmdx/enrichment.hpp"
#include "thmdx/eval.hpp"
#include "thmdx/jsonl.hpp"
#include "thmdx/latex_extract.hpp"
#include "thmdx/paper_meta.hpp"
#include "thmdx/vector_index.hpp"

namespace thmdx {

using json = nlohmann::json;

/// Runs fn(i) for i in [0, n) on at most `workers` threads.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline std::unordered_map<std::string, PaperMeta> load_papers(const std::optional<std::filesystem::path>& path) {
  std::unordered_map<std::string, PaperMeta> papers;
  if (!path || !std::filesystem::exists(*path)) return papers;
  jsonl::for_each(*path, [&](const json& j) {
    auto m = j.get<PaperMeta>();
    papers[m.doc_id] = std::move(m);
  });
  return papers;
}

inline std::vector<TheoremRecord> load_theorems(const std::filesystem::path& path) {
  std::vector<TheoremRecord> out;
  jsonl::for_each(path, [&](const json& j) { out.push_back(j.get<TheoremRecord>()); });
  return out;
}

// --- ingest -----------------------------------------------------------------

struct IngestSummary {
  std::size_t documents = 0;
  std::size_t records = 0;
  ParseReport totals;
  std::vector<ParseReport> per_document;
  std::vector<std::string> errors;
};

/// Extracts every document and writes theorems.jsonl, documents.jsonl
/// (first-section context) and ingest_report.json under work_dir.
inline IngestSummary cmd_ingest(const ServiceConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.work_dir);
  IngestSummary summary;
  auto corpus = load_corpus(config.corpus_paths);
  summary.errors = std::move(corpus.errors);
  std::set<std::string> seen;
  std::vector<json> theorem_rows, document_rows;
  for (const auto& doc : corpus.documents) {
    if (!seen.insert(doc.doc_id).second) {
      summary.errors.push_back("duplicate doc_id " + doc.doc_id + " skipped");
      continue;
    }
    ++summary.documents;
    try {
      auto result = extract(doc);
      summary.totals += result.report;
      summary.per_document.push_back(result.report);
      for (const auto& r : result.records) theorem_rows.emplace_back(r);
      summary.records += result.records.size();
      document_rows.push_back({{"doc_id", doc.doc_id},
                               {"format", to_string(doc.format)},
                               {"first_section", doc.format == DocFormat::latex ? first_section(doc.body) : ""}});
    } catch (const std::exception& e) {
      summary.errors.push_back(doc.doc_id + ": " + e.what());
    }
  }
  summary.totals.doc_id.clear();
  jsonl::write_all(config.theorems_path(), theorem_rows);
  jsonl::write_all(config.documents_path(), document_rows);

  json per_doc = json::array();
  for (const auto& r : summary.per_document) per_doc.push_back(r);
  json report = {{"documents", summary.documents},
                 {"records", summary.records},
                 {"totals", summary.totals},
                 {"per_document", per_doc},
                 {"errors", summary.errors}};
  std::ofstream(config.work_dir / "ingest_report.json") << report.dump(2) << "\n";
  return summary;
}

// --- sloganize --------------------------------------------------------------

struct StageSummary {
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

inline StageSummary cmd_sloganize(const ServiceConfig& config, ChatProvider& chat, std::size_t workers = 8) {
  auto records = load_theorems(config.theorems_path());
  auto papers = load_papers(config.papers_path);
  std::unordered_map<std::string, std::string> sections;
  if (std::filesystem::exists(config.documents_path()))
    jsonl::for_each(config.documents_path(), [&](const json& j) {
      sections[j.at("doc_id").get<std::string>()] = j.value("first_section", std::string());
    });
  auto done = jsonl::existing_keys(config.slogans_path(), "record_id");

  StageSummary summary;
  std::vector<const TheoremRecord*> todo;
  for (const auto& r : records) {
    if (done.count(r.record_id)) {
      ++summary.skipped;
    } else {
      todo.push_back(&r);
    }
  }

  jsonl::Appender out(config.slogans_path());
  std::vector<json> failures;
  std::mutex failures_mu;
  // Chunks keep output order stable while bounding in-flight requests.
  const std::size_t chunk = std::max<std::size_t>(1, workers);
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    std::size_t n = std::min(chunk, todo.size() - start);
    std::vector<std::optional<Slogan>> results(n);
    parallel_for(n, workers, [&](std::size_t i) {
      const auto& rec = *todo[start + i];
      try {
        std::optional<std::string> abstract_text, section;
        if (auto p = papers.find(rec.doc_id); p != papers.end() && !p->second.abstract_text.empty())
          abstract_text = p->second.abstract_text;
        if (auto s = sections.find(rec.doc_id); s != sections.end() && !s->second.empty()) section = s->second;
        auto prompt = build_slogan_prompt(config.slogan_strategy, rec.body, abstract_text, section);
        results[i] = generate_slogan(chat, prompt, rec.record_id);
      } catch (const std::exception& e) {
        std::lock_guard lock(failures_mu);
        failures.push_back({{"record_id", rec.record_id}, {"error", e.what()}});
      }
    });
    for (auto& r : results) {
      if (!r) continue;
      out.append(slogan_row(*r));
      ++summary.processed;
    }
  }
  summary.failed = failures.size();
  std::sort(failures.begin(), failures.end(),
            [](const json& a, const json& b) { return a["record_id"] < b["record_id"]; });
  jsonl::write_all(config.work_dir / "slogan_failures.jsonl", failures);
  return summary;
}

// --- embed ------------------------------------------------------------------

/// Refuses to mix dimensions with an existing index or embeddings file.
inline void check_embedding_dimension(const ServiceConfig& config, std::size_t dimension) {
  auto manifest = config.index_path / "manifest.json";
  if (std::filesystem::exists(manifest)) {
    auto m = json::parse(read_file(manifest), nullptr, false);
    if (!m.is_discarded() && m.value("dimension", dimension) != dimension)
      throw Error(ErrorCode::VersionMismatch, "existing index has dimension " + m["dimension"].dump() +
                                                  ", provider produces " + std::to_string(dimension));
  }
  if (std::filesystem::exists(config.embeddings_path())) {
    jsonl::for_each(config.embeddings_path(), [&](const json& j) {
      if (j.value("dim", dimension) != dimension)
        throw Error(ErrorCode::VersionMismatch, "embeddings.jsonl has dimension " + j["dim"].dump() +
                                                    ", provider produces " + std::to_string(dimension));
    });
  }
}

inline StageSummary cmd_embed(const ServiceConfig& config, EmbedProvider& embedder) {
  const auto& cfg = embedder.config();
  check_embedding_dimension(config, cfg.dimension);
  std::vector<Slogan> slogans;
  jsonl::for_each(config.slogans_path(), [&](const json& j) { slogans.push_back(slogan_from_row(j)); });
  auto done = jsonl::existing_keys(config.embeddings_path(), "record_id");

  StageSummary summary;
  std::vector<const Slogan*> todo;
  for (const auto& s : slogans) {
    if (done.count(s.record_id)) {
      ++summary.skipped;
    } else {
      todo.push_back(&s);
      done.insert(s.record_id);
    }
  }

  jsonl::Appender out(config.embeddings_path());
  std::vector<json> failures;
  const std::size_t chunk = cfg.max_in_flight * 4;
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    std::size_t n = std::min(chunk, todo.size() - start);
    std::vector<std::string> texts, ids;
    for (std::size_t i = 0; i < n; ++i) {
      texts.push_back(apply_task_instruction(todo[start + i]->text, InstructionSide::document, cfg.instruction_mode));
      ids.push_back(todo[start + i]->record_id);
    }
    auto results = embed_batch(embedder, texts, ids);
    for (std::size_t i = 0; i < n; ++i) {
      if (results[i].ok()) {
        out.append(embedding_row(*results[i].vector));
        ++summary.processed;
      } else {
        failures.push_back({{"record_id", ids[i]}, {"error", *results[i].error}});
      }
    }
  }
  summary.failed = failures.size();
  jsonl::write_all(config.work_dir / "embed_failures.jsonl", failures);
  return summary;
}

// --- index ------------------------------------------------------------------

/// Builds the index from theorems + slogans + embeddings + papers, in
/// theorems.jsonl order, and saves it to index_path. Returns the entry count.
inline std::size_t cmd_index(const ServiceConfig& config) {
  auto records = load_theorems(config.theorems_path());
  auto papers = load_papers(config.papers_path);
  std::unordered_map<std::string, std::string> slogans;
  jsonl::for_each(config.slogans_path(),
                  [&](const json& j) { slogans.emplace(j.at("record_id").get<std::string>(), j.at("text").get<std::string>()); });
  std::unordered_map<std::string, EmbeddingVector> vectors;
  std::optional<std::size_t> dim;
  jsonl::for_each(config.embeddings_path(), [&](const json& j) {
    auto v = embedding_from_row(j);
    if (dim && *dim != v.values.size()) throw Error(ErrorCode::DimensionMismatch, "mixed embedding dimensions");
    dim = v.values.size();
    vectors.emplace(v.record_id, std::move(v));
  });

  VectorIndex index(dim.value_or(config.embed.dimension), config.hnsw);
  for (const auto& rec : records) {
    auto v = vectors.find(rec.record_id);
    auto s = slogans.find(rec.record_id);
    if (v == vectors.end() || s == slogans.end()) continue;
    auto p = papers.find(rec.doc_id);
    index.insert(v->second, IndexedTheorem{rec, s->second, p == papers.end() ? default_paper_meta(rec.doc_id) : p->second});
  }
  index.save(config.index_path);
  return index.size();
}

// --- eval -------------------------------------------------------------------

inline RunResult run_query(const VectorIndex& index, EmbedProvider& embedder, RerankProvider* reranker,
                           const EvalQuery& q, std::size_t k, std::vector<double>* scores = nullptr) {
  auto text = apply_task_instruction(q.query_text, InstructionSide::query, embedder.config().instruction_mode);
  auto v = embed_text(embedder, text);
  SearchOptions opts;
  opts.k = k;
  opts.reranker = reranker;
  opts.query_text = q.query_text;
  auto outcome = index.search(v.values, opts);
  RunResult run{q.query_id, {}};
  for (const auto& h : outcome.hits) {
    run.ranked.push_back({h.record_id, index.theorem(h.node).record.doc_id});
    if (scores) scores->push_back(h.composite);
  }
  return run;
}

/// Runs every labeled query against the index at k = max(ks) and writes
/// runs.jsonl, report.txt and report.json to out_dir.
inline EvalReport cmd_eval(const ServiceConfig& config, const std::filesystem::path& golds_path,
                           const std::vector<std::size_t>& ks, const std::vector<GradeLevel>& levels,
                           const std::filesystem::path& out_dir, EmbedProvider& embedder,
                           RerankProvider* reranker = nullptr, const std::string& system = "thmdx") {
  auto golds = load_golds(golds_path);
  if (golds.empty()) throw Error(ErrorCode::EmptyQuerySet, "no labeled queries in " + golds_path.string());
  if (ks.empty()) throw Error(ErrorCode::InvalidK, "no k values");
  auto index = VectorIndex::load(config.index_path);
  std::size_t k = *std::max_element(ks.begin(), ks.end());
  std::vector<RunResult> runs;
  std::vector<json> rows;
  for (const auto& q : golds) {
    std::vector<double> scores;
    runs.push_back(run_query(index, embedder, reranker, q, k, &scores));
    for (auto& row : run_rows(runs.back(), scores)) rows.push_back(std::move(row));
  }
  std::filesystem::create_directories(out_dir);
  jsonl::write_all(out_dir / "runs.jsonl", rows);
  auto report = evaluate({{system, runs}}, golds, ks, levels);
  write_report(report, out_dir);
  return report;
}

}  // namespace thmdx
