#pragma once

// Retrieval metrics over single-gold validation queries: Precision@k,
// Hit@k and MRR@k, graded at theorem level (exact record) or paper level
// (same source document).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "thmdx/error.hpp"
#include "thmdx/jsonl.hpp"

namespace thmdx {

enum class GradeLevel { theorem, paper };

constexpr std::string_view to_string(GradeLevel l) { return l == GradeLevel::theorem ? "theorem" : "paper"; }

inline std::optional<GradeLevel> parse_grade_level(std::string_view s) {
  if (s == "theorem") return GradeLevel::theorem;
  if (s == "paper") return GradeLevel::paper;
  return std::nullopt;
}

struct EvalQuery {
  std::string query_id;
  std::string query_text;
  std::optional<std::string> gold_record_id;
  std::string gold_doc_id;
};

struct RankedItem {
  std::string record_id;
  std::string doc_id;
};

struct RunResult {
  std::string query_id;
  std::vector<RankedItem> ranked;  // rank 1 first
};

/// Theorem level: same record. Paper level: same document, so a right-paper
/// wrong-statement result is a paper match and a theorem miss.
inline bool grade(const RankedItem& item, const EvalQuery& gold, GradeLevel level) {
  if (level == GradeLevel::theorem) return gold.gold_record_id && item.record_id == *gold.gold_record_id;
  return item.doc_id == gold.gold_doc_id;
}

namespace detail {

inline std::unordered_map<std::string, const RunResult*> index_runs(const std::vector<RunResult>& runs) {
  std::unordered_map<std::string, const RunResult*> by_id;
  for (const auto& r : runs) by_id.emplace(r.query_id, &r);
  return by_id;
}

inline void check_metric_args(const std::vector<EvalQuery>& golds, std::size_t k) {
  if (golds.empty()) throw Error(ErrorCode::EmptyQuerySet, "no labeled queries");
  if (k < 1) throw Error(ErrorCode::InvalidK, "k must be >= 1");
}

/// Applies `per_query(ranked list or nullptr, gold)` and averages.
template <class F>
double mean_over_queries(const std::vector<RunResult>& runs, const std::vector<EvalQuery>& golds, F per_query) {
  auto by_id = index_runs(runs);
  double sum = 0.0;
  for (const auto& g : golds) {
    auto it = by_id.find(g.query_id);
    sum += per_query(it == by_id.end() ? nullptr : &it->second->ranked, g);
  }
  return sum / static_cast<double>(golds.size());
}

}  // namespace detail

/// (1/|Q|) sum_i (1/k) sum_{j<=k} I(i,j); positions past the list end count 0.
inline double precision_at_k(const std::vector<RunResult>& runs, const std::vector<EvalQuery>& golds, std::size_t k,
                             GradeLevel level) {
  detail::check_metric_args(golds, k);
  return detail::mean_over_queries(runs, golds, [&](const std::vector<RankedItem>* ranked, const EvalQuery& g) {
    if (!ranked) return 0.0;
    std::size_t matches = 0;
    for (std::size_t j = 0; j < std::min(k, ranked->size()); ++j) matches += grade((*ranked)[j], g, level);
    return static_cast<double>(matches) / static_cast<double>(k);
  });
}

/// 1-based rank of the first match within the top k.
inline std::optional<std::size_t> first_match_rank(const std::vector<RankedItem>& ranked, const EvalQuery& gold,
                                                   std::size_t k, GradeLevel level) {
  for (std::size_t j = 0; j < std::min(k, ranked.size()); ++j)
    if (grade(ranked[j], gold, level)) return j + 1;
  return std::nullopt;
}

inline double hit_at_k(const std::vector<RunResult>& runs, const std::vector<EvalQuery>& golds, std::size_t k,
                       GradeLevel level) {
  detail::check_metric_args(golds, k);
  return detail::mean_over_queries(runs, golds, [&](const std::vector<RankedItem>* ranked, const EvalQuery& g) {
    return ranked && first_match_rank(*ranked, g, k, level) ? 1.0 : 0.0;
  });
}

/// Mean of 1/rank of the first match; a query with no match in the top k contributes 0.
inline double mrr_at_k(const std::vector<RunResult>& runs, const std::vector<EvalQuery>& golds, std::size_t k,
                       GradeLevel level) {
  detail::check_metric_args(golds, k);
  return detail::mean_over_queries(runs, golds, [&](const std::vector<RankedItem>* ranked, const EvalQuery& g) {
    if (!ranked) return 0.0;
    auto r = first_match_rank(*ranked, g, k, level);
    return r ? 1.0 / static_cast<double>(*r) : 0.0;
  });
}

enum class MetricKind { precision, hit, mrr };

struct MetricColumn {
  MetricKind kind;
  std::size_t k;

  std::string label() const {
    const char* name = kind == MetricKind::precision ? "P" : kind == MetricKind::hit ? "Hit" : "MRR";
    return std::string(name) + "@" + std::to_string(k);
  }
};

/// Headline columns for a k list: P@(first k), Hit@(remaining ks), MRR@(last k).
/// For {1, 10, 20} this is P@1, Hit@10, Hit@20, MRR@20.
inline std::vector<MetricColumn> headline_columns(std::vector<std::size_t> ks) {
  if (ks.empty()) throw Error(ErrorCode::InvalidK, "no k values");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::vector<MetricColumn> cols{{MetricKind::precision, ks.front()}};
  if (ks.size() == 1) {
    cols.push_back({MetricKind::hit, ks.front()});
  } else {
    for (std::size_t i = 1; i < ks.size(); ++i) cols.push_back({MetricKind::hit, ks[i]});
  }
  cols.push_back({MetricKind::mrr, ks.back()});
  return cols;
}

struct EvalReport {
  std::vector<MetricColumn> columns;
  std::vector<GradeLevel> levels;
  std::vector<std::size_t> ks;
  // system -> level -> column label -> value (headline columns)
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> rows;
  // system -> level -> metric label -> value, for every metric at every k
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> grid;
  std::size_t query_count = 0;
  std::vector<std::string> warnings;

  double cell(const std::string& system, GradeLevel level, const std::string& column) const {
    return rows.at(system).at(std::string(to_string(level))).at(column);
  }
};

inline double compute_metric(MetricKind kind, const std::vector<RunResult>& runs, const std::vector<EvalQuery>& golds,
                             std::size_t k, GradeLevel level) {
  switch (kind) {
    case MetricKind::precision: return precision_at_k(runs, golds, k, level);
    case MetricKind::hit: return hit_at_k(runs, golds, k, level);
    case MetricKind::mrr: return mrr_at_k(runs, golds, k, level);
  }
  return 0.0;
}

/// Fills the report grid. A system lacking a labeled query gets a warning
/// and that query is scored as all-miss.
inline EvalReport evaluate(const std::map<std::string, std::vector<RunResult>>& system_runs,
                           const std::vector<EvalQuery>& golds, const std::vector<std::size_t>& ks,
                           const std::vector<GradeLevel>& levels) {
  if (golds.empty()) throw Error(ErrorCode::EmptyQuerySet, "no labeled queries");
  EvalReport report;
  report.columns = headline_columns(ks);
  report.levels = levels;
  report.ks = ks;
  std::sort(report.ks.begin(), report.ks.end());
  report.ks.erase(std::unique(report.ks.begin(), report.ks.end()), report.ks.end());
  report.query_count = golds.size();
  for (const auto& [system, runs] : system_runs) {
    std::set<std::string> covered;
    for (const auto& r : runs) covered.insert(r.query_id);
    for (const auto& g : golds)
      if (!covered.count(g.query_id))
        report.warnings.push_back(system + ": MissingQuery " + g.query_id + " (scored as all-miss)");
    for (auto level : levels) {
      auto& row = report.rows[system][std::string(to_string(level))];
      for (const auto& col : report.columns) row[col.label()] = compute_metric(col.kind, runs, golds, col.k, level);
      auto& full = report.grid[system][std::string(to_string(level))];
      for (auto k : report.ks)
        for (auto kind : {MetricKind::precision, MetricKind::hit, MetricKind::mrr}) {
          MetricColumn c{kind, k};
          full[c.label()] = compute_metric(kind, runs, golds, k, level);
        }
    }
  }
  return report;
}

/// Aligned plain-text table; cells read "theorem / paper" when both levels are present.
inline std::string format_report_text(const EvalReport& report) {
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"System"};
  for (const auto& c : report.columns) header.push_back(c.label());
  table.push_back(header);
  for (const auto& [system, by_level] : report.rows) {
    std::vector<std::string> line{system};
    for (const auto& c : report.columns) {
      std::string cell;
      for (auto level : report.levels) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", by_level.at(std::string(to_string(level))).at(c.label()));
        if (!cell.empty()) cell += " / ";
        cell += buf;
      }
      line.push_back(cell);
    }
    table.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  std::string levels;
  for (auto l : report.levels) levels += (levels.empty() ? "" : " / ") + std::string(to_string(l));
  os << "Values: " << levels << "; queries: " << report.query_count << "\n";
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t i = 0; i < table[r].size(); ++i) {
      os << table[r][i] << std::string(width[i] - table[r][i].size(), ' ');
      if (i + 1 < table[r].size()) os << "  ";
    }
    os << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << "\n";
    }
  }
  for (const auto& w : report.warnings) os << "warning: " << w << "\n";
  return os.str();
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : report.columns) cols.push_back(c.label());
  nlohmann::json levels = nlohmann::json::array();
  for (auto l : report.levels) levels.push_back(to_string(l));
  return {{"columns", cols},      {"levels", levels},           {"ks", report.ks},
          {"rows", report.rows},  {"grid", report.grid},        {"query_count", report.query_count},
          {"warnings", report.warnings}};
}

inline void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.txt");
    out << format_report_text(report);
    if (!out) throw Error(ErrorCode::IoError, "cannot write report.txt");
  }
  std::ofstream out(dir / "report.json");
  out << report_to_json(report).dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "cannot write report.json");
}

// File formats.

inline EvalQuery eval_query_from_json(const nlohmann::json& j) {
  EvalQuery q;
  q.query_id = j.at("query_id").get<std::string>();
  q.query_text = j.value("query_text", std::string());
  if (j.contains("gold_record_id") && j["gold_record_id"].is_string()) q.gold_record_id = j["gold_record_id"].get<std::string>();
  q.gold_doc_id = j.at("gold_doc_id").get<std::string>();
  if (q.gold_doc_id.empty()) throw Error(ErrorCode::InvalidArgument, "empty gold_doc_id for " + q.query_id);
  return q;
}

inline std::vector<EvalQuery> load_golds(const std::filesystem::path& path) {
  std::vector<EvalQuery> golds;
  std::set<std::string> seen;
  jsonl::for_each(path, [&](const nlohmann::json& j) {
    auto q = eval_query_from_json(j);
    if (!seen.insert(q.query_id).second) throw Error(ErrorCode::InvalidArgument, "duplicate query_id " + q.query_id);
    golds.push_back(std::move(q));
  });
  return golds;
}

/// Reads {query_id, rank, record_id, doc_id, score} rows, grouping by query
/// and ordering by rank. Repeated record_ids within a query keep the first.
inline std::vector<RunResult> load_runs(const std::filesystem::path& path) {
  struct Row {
    std::size_t rank;
    RankedItem item;
  };
  std::map<std::string, std::vector<Row>> grouped;
  jsonl::for_each(path, [&](const nlohmann::json& j) {
    grouped[j.at("query_id").get<std::string>()].push_back(
        Row{j.at("rank").get<std::size_t>(),
            RankedItem{j.at("record_id").get<std::string>(), j.value("doc_id", std::string())}});
  });
  std::vector<RunResult> runs;
  for (auto& [qid, rows] : grouped) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
    RunResult r{qid, {}};
    std::set<std::string> seen;
    for (auto& row : rows)
      if (seen.insert(row.item.record_id).second) r.ranked.push_back(std::move(row.item));
    runs.push_back(std::move(r));
  }
  return runs;
}

inline std::vector<nlohmann::json> run_rows(const RunResult& run, const std::vector<double>& scores = {}) {
  std::vector<nlohmann::json> rows;
  for (std::size_t i = 0; i < run.ranked.size(); ++i)
    rows.push_back({{"query_id", run.query_id},
                    {"rank", i + 1},
                    {"record_id", run.ranked[i].record_id},
                    {"doc_id", run.ranked[i].doc_id},
                    {"score", i < scores.size() ? scores[i] : 0.0}});
  return rows;
}

}  // namespace thmdx
