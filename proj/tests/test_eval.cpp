#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "thmdx/eval.hpp"

using namespace thmdx;
namespace fs = std::filesystem;

namespace {

/// One query per entry; rank r > 0 puts the gold at position r in a list of
/// `len` items from other documents; r == 0 is a miss.
void ranked_case(const std::vector<int>& ranks, std::vector<EvalQuery>& golds, std::vector<RunResult>& runs,
                 int len = 20) {
  golds.clear();
  runs.clear();
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    auto q = "q" + std::to_string(i);
    golds.push_back({q, "text", "g" + std::to_string(i), "gd" + std::to_string(i)});
    RunResult r{q, {}};
    for (int j = 1; j <= len; ++j) {
      if (j == ranks[i])
        r.ranked.push_back({"g" + std::to_string(i), "gd" + std::to_string(i)});
      else
        r.ranked.push_back({"x" + std::to_string(i) + "_" + std::to_string(j), "other"});
    }
    runs.push_back(r);
  }
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("thmdx_eval_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Grade, Examples) {
  EvalQuery gold{"q", "", "r7", "p3"};
  EXPECT_TRUE(grade({"r7", "p3"}, gold, GradeLevel::theorem));
  EXPECT_FALSE(grade({"r9", "p3"}, gold, GradeLevel::theorem));
  EXPECT_TRUE(grade({"r9", "p3"}, gold, GradeLevel::paper));
  EXPECT_FALSE(grade({"r9", "p4"}, gold, GradeLevel::paper));
  EvalQuery paper_only{"q", "", std::nullopt, "p3"};
  EXPECT_FALSE(grade({"r7", "p3"}, paper_only, GradeLevel::theorem));
  EXPECT_TRUE(grade({"r7", "p3"}, paper_only, GradeLevel::paper));
}

TEST(Metrics, HandCases) {
  std::vector<EvalQuery> g;
  std::vector<RunResult> r;
  ranked_case({1, 0}, g, r);
  EXPECT_DOUBLE_EQ(precision_at_k(r, g, 1, GradeLevel::theorem), 0.5);
  ranked_case({1, 1, 1}, g, r);
  EXPECT_DOUBLE_EQ(precision_at_k(r, g, 1, GradeLevel::theorem), 1.0);
  EXPECT_DOUBLE_EQ(mrr_at_k(r, g, 20, GradeLevel::theorem), 1.0);

  ranked_case({2, 5, 0}, g, r);
  EXPECT_NEAR(precision_at_k(r, g, 5, GradeLevel::theorem), 2.0 / 15.0, 1e-12);
  EXPECT_NEAR(precision_at_k(r, g, 5, GradeLevel::theorem), 0.1333333333333333, 1e-12);
  EXPECT_NEAR(hit_at_k(r, g, 5, GradeLevel::theorem), 2.0 / 3.0, 1e-12);

  ranked_case({1, 4, 0}, g, r);
  EXPECT_NEAR(mrr_at_k(r, g, 20, GradeLevel::theorem), 0.4166666666666667, 1e-12);

  ranked_case({0, 0, 0}, g, r, 30);
  EXPECT_EQ(hit_at_k(r, g, 30, GradeLevel::theorem), 0.0);
  EXPECT_EQ(mrr_at_k(r, g, 30, GradeLevel::theorem), 0.0);
}

TEST(Metrics, ShortListsCountMissingPositionsAsZero) {
  std::vector<EvalQuery> g{{"q", "", "a", "d"}};
  std::vector<RunResult> r{{"q", {{"a", "d"}}}};
  EXPECT_DOUBLE_EQ(precision_at_k(r, g, 10, GradeLevel::theorem), 0.1);
  EXPECT_DOUBLE_EQ(hit_at_k(r, g, 10, GradeLevel::theorem), 1.0);
}

TEST(Metrics, PaperLevelCountsEveryMatchingPositionForPrecision) {
  std::vector<EvalQuery> g{{"q", "", "a", "d"}};
  std::vector<RunResult> r{{"q", {{"b", "d"}, {"c", "e"}, {"a", "d"}, {"f", "d"}}}};
  EXPECT_DOUBLE_EQ(precision_at_k(r, g, 4, GradeLevel::paper), 0.75);
  EXPECT_DOUBLE_EQ(hit_at_k(r, g, 4, GradeLevel::paper), 1.0);
  EXPECT_DOUBLE_EQ(mrr_at_k(r, g, 4, GradeLevel::paper), 1.0);
  EXPECT_DOUBLE_EQ(mrr_at_k(r, g, 4, GradeLevel::theorem), 1.0 / 3.0);
}

TEST(Metrics, Errors) {
  std::vector<RunResult> r;
  try {
    precision_at_k(r, {}, 1, GradeLevel::theorem);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyQuerySet);
  }
  std::vector<EvalQuery> g{{"q", "", "a", "d"}};
  EXPECT_THROW(hit_at_k(r, g, 0, GradeLevel::theorem), Error);
  EXPECT_THROW(evaluate({}, {}, {1}, {GradeLevel::theorem}), Error);
}

TEST(Metrics, MatchBruteForceOracleOnRandomSets) {
  std::mt19937_64 rng(31);
  std::vector<EvalQuery> g;
  std::vector<RunResult> r;
  for (int set = 0; set < 200; ++set) {
    oracle::random_eval_set(rng, 1 + set % 40, g, r);
    for (std::size_t k : {1, 2, 3, 5, 10, 20, 50})
      for (auto level : {GradeLevel::theorem, GradeLevel::paper}) {
        auto o = oracle::metrics(r, g, k, level);
        ASSERT_NEAR(precision_at_k(r, g, k, level), o.p, 1e-12);
        ASSERT_NEAR(hit_at_k(r, g, k, level), o.hit, 1e-12);
        ASSERT_NEAR(mrr_at_k(r, g, k, level), o.mrr, 1e-12);
      }
  }
}

TEST(Metrics, InvariantsOnRandomSets) {
  std::mt19937_64 rng(32);
  std::vector<EvalQuery> g;
  std::vector<RunResult> r;
  for (int set = 0; set < 200; ++set) {
    oracle::random_eval_set(rng, 30, g, r);
    double prev_hit = 0;
    for (std::size_t k = 1; k <= 30; ++k) {
      for (auto level : {GradeLevel::theorem, GradeLevel::paper}) {
        double p = precision_at_k(r, g, k, level), h = hit_at_k(r, g, k, level), m = mrr_at_k(r, g, k, level);
        for (double x : {p, h, m}) ASSERT_TRUE(x >= 0.0 && x <= 1.0);
        ASSERT_LE(m, h + 1e-15);
      }
      double ht = hit_at_k(r, g, k, GradeLevel::theorem);
      // One gold record and no duplicate ids: at most one relevant item per list.
      ASSERT_NEAR(precision_at_k(r, g, k, GradeLevel::theorem), ht / double(k), 1e-12);
      ASSERT_GE(hit_at_k(r, g, k, GradeLevel::paper), ht);
      ASSERT_GE(ht, prev_hit);
      prev_hit = ht;
    }
    EXPECT_EQ(precision_at_k(r, g, 1, GradeLevel::theorem), hit_at_k(r, g, 1, GradeLevel::theorem));

    auto shuffled_g = g;
    auto shuffled_r = r;
    std::shuffle(shuffled_g.begin(), shuffled_g.end(), rng);
    std::shuffle(shuffled_r.begin(), shuffled_r.end(), rng);
    for (auto level : {GradeLevel::theorem, GradeLevel::paper}) {
      ASSERT_NEAR(precision_at_k(r, g, 10, level), precision_at_k(shuffled_r, shuffled_g, 10, level), 1e-12);
      ASSERT_NEAR(mrr_at_k(r, g, 20, level), mrr_at_k(shuffled_r, shuffled_g, 20, level), 1e-12);
    }
  }
}

TEST(Evaluate, HeadlineColumns) {
  std::vector<std::string> labels;
  for (const auto& c : headline_columns({20, 1, 10})) labels.push_back(c.label());
  EXPECT_EQ(labels, (std::vector<std::string>{"P@1", "Hit@10", "Hit@20", "MRR@20"}));
}

TEST(Evaluate, SyntheticGridMatchesOracle) {
  std::vector<EvalQuery> g;
  std::vector<RunResult> r;
  ranked_case({1, 2, 0, 0}, g, r);
  auto report = evaluate({{"sys", r}}, g, {1, 10, 20}, {GradeLevel::theorem, GradeLevel::paper});
  EXPECT_DOUBLE_EQ(report.cell("sys", GradeLevel::theorem, "P@1"), 0.25);
  EXPECT_DOUBLE_EQ(report.cell("sys", GradeLevel::theorem, "Hit@10"), 0.5);
  EXPECT_DOUBLE_EQ(report.cell("sys", GradeLevel::theorem, "Hit@20"), 0.5);
  EXPECT_DOUBLE_EQ(report.cell("sys", GradeLevel::theorem, "MRR@20"), 0.375);
  for (auto level : {GradeLevel::theorem, GradeLevel::paper}) {
    auto o1 = oracle::metrics(r, g, 1, level), o10 = oracle::metrics(r, g, 10, level),
         o20 = oracle::metrics(r, g, 20, level);
    EXPECT_NEAR(report.cell("sys", level, "P@1"), o1.p, 1e-12);
    EXPECT_NEAR(report.cell("sys", level, "Hit@10"), o10.hit, 1e-12);
    EXPECT_NEAR(report.cell("sys", level, "Hit@20"), o20.hit, 1e-12);
    EXPECT_NEAR(report.cell("sys", level, "MRR@20"), o20.mrr, 1e-12);
  }
  EXPECT_EQ(report.query_count, 4u);
  EXPECT_TRUE(report.warnings.empty());
}

TEST(Evaluate, SingleQueryHitAtRankOne) {
  std::vector<EvalQuery> g;
  std::vector<RunResult> r;
  ranked_case({1}, g, r);
  auto report = evaluate({{"s", r}}, g, {1, 10, 20}, {GradeLevel::theorem, GradeLevel::paper});
  for (auto level : {GradeLevel::theorem, GradeLevel::paper})
    for (auto col : {"P@1", "Hit@10", "Hit@20", "MRR@20"}) EXPECT_EQ(report.cell("s", level, col), 1.0);
}

TEST(Evaluate, MissingQueryWarnsAndScoresAsMiss) {
  std::vector<EvalQuery> g;
  std::vector<RunResult> r;
  ranked_case({1, 1}, g, r);
  r.pop_back();
  auto report = evaluate({{"sys", r}}, g, {1}, {GradeLevel::theorem});
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.warnings[0].find("MissingQuery q1"), std::string::npos);
  EXPECT_DOUBLE_EQ(report.cell("sys", GradeLevel::theorem, "P@1"), 0.5);
}

TEST(Evaluate, ReportFiles) {
  std::vector<EvalQuery> g;
  std::vector<RunResult> a, b;
  ranked_case({1, 3}, g, a);
  ranked_case({2, 0}, g, b);
  auto report = evaluate({{"alpha", a}, {"beta", b}}, g, {1, 10, 20}, {GradeLevel::theorem, GradeLevel::paper});
  auto dir = scratch("report");
  write_report(report, dir);
  std::ifstream txt(dir / "report.txt");
  std::string text((std::istreambuf_iterator<char>(txt)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("P@1"), std::string::npos);
  EXPECT_NE(text.find("MRR@20"), std::string::npos);
  EXPECT_NE(text.find("alpha"), std::string::npos);
  EXPECT_NE(text.find("0.500 / 0.500"), std::string::npos);
  std::ifstream js(dir / "report.json");
  auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["columns"], (nlohmann::json{"P@1", "Hit@10", "Hit@20", "MRR@20"}));
  EXPECT_DOUBLE_EQ(j["rows"]["beta"]["theorem"]["MRR@20"].get<double>(), 0.25);
  EXPECT_DOUBLE_EQ(j["grid"]["alpha"]["theorem"]["Hit@1"].get<double>(), 0.5);
  EXPECT_EQ(j["query_count"], 2);
  fs::remove_all(dir);
}

TEST(Files, GoldsAndRunsRoundTrip) {
  auto dir = scratch("files");
  {
    std::ofstream out(dir / "golds.jsonl");
    out << R"({"query_id":"q1","query_text":"a","gold_record_id":"d1:1","gold_doc_id":"d1"})" "\n";
    out << R"({"query_id":"q2","query_text":"b","gold_record_id":null,"gold_doc_id":"d2"})" "\n";
  }
  auto golds = load_golds(dir / "golds.jsonl");
  ASSERT_EQ(golds.size(), 2u);
  EXPECT_EQ(golds[0].gold_record_id, std::optional<std::string>("d1:1"));
  EXPECT_FALSE(golds[1].gold_record_id);

  RunResult run{"q1", {{"d1:1", "d1"}, {"d3:2", "d3"}}};
  {
    std::ofstream out(dir / "runs.jsonl");
    auto rows = run_rows(run, {0.9, 0.5});
    // Out of order on disk, plus a repeated id.
    out << rows[1].dump() << "\n" << rows[0].dump() << "\n";
    out << R"({"query_id":"q1","rank":3,"record_id":"d1:1","doc_id":"d1","score":0.1})" "\n";
  }
  auto runs = load_runs(dir / "runs.jsonl");
  ASSERT_EQ(runs.size(), 1u);
  ASSERT_EQ(runs[0].ranked.size(), 2u);
  EXPECT_EQ(runs[0].ranked[0].record_id, "d1:1");
  EXPECT_EQ(runs[0].ranked[1].record_id, "d3:2");

  {
    std::ofstream out(dir / "dup.jsonl");
    out << R"({"query_id":"q1","gold_doc_id":"d"})" "\n" << R"({"query_id":"q1","gold_doc_id":"d"})" "\n";
  }
  EXPECT_THROW(load_golds(dir / "dup.jsonl"), Error);
  {
    std::ofstream out(dir / "nodoc.jsonl");
    out << R"({"query_id":"q1","gold_doc_id":""})" "\n";
  }
  EXPECT_THROW(load_golds(dir / "nodoc.jsonl"), Error);
  fs::remove_all(dir);
}
