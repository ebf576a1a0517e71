#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "thmdx/server.hpp"
#include "workspace.hpp"

using namespace thmdx;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  if (!fs::exists(p)) return out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

class FailingEmbed final : public EmbedProvider {
 public:
  FailingEmbed() { cfg_.dimension = 256; cfg_.retry_backoff_ms = 0; }
  std::vector<float> embed(std::string_view) override { throw Error(ErrorCode::ProviderError, "upstream down"); }
  const EmbedProviderConfig& config() const override { return cfg_; }

 private:
  EmbedProviderConfig cfg_;
};

/// Mock chat that refuses one record's body.
class PickyChat final : public ChatProvider {
 public:
  explicit PickyChat(std::string refuse) : refuse_(std::move(refuse)) { cfg_.retry_backoff_ms = 0; }
  std::string complete(const SloganPrompt& p) override {
    if (p.user_text.find(refuse_) != std::string::npos) return "";
    return inner_.complete(p);
  }
  const ChatProviderConfig& config() const override { return cfg_; }

 private:
  std::string refuse_;
  MockChatProvider inner_;
  ChatProviderConfig cfg_;
};

std::map<std::string, json> golden_records() {
  std::map<std::string, json> out;
  for (const auto& j : jsonl::read_all(workspace::fixtures() / "golden" / "theorems.jsonl"))
    out[j["record_id"].get<std::string>()] = j;
  return out;
}

std::map<std::string, json> fixture_papers() {
  std::map<std::string, json> out;
  for (const auto& j : jsonl::read_all(workspace::fixtures() / "papers.jsonl")) out[j["doc_id"].get<std::string>()] = j;
  return out;
}

}  // namespace

// --- config -----------------------------------------------------------------

TEST(Config, FixtureFileResolvesRelativePaths) {
  auto root = workspace::make("cfg");
  auto c = workspace::config(root);
  auto base = fs::absolute(root);
  EXPECT_EQ(c.index_path, base / "index");
  EXPECT_EQ(c.work_dir, base / "work");
  ASSERT_EQ(c.corpus_paths.size(), 1u);
  EXPECT_EQ(c.corpus_paths[0], base / "corpus");
  EXPECT_EQ(c.papers_path, std::optional<fs::path>(base / "papers.jsonl"));
  EXPECT_EQ(c.default_k, 10u);
  EXPECT_EQ(c.max_k, 66u);
  EXPECT_EQ(c.embed.dimension, 256u);
  EXPECT_EQ(c.embed.instruction_mode, InstructionMode::unprompted);
  EXPECT_EQ(c.rerank_kind, ProviderKind::none);
  EXPECT_EQ(c.hnsw, (HnswParams{16, 200, 200, 42}));
  EXPECT_EQ(c.allowed_origins, std::vector<std::string>{"http://localhost:5173"});
  EXPECT_EQ(make_rerank_provider(c), nullptr);
  fs::remove_all(root);
}

TEST(Config, EnvironmentOverrides) {
  std::istringstream in("default_k = 10\n[embed]\ndimension = 64\n");
  ScopedEnv k("THMDX_DEFAULT_K", "7");
  ScopedEnv d("THMDX_EMBED_DIMENSION", "32");
  auto c = parse_config(in, "/srv");
  EXPECT_EQ(c.default_k, 7u);
  EXPECT_EQ(c.embed.dimension, 32u);
}

TEST(Config, Validation) {
  auto bad = [](const std::string& text) {
    std::istringstream in(text);
    EXPECT_THROW(parse_config(in, "/srv"), Error) << text;
  };
  bad("default_k = 20\nmax_k = 10\n");
  bad("max_k = 67\ndefault_k = 10\n");
  bad("default_k = 0\n");
  bad("slogan_strategy = everything\n");
  bad("[embed]\nprovider = carrier-pigeon\n");
  bad("[embed]\ninstruction_mode = loud\n");
  bad("[hnsw]\nm = 1\n");
  bad("default_k = ten\n");
  std::istringstream ok("max_k = 66\n");
  EXPECT_NO_THROW(parse_config(ok, "/srv"));
}

// --- pipeline ---------------------------------------------------------------

TEST(Pipeline, SmallCorpusCounts) {
  auto root = workspace::make("small", "small");
  auto c = workspace::config(root);
  auto s = cmd_ingest(c);
  EXPECT_EQ(s.documents, 5u);
  EXPECT_EQ(s.records, 10u);
  EXPECT_EQ(s.totals.filtered(), 2u);
  EXPECT_EQ(s.totals.filtered_short, 1u);
  EXPECT_EQ(s.totals.filtered_suffix, 1u);
  EXPECT_EQ(lines_of(c.theorems_path()).size(), 10u);
  auto report = json::parse(slurp(c.work_dir / "ingest_report.json"));
  EXPECT_EQ(report["records"], 10);
  EXPECT_EQ(report["per_document"].size(), 5u);
  fs::remove_all(root);
}

TEST(Pipeline, EmptyDirectoryYieldsNoRecords) {
  auto root = workspace::make("emptydir");
  fs::remove_all(root / "corpus");
  fs::create_directories(root / "corpus");
  auto s = cmd_ingest(workspace::config(root));
  EXPECT_EQ(s.records, 0u);
  EXPECT_EQ(s.documents, 0u);
  fs::remove_all(root);
}

TEST(Pipeline, MixedFormatsMatchGoldenRecords) {
  auto root = workspace::make("mixed");
  auto c = workspace::config(root);
  auto s = cmd_ingest(c);
  EXPECT_EQ(s.records, 48u);
  EXPECT_TRUE(slurp(c.theorems_path()) == slurp(workspace::fixtures() / "golden" / "theorems.jsonl"));
  std::set<std::string> formats;
  for (const auto& j : jsonl::read_all(c.documents_path())) formats.insert(j["format"].get<std::string>());
  EXPECT_EQ(formats, (std::set<std::string>{"latex", "wikitext"}));
  fs::remove_all(root);
}

TEST(Pipeline, DeterministicAcrossRuns) {
  auto a = workspace::make("det_a"), b = workspace::make("det_b");
  auto ca = workspace::config(a), cb = workspace::config(b);
  auto ba = workspace::build(ca), bb = workspace::build(cb);
  EXPECT_EQ(ba.indexed, 48u);
  EXPECT_EQ(bb.indexed, 48u);
  for (auto f : {"manifest.json", "vectors.bin", "codes.bin", "graph.bin", "meta.jsonl"})
    EXPECT_TRUE(slurp(ca.index_path / f) == slurp(cb.index_path / f)) << f;
  for (auto f : {"theorems.jsonl", "slogans.jsonl", "embeddings.jsonl"})
    EXPECT_TRUE(slurp(ca.work_dir / f) == slurp(cb.work_dir / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, StagesAreIdempotent) {
  auto root = workspace::make("idem");
  auto c = workspace::config(root);
  auto first = workspace::build(c);
  EXPECT_EQ(first.slogans.processed, 48u);
  EXPECT_EQ(first.embeddings.processed, 48u);
  auto before = slurp(c.embeddings_path());
  MockChatProvider chat;
  auto again = cmd_sloganize(c, chat);
  EXPECT_EQ(again.processed, 0u);
  EXPECT_EQ(again.skipped, 48u);
  auto embed = make_embed_provider(c);
  auto e = cmd_embed(c, *embed);
  EXPECT_EQ(e.processed, 0u);
  EXPECT_EQ(e.skipped, 48u);
  EXPECT_EQ(slurp(c.embeddings_path()), before);
  fs::remove_all(root);
}

TEST(Pipeline, ResumeAfterInterruptedEmbed) {
  auto clean = workspace::make("resume_clean"), cut = workspace::make("resume_cut");
  auto cc = workspace::config(clean), ck = workspace::config(cut);
  workspace::build(cc);

  cmd_ingest(ck);
  MockChatProvider chat;
  cmd_sloganize(ck, chat);
  auto embedder = make_embed_provider(ck);  // carries the fixture's instruction mode
  auto& embed = *embedder;
  cmd_embed(ck, embed);
  // Simulate a kill: keep 20 full lines and half of the next one.
  auto text = slurp(ck.embeddings_path());
  std::size_t pos = 0;
  for (int i = 0; i < 20; ++i) pos = text.find('\n', pos) + 1;
  auto partial = text.substr(0, pos + (text.find('\n', pos) - pos) / 2);
  std::ofstream(ck.embeddings_path(), std::ios::binary | std::ios::trunc) << partial;

  auto resumed = cmd_embed(ck, embed);
  EXPECT_EQ(resumed.skipped, 20u);
  EXPECT_EQ(resumed.processed, 28u);
  EXPECT_TRUE(slurp(ck.embeddings_path()) == slurp(cc.embeddings_path()));
  cmd_index(ck);
  EXPECT_TRUE(slurp(ck.index_path / "manifest.json") == slurp(cc.index_path / "manifest.json"));
  fs::remove_all(clean);
  fs::remove_all(cut);
}

TEST(Pipeline, EmbedRefusesDimensionChange) {
  auto root = workspace::make("dim");
  auto c = workspace::config(root);
  workspace::build(c);
  MockEmbedProvider other(128);
  try {
    cmd_embed(c, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
  }
  fs::remove_all(c.index_path);
  EXPECT_THROW(cmd_embed(c, other), Error);  // embeddings.jsonl still says 256
  fs::remove_all(root);
}

TEST(Pipeline, ProviderFailuresAreFlaggedAndStageCompletes) {
  auto root = workspace::make("flag");
  auto c = workspace::config(root);
  cmd_ingest(c);
  PickyChat picky("Any product of compact topological spaces is compact.");
  auto s = cmd_sloganize(c, picky, 4);
  EXPECT_EQ(s.failed, 1u);
  EXPECT_EQ(s.processed, 47u);
  auto failures = jsonl::read_all(c.work_dir / "slogan_failures.jsonl");
  ASSERT_EQ(failures.size(), 1u);
  EXPECT_EQ(failures[0]["record_id"], "topology:1");
  // A later run picks the missing record up.
  MockChatProvider ok;
  auto again = cmd_sloganize(c, ok);
  EXPECT_EQ(again.processed, 1u);
  EXPECT_EQ(again.skipped, 47u);
  fs::remove_all(root);
}

// --- service ----------------------------------------------------------------

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = workspace::make("service");
    auto c = workspace::config(root_);
    workspace::build(c);
    index_ = std::make_shared<const VectorIndex>(VectorIndex::load(c.index_path));
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  void SetUp() override {
    config_ = workspace::config(root_);
    config_.feedback_log_path = root_ / ("feedback_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".jsonl");
    fs::remove(config_.feedback_log_path);
    service_ = std::make_unique<SearchService>(config_, make_embed_provider(config_), std::make_unique<MockRerankProvider>());
    service_->set_index(index_);
  }

  json search(const json& body, int expect = 200) {
    auto r = service_->handle_search(body.dump());
    EXPECT_EQ(r.status, expect) << r.body.dump();
    EXPECT_EQ(r.body["api_version"], kApiVersion);
    return r.body;
  }

  static inline fs::path root_;
  static inline std::shared_ptr<const VectorIndex> index_;
  ServiceConfig config_;
  std::unique_ptr<SearchService> service_;
};

TEST_F(ServiceTest, LoadingIndexGives503) {
  SearchService cold(config_, make_embed_provider(config_));
  for (const auto& r : {cold.handle_search(R"({"query":"x"})"), cold.handle_theorem("algebra:1"), cold.handle_facets()}) {
    EXPECT_EQ(r.status, 503);
    EXPECT_EQ(r.body["api_version"], kApiVersion);
  }
  EXPECT_THROW(cold.set_index(std::make_shared<const VectorIndex>(64)), Error);
}

TEST_F(ServiceTest, ExactSloganRanksFirstForEveryGold) {
  for (const auto& g : jsonl::read_all(root_ / "golds.jsonl")) {
    auto body = search({{"query", g["query_text"]}, {"k", 5}});
    ASSERT_FALSE(body["hits"].empty());
    EXPECT_EQ(body["hits"][0]["record_id"], g["gold_record_id"]);
  }
}

TEST_F(ServiceTest, SearchPayloadSchema) {
  auto body = search({{"query", "compact spaces"}});
  EXPECT_TRUE(body["took_ms"].is_number());
  EXPECT_FALSE(body.contains("warning"));
  ASSERT_EQ(body["hits"].size(), 10u);  // default_k
  int rank = 0;
  for (const auto& h : body["hits"]) {
    EXPECT_EQ(h["rank"], ++rank);
    for (auto key : {"record_id", "name", "slogan", "body", "thm_type", "doc_id"}) EXPECT_TRUE(h[key].is_string()) << key;
    EXPECT_TRUE(h["cosine"].is_number());
    EXPECT_TRUE(h["composite"].is_number());
    EXPECT_LE(std::abs(h["cosine"].get<double>()), 1.0 + 1e-6);
    const auto& p = h["paper"];
    EXPECT_TRUE(p["title"].is_string());
    EXPECT_TRUE(p["authors"].is_array());
    EXPECT_TRUE(p["url"].is_string());
    EXPECT_TRUE(p["tags"].is_array());
    EXPECT_TRUE(p["year"].is_number_integer());
    EXPECT_TRUE(p["journal"].is_string() || p["journal"].is_null());
    EXPECT_TRUE(p["citations"].is_number_integer());
  }
}

TEST_F(ServiceTest, BadRequestsAre400) {
  for (const char* bad : {"", "not json", "[1,2]", "{}", R"({"query":5})", R"({"query":"   "})",
                          R"({"query":"x","k":0})", R"({"query":"x","k":-4})", R"({"query":"x","k":"5"})",
                          R"({"query":"x","k":2.5})", R"({"query":"x","citation_weight":-0.1})",
                          R"({"query":"x","citation_weight":"big"})", R"({"query":"x","filters":[]})",
                          R"({"query":"x","filters":{"thm_types":["axiom"]}})",
                          R"({"query":"x","filters":{"year_range":[2020]}})", R"({"query":"x","use_reranker":"yes"})"}) {
    auto r = service_->handle_search(bad);
    EXPECT_EQ(r.status, 400) << bad;
    EXPECT_EQ(r.body["api_version"], kApiVersion);
    EXPECT_TRUE(r.body["error"].is_string());
  }
}

TEST_F(ServiceTest, LargeKIsClampedWithWarning) {
  auto body = search({{"query", "prime numbers"}, {"k", 1000}});
  EXPECT_EQ(body["hits"].size(), 48u);  // the whole fixture fits under max_k
  EXPECT_NE(body["warning"].get<std::string>().find("clamped to 66"), std::string::npos);
  auto exact = search({{"query", "prime numbers"}, {"k", 66}});
  EXPECT_FALSE(exact.contains("warning"));
}

TEST_F(ServiceTest, CitationWeightZeroEqualsOmitted) {
  for (auto q : {"finite groups", "continuous functions", "primes in progressions"}) {
    auto a = search({{"query", q}, {"k", 30}});
    auto b = search({{"query", q}, {"k", 30}, {"citation_weight", 0.0}});
    ASSERT_EQ(a["hits"], b["hits"]);
    auto w = search({{"query", q}, {"k", 30}, {"citation_weight", 0.5}});
    for (std::size_t i = 1; i < w["hits"].size(); ++i)
      EXPECT_GE(w["hits"][i - 1]["composite"].get<double>(), w["hits"][i]["composite"].get<double>());
  }
}

TEST_F(ServiceTest, FilterResultsAreSoundAndComplete) {
  auto golden = golden_records();
  auto papers = fixture_papers();
  json filters = {{"thm_types", {"lemma"}}, {"year_range", {2020, 2024}}};
  std::set<std::string> expected;
  for (const auto& [id, r] : golden) {
    int year = papers.at(r["doc_id"].get<std::string>())["year"];
    if (r["thm_type"] == "lemma" && year >= 2020 && year <= 2024) expected.insert(id);
  }
  ASSERT_FALSE(expected.empty());
  auto body = search({{"query", "a lemma"}, {"k", 66}, {"filters", filters}});
  std::set<std::string> got;
  for (const auto& h : body["hits"]) {
    EXPECT_EQ(h["thm_type"], "lemma");
    EXPECT_GE(h["paper"]["year"].get<int>(), 2020);
    EXPECT_LE(h["paper"]["year"].get<int>(), 2024);
    got.insert(h["record_id"].get<std::string>());
  }
  EXPECT_EQ(got, expected);

  auto pub = search({{"query", "theorem"}, {"k", 66}, {"filters", {{"published_only", true}}}});
  for (const auto& h : pub["hits"]) EXPECT_TRUE(h["paper"]["journal"].is_string());
  auto tag = search({{"query", "theorem"}, {"k", 66}, {"filters", {{"tags", {"math.AT"}}}}});
  ASSERT_FALSE(tag["hits"].empty());
  for (const auto& h : tag["hits"]) EXPECT_EQ(h["doc_id"], "topology");
  auto none = search({{"query", "theorem"}, {"filters", {{"authors", {"Nobody"}}}}});
  EXPECT_TRUE(none["hits"].empty());
  auto empty = search({{"query", "theorem"}, {"filters", json::object()}});
  EXPECT_EQ(empty["hits"], search({{"query", "theorem"}})["hits"]);
}

TEST_F(ServiceTest, SearchIsPure) {
  auto a = search({{"query", "compactness"}, {"k", 20}});
  auto b = search({{"query", "compactness"}, {"k", 20}});
  EXPECT_EQ(a["hits"], b["hits"]);
}

TEST_F(ServiceTest, RerankerToggle) {
  auto body = search({{"query", "Every group of prime order is cyclic."}, {"k", 10}, {"use_reranker", true}});
  EXPECT_FALSE(body.contains("warning"));
  MockRerankProvider m;
  for (const auto& h : body["hits"])
    EXPECT_EQ(h["composite"].get<double>(), m.score("Every group of prime order is cyclic.", h["slogan"].get<std::string>()));

  SearchService plain(config_, make_embed_provider(config_));
  plain.set_index(index_);
  auto r = plain.handle_search(R"({"query":"cyclic groups","use_reranker":true})");
  EXPECT_EQ(r.status, 200);
  EXPECT_NE(r.body["warning"].get<std::string>().find("no reranker configured"), std::string::npos);
}

TEST_F(ServiceTest, ProviderFailureIs502) {
  SearchService broken(config_, std::make_unique<FailingEmbed>());
  broken.set_index(index_);
  auto r = broken.handle_search(R"({"query":"anything"})");
  EXPECT_EQ(r.status, 502);
  EXPECT_EQ(r.body["api_version"], kApiVersion);
}

TEST_F(ServiceTest, TheoremMatchesSearchPayload) {
  auto body = search({{"query", "fixed point"}, {"k", 66}});
  for (const auto& h : body["hits"]) {
    auto r = service_->handle_theorem(h["record_id"].get<std::string>());
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["api_version"], kApiVersion);
    EXPECT_EQ(r.body["record"]["record_id"], h["record_id"]);
    EXPECT_EQ(r.body["record"]["name"], h["name"]);
    EXPECT_EQ(r.body["record"]["body"], h["body"]);
    EXPECT_EQ(r.body["record"]["thm_type"], h["thm_type"]);
    EXPECT_EQ(r.body["slogan"], h["slogan"]);
    for (auto key : {"title", "authors", "url", "tags", "year", "journal", "citations"})
      EXPECT_EQ(r.body["paper"][key], h["paper"][key]) << key;
  }
  auto missing = service_->handle_theorem("nope:1");
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(missing.body["api_version"], kApiVersion);
}

TEST_F(ServiceTest, FacetsMatchFixture) {
  auto r = service_->handle_facets();
  ASSERT_EQ(r.status, 200);
  const auto& f = r.body;
  auto golden = golden_records();
  auto papers = fixture_papers();
  std::map<std::string, std::size_t> types;
  std::set<std::string> tags;
  int min_year = 9999, max_year = 0;
  for (const auto& [id, rec] : golden) {
    ++types[rec["thm_type"].get<std::string>()];
    const auto& p = papers.at(rec["doc_id"].get<std::string>());
    for (const auto& t : p["tags"]) tags.insert(t.get<std::string>());
    tags.insert(p["primary_tag"].get<std::string>());
    min_year = std::min(min_year, p["year"].get<int>());
    max_year = std::max(max_year, p["year"].get<int>());
  }
  std::size_t sum = 0;
  std::map<std::string, std::size_t> got_types;
  for (const auto& t : f["thm_types"]) {
    got_types[t["value"].get<std::string>()] = t["count"];
    sum += t["count"].get<std::size_t>();
  }
  EXPECT_EQ(got_types, types);
  EXPECT_EQ(sum, 48u);
  EXPECT_EQ(f["total"], 48);
  std::set<std::string> got_tags;
  for (const auto& t : f["tags"]) got_tags.insert(t["value"].get<std::string>());
  EXPECT_EQ(got_tags, tags);
  EXPECT_EQ(f["years"]["min"], min_year);
  EXPECT_EQ(f["years"]["max"], max_year);
  EXPECT_EQ(f["publication_statuses"], (json{"preprint", "published"}));
  EXPECT_FALSE(f["authors"].empty());

  SearchService empty(config_, make_embed_provider(config_));
  empty.set_index(std::make_shared<const VectorIndex>(256));
  auto e = empty.handle_facets();
  EXPECT_EQ(e.status, 200);
  EXPECT_TRUE(e.body["thm_types"].empty());
  EXPECT_TRUE(e.body["tags"].empty());
  EXPECT_TRUE(e.body["authors"].empty());
  EXPECT_TRUE(e.body["years"]["min"].is_null());
  EXPECT_EQ(e.body["total"], 0);
}

TEST_F(ServiceTest, FeedbackAppendsOneLine) {
  auto r = service_->handle_feedback(R"({"query_text":"q","record_id":"algebra:1","verdict":"up"})");
  EXPECT_EQ(r.status, 202);
  EXPECT_EQ(r.body["api_version"], kApiVersion);
  auto lines = lines_of(config_.feedback_log_path);
  ASSERT_EQ(lines.size(), 1u);
  auto row = json::parse(lines[0]);
  EXPECT_EQ(row["record_id"], "algebra:1");
  EXPECT_EQ(row["verdict"], "up");
  EXPECT_EQ(row["query_text"], "q");
  EXPECT_EQ(row["timestamp"], r.body["timestamp"]);

  for (const char* bad : {R"({"query_text":"q","record_id":"algebra:1","verdict":"meh"})",
                          R"({"query_text":"q","verdict":"up"})", R"({"query_text":"q","record_id":"","verdict":"up"})",
                          R"({"query_text":7,"record_id":"algebra:1","verdict":"up"})", "garbage"}) {
    auto b = service_->handle_feedback(bad);
    EXPECT_EQ(b.status, 400) << bad;
    EXPECT_EQ(b.body["api_version"], kApiVersion);
  }
  EXPECT_EQ(lines_of(config_.feedback_log_path).size(), 1u);

  // Up then down: both kept, in order.
  service_->handle_feedback(R"({"query_text":"q","record_id":"algebra:2","verdict":"up"})");
  service_->handle_feedback(R"({"query_text":"q","record_id":"algebra:2","verdict":"down"})");
  lines = lines_of(config_.feedback_log_path);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(json::parse(lines[1])["verdict"], "up");
  EXPECT_EQ(json::parse(lines[2])["verdict"], "down");
  std::int64_t prev = 0;
  for (const auto& l : lines) {
    auto ts = json::parse(l)["timestamp"].get<std::int64_t>();
    EXPECT_GE(ts, prev);
    prev = ts;
  }
}

TEST_F(ServiceTest, FeedbackTimestampsContinueAfterRestart) {
  {
    std::ofstream out(config_.feedback_log_path);
    out << R"({"timestamp":99999999999999,"query_text":"","record_id":"x","verdict":"up"})" "\n";
  }
  SearchService restarted(config_, make_embed_provider(config_));
  auto r = restarted.handle_feedback(R"({"record_id":"algebra:1","verdict":"down"})");
  EXPECT_EQ(r.status, 202);
  EXPECT_GE(r.body["timestamp"].get<std::int64_t>(), 99999999999999);
}

// --- over HTTP --------------------------------------------------------------

class HttpServiceTest : public ServiceTest {
 protected:
  void SetUp() override {
    ServiceTest::SetUp();
    service_->bind(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(HttpServiceTest, HundredConcurrentFeedbackPosts) {
  std::vector<std::thread> threads;
  std::vector<int> statuses(100, 0);
  for (int i = 0; i < 100; ++i)
    threads.emplace_back([&, i] {
      auto c = client();
      json body = {{"query_text", "query " + std::to_string(i)},
                   {"record_id", "algebra:" + std::to_string(i % 8 + 1)},
                   {"verdict", i % 2 ? "up" : "down"}};
      auto res = c.Post("/api/feedback", body.dump(), "application/json");
      statuses[i] = res ? res->status : -1;
    });
  for (auto& t : threads) t.join();
  for (int s : statuses) EXPECT_EQ(s, 202);
  auto lines = lines_of(config_.feedback_log_path);
  ASSERT_EQ(lines.size(), 100u);
  std::set<std::string> queries;
  std::int64_t prev = 0;
  for (const auto& l : lines) {
    auto row = json::parse(l);  // every line intact
    queries.insert(row["query_text"].get<std::string>());
    EXPECT_GE(row["timestamp"].get<std::int64_t>(), prev);
    prev = row["timestamp"];
  }
  EXPECT_EQ(queries.size(), 100u);
}

TEST_F(HttpServiceTest, RoutesCorsAndErrors) {
  auto c = client();
  auto s = c.Post("/api/search", R"({"query":"Every group of prime order is cyclic.","k":3})", "application/json");
  ASSERT_TRUE(s);
  EXPECT_EQ(s->status, 200);
  EXPECT_EQ(s->get_header_value("Content-Type"), "application/json");
  EXPECT_EQ(json::parse(s->body)["api_version"], kApiVersion);

  auto id = json::parse(s->body)["hits"][0]["record_id"].get<std::string>();
  auto t = c.Get(("/api/theorem/" + httplib::detail::encode_url(id)).c_str());
  ASSERT_TRUE(t);
  EXPECT_EQ(t->status, 200);
  EXPECT_EQ(json::parse(t->body)["record"]["record_id"], id);

  auto f = c.Get("/api/facets");
  ASSERT_TRUE(f);
  EXPECT_EQ(json::parse(f->body)["total"], 48);

  auto nf = c.Get("/api/nothing-here");
  ASSERT_TRUE(nf);
  EXPECT_EQ(nf->status, 404);
  EXPECT_EQ(json::parse(nf->body)["api_version"], kApiVersion);

  auto allowed = c.Get("/api/facets", {{"Origin", "http://localhost:5173"}});
  EXPECT_EQ(allowed->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  auto denied = c.Get("/api/facets", {{"Origin", "http://evil.example"}});
  EXPECT_FALSE(denied->has_header("Access-Control-Allow-Origin"));
  auto pre = c.Options("/api/search", {{"Origin", "http://localhost:5173"}});
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Methods"), "GET, POST, OPTIONS");
}

TEST(ListenAddress, Parse) {
  EXPECT_EQ(parse_listen_address("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_EQ(parse_listen_address("[::1]:9"), (std::pair<std::string, int>{"[::1]", 9}));
  EXPECT_THROW(parse_listen_address("localhost"), Error);
  EXPECT_THROW(parse_listen_address("h:99999"), Error);
  EXPECT_THROW(parse_listen_address("h:port"), Error);
}
