#pragma once

// HTTP search service. Handlers are plain functions of (request body) ->
// (status, JSON) so they can be tested without sockets; bind() attaches
// them to an httplib::Server.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "thmdx/config.hpp"
#include "thmdx/enrichment.hpp"
#include "thmdx/jsonl.hpp"
#include "thmdx/vector_index.hpp"

namespace thmdx {

inline constexpr const char* kApiVersion = "1.0";

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

inline ApiResponse api_ok(nlohmann::json body, int status = 200) {
  body["api_version"] = kApiVersion;
  return {status, std::move(body)};
}

inline ApiResponse api_error(int status, const std::string& message) {
  return {status, {{"api_version", kApiVersion}, {"error", message}}};
}

// --- feedback log -----------------------------------------------------------

enum class Verdict { up, down };

struct FeedbackEvent {
  std::int64_t timestamp = 0;  // ms since epoch, non-decreasing within the log
  std::string query_text;
  std::string record_id;
  Verdict verdict = Verdict::up;
};

inline nlohmann::json feedback_row(const FeedbackEvent& e) {
  return {{"timestamp", e.timestamp},
          {"query_text", e.query_text},
          {"record_id", e.record_id},
          {"verdict", e.verdict == Verdict::up ? "up" : "down"}};
}

/// Single writer thread fed by a bounded queue. submit() blocks until the
/// event's line has been written and flushed, so an ack implies a line.
class FeedbackLog {
 public:
  explicit FeedbackLog(std::filesystem::path path, std::size_t capacity = 256)
      : capacity_(std::max<std::size_t>(1, capacity)) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    last_ = last_timestamp_in(path);
    out_ = std::make_unique<jsonl::Appender>(std::move(path));
    worker_ = std::thread([this] { run(); });
  }

  FeedbackLog(const FeedbackLog&) = delete;
  FeedbackLog& operator=(const FeedbackLog&) = delete;

  ~FeedbackLog() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    not_empty_.notify_all();
    worker_.join();
  }

  /// Returns the event as written (timestamp assigned by the writer).
  FeedbackEvent submit(FeedbackEvent event) {
    Item item{std::move(event), {}};
    auto done = item.written.get_future();
    {
      std::unique_lock lock(mu_);
      not_full_.wait(lock, [&] { return queue_.size() < capacity_ || stopping_; });
      if (stopping_) throw Error(ErrorCode::IoError, "feedback log is closing");
      queue_.push_back(std::move(item));
    }
    not_empty_.notify_one();
    return done.get();
  }

 private:
  struct Item {
    FeedbackEvent event;
    std::promise<FeedbackEvent> written;
  };

  static std::int64_t last_timestamp_in(const std::filesystem::path& path) {
    std::int64_t last = 0;
    if (!std::filesystem::exists(path)) return last;
    jsonl::for_each(path, [&](const nlohmann::json& j) { last = std::max(last, j.value("timestamp", std::int64_t{0})); });
    return last;
  }

  void run() {
    for (;;) {
      Item item;
      {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !queue_.empty() || stopping_; });
        if (queue_.empty()) return;
        item = std::move(queue_.front());
        queue_.pop_front();
      }
      not_full_.notify_one();
      auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count();
      last_ = std::max<std::int64_t>(last_, now);
      item.event.timestamp = last_;
      try {
        out_->append(feedback_row(item.event));
        item.written.set_value(item.event);
      } catch (...) {
        item.written.set_exception(std::current_exception());
      }
    }
  }

  std::size_t capacity_;
  std::unique_ptr<jsonl::Appender> out_;
  std::int64_t last_ = 0;
  std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<Item> queue_;
  bool stopping_ = false;
  std::thread worker_;
};

// --- service ----------------------------------------------------------------

inline nlohmann::json hit_payload(const VectorIndex& index, const ScoredHit& h) {
  const auto& t = index.theorem(h.node);
  const auto& p = t.paper;
  return {{"record_id", h.record_id},
          {"name", t.record.name},
          {"slogan", t.slogan},
          {"body", t.record.body},
          {"cosine", h.cosine},
          {"composite", h.composite},
          {"rank", h.rank},
          {"thm_type", to_string(t.record.thm_type)},
          {"doc_id", t.record.doc_id},
          {"paper",
           {{"title", p.title},
            {"authors", p.authors},
            {"url", p.url},
            {"tags", p.tags},
            {"year", p.year},
            {"journal", p.journal ? nlohmann::json(*p.journal) : nlohmann::json(nullptr)},
            {"citations", p.citations}}}};
}

class SearchService {
 public:
  SearchService(ServiceConfig config, std::unique_ptr<EmbedProvider> embedder,
                std::unique_ptr<RerankProvider> reranker = nullptr)
      : config_(std::move(config)),
        embedder_(std::move(embedder)),
        reranker_(std::move(reranker)),
        feedback_(config_.feedback_log_path) {
    config_.validate();
    if (!embedder_) throw Error(ErrorCode::InvalidArgument, "search needs an embedding provider");
  }

  const ServiceConfig& config() const { return config_; }

  /// Publishes a new immutable snapshot; in-flight requests keep the old one.
  void set_index(std::shared_ptr<const VectorIndex> index) {
    if (index && index->dimension() != embedder_->config().dimension)
      throw Error(ErrorCode::DimensionMismatch, "index dimension " + std::to_string(index->dimension()) +
                                                    " differs from embedder dimension " +
                                                    std::to_string(embedder_->config().dimension));
    std::lock_guard lock(mu_);
    index_ = std::move(index);
  }

  std::shared_ptr<const VectorIndex> snapshot() const {
    std::lock_guard lock(mu_);
    return index_;
  }

  ApiResponse handle_search(const std::string& body) const {
    auto start = std::chrono::steady_clock::now();
    auto index = snapshot();
    if (!index) return api_error(503, "index loading");

    auto req = nlohmann::json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object()) return api_error(400, "body must be a JSON object");
    if (!req.contains("query") || !req["query"].is_string()) return api_error(400, "query must be a string");
    std::string query = req["query"].get<std::string>();
    if (detail::trim(query).empty()) return api_error(400, "query is empty");

    std::vector<std::string> warnings;
    SearchOptions opts;
    opts.k = config_.default_k;
    if (req.contains("k") && !req["k"].is_null()) {
      if (!req["k"].is_number_integer()) return api_error(400, "k must be an integer");
      auto k = req["k"].get<std::int64_t>();
      if (k < 1) return api_error(400, "k must be >= 1");
      if (static_cast<std::uint64_t>(k) > config_.max_k) {
        warnings.push_back("k clamped to " + std::to_string(config_.max_k));
        k = static_cast<std::int64_t>(config_.max_k);
      }
      opts.k = static_cast<std::size_t>(k);
    }
    if (req.contains("citation_weight") && !req["citation_weight"].is_null()) {
      if (!req["citation_weight"].is_number()) return api_error(400, "citation_weight must be a number");
      opts.citation_weight = req["citation_weight"].get<double>();
      if (!(opts.citation_weight >= 0.0) || !std::isfinite(opts.citation_weight))
        return api_error(400, "citation_weight must be finite and >= 0");
    }
    try {
      if (req.contains("filters") && !req["filters"].is_null()) opts.filters = req["filters"].get<SearchFilters>();
    } catch (const std::exception& e) {
      return api_error(400, std::string("bad filters: ") + e.what());
    }
    bool use_reranker = false;
    if (req.contains("use_reranker") && !req["use_reranker"].is_null()) {
      if (!req["use_reranker"].is_boolean()) return api_error(400, "use_reranker must be a boolean");
      use_reranker = req["use_reranker"].get<bool>();
    }
    if (use_reranker) {
      if (reranker_) {
        opts.reranker = reranker_.get();
        opts.query_text = query;
      } else {
        warnings.push_back("no reranker configured");
      }
    }

    SearchOutcome outcome;
    try {
      auto text = apply_task_instruction(query, InstructionSide::query, embedder_->config().instruction_mode);
      auto v = embed_text(*embedder_, text);
      outcome = index->search(v.values, opts);
    } catch (const Error& e) {
      return api_error(e.code() == ErrorCode::ProviderError ? 502 : 500, e.what());
    }
    if (outcome.reranker_fallback) warnings.push_back("reranker failed, composite order used");

    nlohmann::json hits = nlohmann::json::array();
    for (const auto& h : outcome.hits) hits.push_back(hit_payload(*index, h));
    nlohmann::json out = {{"hits", std::move(hits)}};
    if (!warnings.empty()) {
      std::string w;
      for (const auto& s : warnings) w += (w.empty() ? "" : "; ") + s;
      out["warning"] = w;
    }
    out["took_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return api_ok(std::move(out));
  }

  ApiResponse handle_theorem(const std::string& record_id) const {
    auto index = snapshot();
    if (!index) return api_error(503, "index loading");
    auto node = index->find(record_id);
    if (!node) return api_error(404, "unknown record_id " + record_id);
    const auto& t = index->theorem(*node);
    return api_ok({{"record", t.record}, {"slogan", t.slogan}, {"paper", t.paper}});
  }

  ApiResponse handle_facets() const {
    auto index = snapshot();
    if (!index) return api_error(503, "index loading");
    std::map<std::string, std::size_t> types, tags, authors;
    std::set<std::string> statuses;
    std::optional<int> min_year, max_year;
    for (std::uint32_t n = 0; n < index->size(); ++n) {
      const auto& t = index->theorem(n);
      ++types[std::string(to_string(t.record.thm_type))];
      std::set<std::string> paper_tags(t.paper.tags.begin(), t.paper.tags.end());
      if (!t.paper.primary_tag.empty()) paper_tags.insert(t.paper.primary_tag);
      for (const auto& tag : paper_tags) ++tags[tag];
      for (const auto& a : std::set<std::string>(t.paper.authors.begin(), t.paper.authors.end())) ++authors[a];
      statuses.insert(t.paper.published() ? "published" : "preprint");
      if (t.paper.year > 0) {
        min_year = std::min(min_year.value_or(t.paper.year), t.paper.year);
        max_year = std::max(max_year.value_or(t.paper.year), t.paper.year);
      }
    }
    auto counted = [](const std::map<std::string, std::size_t>& m, std::size_t limit) {
      std::vector<std::pair<std::string, std::size_t>> v(m.begin(), m.end());
      std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      if (v.size() > limit) v.resize(limit);
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& [value, count] : v) arr.push_back({{"value", value}, {"count", count}});
      return arr;
    };
    nlohmann::json years = nlohmann::json::object();
    years["min"] = min_year ? nlohmann::json(*min_year) : nlohmann::json(nullptr);
    years["max"] = max_year ? nlohmann::json(*max_year) : nlohmann::json(nullptr);
    return api_ok({{"thm_types", counted(types, types.size())},
                   {"tags", counted(tags, tags.size())},
                   {"authors", counted(authors, config_.facet_top_authors)},
                   {"years", years},
                   {"publication_statuses", statuses},
                   {"total", index->size()}});
  }

  ApiResponse handle_feedback(const std::string& body) {
    auto req = nlohmann::json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object()) return api_error(400, "body must be a JSON object");
    auto str = [&](const char* key) -> std::optional<std::string> {
      if (!req.contains(key) || !req[key].is_string()) return std::nullopt;
      return req[key].get<std::string>();
    };
    auto record_id = str("record_id");
    auto verdict = str("verdict");
    auto query_text = req.contains("query_text") ? str("query_text") : std::optional<std::string>("");
    if (!record_id || record_id->empty()) return api_error(400, "record_id must be a non-empty string");
    if (!query_text) return api_error(400, "query_text must be a string");
    if (!verdict || (*verdict != "up" && *verdict != "down")) return api_error(400, "verdict must be \"up\" or \"down\"");
    FeedbackEvent e{0, *query_text, *record_id, *verdict == "up" ? Verdict::up : Verdict::down};
    try {
      auto written = feedback_.submit(std::move(e));
      return api_ok({{"accepted", true}, {"timestamp", written.timestamp}}, 202);
    } catch (const std::exception& ex) {
      return api_error(500, ex.what());
    }
  }

  /// Allowed-origin check for CORS; "*" allows any origin.
  bool origin_allowed(const std::string& origin) const {
    return std::any_of(config_.allowed_origins.begin(), config_.allowed_origins.end(),
                       [&](const std::string& o) { return o == "*" || o == origin; });
  }

  void bind(httplib::Server& server) {
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Post("/api/search", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, handle_search(req.body));
    });
    server.Get(R"(/api/theorem/(.+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, handle_theorem(httplib::detail::decode_url(req.matches[1], false)));
    });
    server.Get("/api/facets", [this, reply](const httplib::Request&, httplib::Response& res) {
      reply(res, handle_facets());
    });
    server.Post("/api/feedback", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, handle_feedback(req.body));
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      auto origin = req.get_header_value("Origin");
      if (origin.empty() || !origin_allowed(origin)) return;
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    server.set_error_handler([reply](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply(res, api_error(res.status, httplib::status_message(res.status)));
    });
  }

 private:
  ServiceConfig config_;
  std::unique_ptr<EmbedProvider> embedder_;
  std::unique_ptr<RerankProvider> reranker_;
  mutable std::mutex mu_;
  std::shared_ptr<const VectorIndex> index_;
  FeedbackLog feedback_;
};

inline std::pair<std::string, int> parse_listen_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "listen_address must be host:port");
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad port in " + address);
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "bad port in " + address);
  return {address.substr(0, colon), port};
}

/// Binds, loads the index in the background (requests get 503 until it is
/// ready) and serves until stopped. Returns 1 if the port cannot be bound
/// or the index fails to load.
inline int serve(SearchService& service, httplib::Server& server) {
  service.bind(server);
  auto [host, port] = parse_listen_address(service.config().listen_address);
  if (!server.bind_to_port(host, port)) {
    std::fprintf(stderr, "cannot bind %s\n", service.config().listen_address.c_str());
    return 1;
  }
  int status = 0;
  std::thread loader([&] {
    try {
      service.set_index(std::make_shared<const VectorIndex>(VectorIndex::load(service.config().index_path)));
      std::fprintf(stderr, "index loaded (%zu theorems), serving on %s\n", service.snapshot()->size(),
                   service.config().listen_address.c_str());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "index load failed: %s\n", e.what());
      status = 1;
      server.stop();
    }
  });
  server.listen_after_bind();
  loader.join();
  return status;
}

}  // namespace thmdx
