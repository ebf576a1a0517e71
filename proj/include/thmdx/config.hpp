#pragma once

// Service configuration: an INI/TOML-style `key = value` file with
// [embed], [chat], [rerank] and [hnsw] sections. Any key can be overridden
// by the environment variable THMDX_<SECTION>_<KEY> (top-level keys:
// THMDX_<KEY>), upper-cased. Relative paths resolve against the config
// file's directory.

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "thmdx/enrichment.hpp"
#include "thmdx/error.hpp"
#include "thmdx/hnsw.hpp"
#include "thmdx/http_providers.hpp"

namespace thmdx {

inline constexpr std::size_t kMaxK = 66;  // 800 / 12, so the pool formula is not saturated

enum class ProviderKind { none, mock, http };

struct ServiceConfig {
  std::filesystem::path index_path = "index";
  std::filesystem::path work_dir = "work";
  std::vector<std::filesystem::path> corpus_paths;
  std::optional<std::filesystem::path> papers_path;
  std::filesystem::path feedback_log_path = "feedback.jsonl";
  SloganStrategy slogan_strategy = SloganStrategy::body_only;
  std::string listen_address = "127.0.0.1:8080";
  std::size_t default_k = 10;
  std::size_t max_k = kMaxK;
  std::vector<std::string> allowed_origins;
  std::size_t facet_top_authors = 50;

  ProviderKind embed_kind = ProviderKind::mock;
  EmbedProviderConfig embed;
  ProviderKind chat_kind = ProviderKind::mock;
  ChatProviderConfig chat;
  ProviderKind rerank_kind = ProviderKind::none;
  RerankProviderConfig rerank;
  HnswParams hnsw;

  std::filesystem::path theorems_path() const { return work_dir / "theorems.jsonl"; }
  std::filesystem::path documents_path() const { return work_dir / "documents.jsonl"; }
  std::filesystem::path slogans_path() const { return work_dir / "slogans.jsonl"; }
  std::filesystem::path embeddings_path() const { return work_dir / "embeddings.jsonl"; }

  void validate() const {
    if (default_k < 1 || default_k > max_k) throw Error(ErrorCode::InvalidArgument, "need 1 <= default_k <= max_k");
    if (max_k > kMaxK) throw Error(ErrorCode::InvalidArgument, "max_k must be <= " + std::to_string(kMaxK));
    embed.validate();
    chat.validate();
    hnsw.validate();
  }
};

namespace detail {

inline std::string unquote(std::string v) {
  v = trim(v);
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
    v = v.substr(1, v.size() - 2);
  return v;
}

/// Comma-separated list, optionally wrapped in [ ].
inline std::vector<std::string> split_list(std::string v) {
  v = trim(v);
  if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto u = unquote(item); !u.empty()) out.push_back(u);
  return out;
}

inline ProviderKind parse_provider_kind(const std::string& s) {
  if (s == "none" || s.empty()) return ProviderKind::none;
  if (s == "mock") return ProviderKind::mock;
  if (s == "http") return ProviderKind::http;
  throw Error(ErrorCode::InvalidArgument, "unknown provider kind " + s);
}

class ConfigReader {
 public:
  ConfigReader(boost::property_tree::ptree tree, std::filesystem::path base) : tree_(std::move(tree)), base_(std::move(base)) {}

  std::optional<std::string> get(const std::string& key) const {
    std::string env = "THMDX_";
    for (char c : key) env.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (const char* v = std::getenv(env.c_str())) return std::string(v);
    if (auto v = tree_.get_optional<std::string>(key)) return unquote(*v);
    return std::nullopt;
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    auto v = get(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        out = *v;
      } else if constexpr (std::is_same_v<T, double>) {
        out = std::stod(*v);
      } else if constexpr (std::is_same_v<T, int>) {
        out = std::stoi(*v);
      } else {
        out = static_cast<T>(std::stoull(*v));
      }
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad value for " + key + ": " + *v);
    }
  }

  void read_path(const std::string& key, std::filesystem::path& out) const {
    if (auto v = get(key)) out = resolve(*v);
  }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_ / path;
  }

 private:
  boost::property_tree::ptree tree_;
  std::filesystem::path base_;
};

}  // namespace detail

inline ServiceConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  detail::ConfigReader r(std::move(tree), base_dir);
  ServiceConfig c;
  c.index_path = base_dir / c.index_path;
  c.work_dir = base_dir / c.work_dir;
  c.feedback_log_path = base_dir / c.feedback_log_path;
  r.read_path("index_path", c.index_path);
  r.read_path("work_dir", c.work_dir);
  r.read_path("feedback_log_path", c.feedback_log_path);
  if (auto v = r.get("corpus_paths"))
    for (const auto& p : detail::split_list(*v)) c.corpus_paths.push_back(r.resolve(p));
  if (auto v = r.get("papers_path"); v && !v->empty()) c.papers_path = r.resolve(*v);
  if (auto v = r.get("slogan_strategy")) {
    auto s = parse_slogan_strategy(*v);
    if (!s) throw Error(ErrorCode::InvalidArgument, "unknown slogan_strategy " + *v);
    c.slogan_strategy = *s;
  }
  r.read("listen_address", c.listen_address);
  r.read("default_k", c.default_k);
  r.read("max_k", c.max_k);
  r.read("facet_top_authors", c.facet_top_authors);
  if (auto v = r.get("allowed_origins")) c.allowed_origins = detail::split_list(*v);

  if (auto v = r.get("embed.provider")) c.embed_kind = detail::parse_provider_kind(*v);
  r.read("embed.endpoint_url", c.embed.endpoint_url);
  r.read("embed.model_name", c.embed.model_name);
  r.read("embed.dimension", c.embed.dimension);
  r.read("embed.api_key_env", c.embed.api_key_env);
  r.read("embed.max_in_flight", c.embed.max_in_flight);
  r.read("embed.retry_backoff_ms", c.embed.retry_backoff_ms);
  r.read("embed.timeout_s", c.embed.timeout_s);
  r.read("embed.model_field", c.embed.profile.model_field);
  r.read("embed.input_field", c.embed.profile.input_field);
  r.read("embed.embedding_pointer", c.embed.profile.embedding_pointer);
  if (auto v = r.get("embed.instruction_mode")) {
    auto m = parse_instruction_mode(*v);
    if (!m) throw Error(ErrorCode::InvalidArgument, "unknown instruction_mode " + *v);
    c.embed.instruction_mode = *m;
  }

  if (auto v = r.get("chat.provider")) c.chat_kind = detail::parse_provider_kind(*v);
  r.read("chat.endpoint_url", c.chat.endpoint_url);
  r.read("chat.model_name", c.chat.model_name);
  r.read("chat.temperature", c.chat.temperature);
  r.read("chat.max_output_tokens", c.chat.max_output_tokens);
  r.read("chat.api_key_env", c.chat.api_key_env);
  r.read("chat.retry_backoff_ms", c.chat.retry_backoff_ms);
  r.read("chat.timeout_s", c.chat.timeout_s);

  if (auto v = r.get("rerank.provider")) c.rerank_kind = detail::parse_provider_kind(*v);
  r.read("rerank.endpoint_url", c.rerank.endpoint_url);
  r.read("rerank.model_name", c.rerank.model_name);
  r.read("rerank.api_key_env", c.rerank.api_key_env);
  r.read("rerank.timeout_s", c.rerank.timeout_s);

  r.read("hnsw.m", c.hnsw.m);
  r.read("hnsw.ef_construction", c.hnsw.ef_construction);
  r.read("hnsw.ef_search", c.hnsw.ef_search);
  r.read("hnsw.rng_seed", c.hnsw.rng_seed);

  c.validate();
  return c;
}

inline ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  return parse_config(in, std::filesystem::absolute(path).parent_path());
}

inline std::unique_ptr<EmbedProvider> make_embed_provider(const ServiceConfig& c) {
  switch (c.embed_kind) {
    case ProviderKind::mock: return std::make_unique<MockEmbedProvider>(c.embed);
    case ProviderKind::http: return std::make_unique<HttpEmbedProvider>(c.embed);
    case ProviderKind::none: break;
  }
  throw Error(ErrorCode::InvalidArgument, "an embedding provider is required");
}

inline std::unique_ptr<ChatProvider> make_chat_provider(const ServiceConfig& c) {
  switch (c.chat_kind) {
    case ProviderKind::mock: return std::make_unique<MockChatProvider>(c.chat);
    case ProviderKind::http: return std::make_unique<HttpChatProvider>(c.chat);
    case ProviderKind::none: break;
  }
  throw Error(ErrorCode::InvalidArgument, "a chat provider is required");
}

inline std::unique_ptr<RerankProvider> make_rerank_provider(const ServiceConfig& c) {
  switch (c.rerank_kind) {
    case ProviderKind::mock: return std::make_unique<MockRerankProvider>();
    case ProviderKind::http: return std::make_unique<HttpRerankProvider>(c.rerank);
    case ProviderKind::none: break;
  }
  return nullptr;
}

}  // namespace thmdx
