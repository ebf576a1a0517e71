#pragma once

// HTTP-backed model providers (chat completions, embeddings, reranking).

#include <string>
#include <string_view>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "thmdx/enrichment.hpp"
#include "thmdx/error.hpp"

namespace thmdx {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline ParsedUrl parse_url(std::string_view url) {
  auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "bad URL: " + std::string(url));
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

namespace detail {

inline nlohmann::json post_json(const std::string& endpoint_url, const std::string& api_key_env,
                                const nlohmann::json& body, int timeout_s) {
  auto url = parse_url(endpoint_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(timeout_s, 0);
  client.set_read_timeout(timeout_s, 0);
  client.set_write_timeout(timeout_s, 0);
  httplib::Headers headers;
  if (auto key = env_or_empty(api_key_env); !key.empty())
    headers.emplace("Authorization", "Bearer " + key);
  auto res = client.Post(url.path, headers, body.dump(), "application/json");
  if (!res) throw Error(ErrorCode::ProviderError, "transport error: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorCode::ProviderError, "HTTP " + std::to_string(res->status) + " from " + endpoint_url);
  auto parsed = nlohmann::json::parse(res->body, nullptr, false);
  if (parsed.is_discarded()) throw Error(ErrorCode::ProviderError, "non-JSON response from " + endpoint_url);
  return parsed;
}

}  // namespace detail

/// Chat-completions endpoint: {model, messages, temperature, max_tokens}
/// -> choices[0].message.content.
class HttpChatProvider final : public ChatProvider {
 public:
  explicit HttpChatProvider(ChatProviderConfig config) : config_(std::move(config)) { config_.validate(); }

  std::string complete(const SloganPrompt& prompt) override {
    nlohmann::json body = {{"model", config_.model_name},
                           {"temperature", config_.temperature},
                           {"max_tokens", config_.max_output_tokens},
                           {"messages",
                            {{{"role", "system"}, {"content", prompt.system_text}},
                             {{"role", "user"}, {"content", prompt.user_text}}}}};
    auto res = detail::post_json(config_.endpoint_url, config_.api_key_env, body, config_.timeout_s);
    try {
      return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ProviderError, std::string("unexpected chat response: ") + e.what());
    }
  }
  const ChatProviderConfig& config() const override { return config_; }

 private:
  ChatProviderConfig config_;
};

/// Embeddings endpoint with configurable field names (EmbedWireProfile).
class HttpEmbedProvider final : public EmbedProvider {
 public:
  explicit HttpEmbedProvider(EmbedProviderConfig config) : config_(std::move(config)) { config_.validate(); }

  std::vector<float> embed(std::string_view text) override {
    nlohmann::json body = {{config_.profile.model_field, config_.model_name},
                           {config_.profile.input_field, std::string(text)}};
    auto res = detail::post_json(config_.endpoint_url, config_.api_key_env, body, config_.timeout_s);
    try {
      return res.at(nlohmann::json::json_pointer(config_.profile.embedding_pointer)).get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ProviderError, std::string("unexpected embedding response: ") + e.what());
    }
  }
  const EmbedProviderConfig& config() const override { return config_; }

 private:
  EmbedProviderConfig config_;
};

/// Rerank endpoint: {model, query, documents} -> results[{index, relevance_score}].
class HttpRerankProvider final : public RerankProvider {
 public:
  explicit HttpRerankProvider(RerankProviderConfig config) : config_(std::move(config)) {}

  double score(std::string_view query, std::string_view candidate) override {
    return score_batch(query, {std::string(candidate)}).at(0);
  }

  std::vector<double> score_batch(std::string_view query, const std::vector<std::string>& candidates) override {
    if (candidates.empty()) return {};
    nlohmann::json body = {{"model", config_.model_name}, {"query", std::string(query)}, {"documents", candidates}};
    auto res = detail::post_json(config_.endpoint_url, config_.api_key_env, body, config_.timeout_s);
    std::vector<double> scores(candidates.size(), 0.0);
    std::vector<bool> seen(candidates.size(), false);
    try {
      for (const auto& item : res.at("results")) {
        auto index = item.at("index").get<std::size_t>();
        if (index >= candidates.size()) throw Error(ErrorCode::ProviderError, "rerank index out of range");
        scores[index] = item.at("relevance_score").get<double>();
        seen[index] = true;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ProviderError, std::string("unexpected rerank response: ") + e.what());
    }
    for (bool s : seen)
      if (!s) throw Error(ErrorCode::ProviderError, "rerank response missing candidates");
    return scores;
  }

 private:
  RerankProviderConfig config_;
};

}  // namespace thmdx
