#pragma once

// Slogan generation and embedding through pluggable model providers.
//
// Providers are abstract; the Mock* variants are deterministic and need no
// network, the HTTP variants live in thmdx/http_providers.hpp.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "thmdx/error.hpp"
#include "thmdx/latex_extract.hpp"

namespace thmdx {

enum class SloganStrategy { body_only, body_abstract, body_introduction };

constexpr std::string_view to_string(SloganStrategy s) {
  switch (s) {
    case SloganStrategy::body_only: return "body_only";
    case SloganStrategy::body_abstract: return "body_abstract";
    case SloganStrategy::body_introduction: return "body_introduction";
  }
  return "body_only";
}

inline std::optional<SloganStrategy> parse_slogan_strategy(std::string_view s) {
  for (auto v : {SloganStrategy::body_only, SloganStrategy::body_abstract, SloganStrategy::body_introduction})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

enum class InstructionMode { prompted, unprompted };
enum class InstructionSide { document, query };

inline std::optional<InstructionMode> parse_instruction_mode(std::string_view s) {
  if (s == "prompted") return InstructionMode::prompted;
  if (s == "unprompted") return InstructionMode::unprompted;
  return std::nullopt;
}

struct ChatProviderConfig {
  std::string endpoint_url;
  std::string model_name;
  double temperature = 0.2;
  int max_output_tokens = 1024;
  std::string api_key_env;
  int retry_backoff_ms = 1000;
  int timeout_s = 120;

  void validate() const {
    if (!(temperature >= 0.0 && temperature <= 2.0))
      throw Error(ErrorCode::InvalidArgument, "chat temperature must be in [0, 2]");
    if (max_output_tokens <= 0) throw Error(ErrorCode::InvalidArgument, "max_output_tokens must be > 0");
  }
};

/// Request/response field names for an embeddings endpoint. The defaults
/// match the common {model, input} -> {data: [{embedding: [...]}]} shape.
struct EmbedWireProfile {
  std::string model_field = "model";
  std::string input_field = "input";
  std::string embedding_pointer = "/data/0/embedding";
};

struct EmbedProviderConfig {
  std::string endpoint_url;
  std::string model_name;
  std::size_t dimension = 4096;
  std::string api_key_env;
  InstructionMode instruction_mode = InstructionMode::prompted;
  std::size_t max_in_flight = 8;
  int retry_backoff_ms = 1000;
  int timeout_s = 60;
  EmbedWireProfile profile;

  void validate() const {
    if (dimension == 0) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be > 0");
    if (max_in_flight == 0) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be > 0");
  }
};

struct RerankProviderConfig {
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env;
  int timeout_s = 30;
};

struct Slogan {
  std::string record_id;
  SloganStrategy strategy = SloganStrategy::body_only;
  std::string text;
};

struct EmbeddingVector {
  std::string record_id;
  std::vector<float> values;
};

// Verbatim system prompts, one per context strategy.
inline constexpr std::string_view kSloganPromptBodyOnly =
    "You generate summaries of math theorems based on theorem_body. Summaries are accurate and at "
    "most four sentences. Summaries are plain ASCII sentences with no Unicode. Describe the result "
    "without referencing it as 'this theorem' or similar. Avoid LaTeX and mathematical symbols; use "
    "words instead. Output only the final summary sentences, with no reasoning, explanations, or "
    "commentary. Do not restate the prompt, input fields, or instructions. Do not include proof "
    "steps, motivation, or background discussion.";

inline constexpr std::string_view kSloganPromptBodyAbstract =
    "You generate summaries of math theorems based on theorem_body. You also consider paper_summary "
    "in your summaries. Summaries are accurate and at most four sentences. Summaries are plain ASCII "
    "sentences with no Unicode. Describe the result without referencing it as 'this theorem' or "
    "similar. Avoid LaTeX and mathematical symbols; use words instead. Output only the final summary "
    "sentences, with no reasoning, explanations, or commentary. Do not restate the prompt, input "
    "fields, or instructions. Do not include proof steps, motivation, or background discussion.";

inline constexpr std::string_view kSloganPromptBodyIntroduction =
    "You generate summaries of math theorems based on theorem_body. You also consider paper_summary "
    "and the first section of the paper in your summaries. Summaries are accurate and at most four "
    "sentences. Summaries are plain ASCII sentences with no Unicode. Describe the result without "
    "referencing it as 'this theorem' or similar. Avoid LaTeX and mathematical symbols; use words "
    "instead. Output only the final summary sentences, with no reasoning, explanations, or "
    "commentary. Do not restate the prompt, input fields, or instructions. Do not include proof "
    "steps, motivation, or background discussion.";

// Asymmetric embedding instructions; the text follows "Query:" directly.
inline constexpr std::string_view kDocumentInstruction =
    "Instruct: Represent the given math statement for retrieving related statement by natural "
    "language query.\nQuery:";
inline constexpr std::string_view kQueryInstruction =
    "Instruct: Given a math search query, retrieve theorems mathematically equivalent to the "
    "query.\nQuery:";

constexpr std::string_view slogan_system_prompt(SloganStrategy s) {
  switch (s) {
    case SloganStrategy::body_only: return kSloganPromptBodyOnly;
    case SloganStrategy::body_abstract: return kSloganPromptBodyAbstract;
    case SloganStrategy::body_introduction: return kSloganPromptBodyIntroduction;
  }
  return kSloganPromptBodyOnly;
}

struct SloganPrompt {
  SloganStrategy strategy = SloganStrategy::body_only;
  std::string system_text;
  std::string user_text;
  std::string theorem_body;
};

/// Builds the (system, user) message pair. The user message lists labeled
/// fields: theorem_body, then paper_summary, then first_section as the
/// strategy requires. Context not needed by the strategy is ignored.
inline SloganPrompt build_slogan_prompt(SloganStrategy strategy, std::string_view theorem_body,
                                        const std::optional<std::string>& abstract_text,
                                        const std::optional<std::string>& first_section) {
  bool needs_abstract = strategy != SloganStrategy::body_only;
  bool needs_section = strategy == SloganStrategy::body_introduction;
  if (needs_abstract && !abstract_text)
    throw Error(ErrorCode::MissingContext, std::string(to_string(strategy)) + " needs paper_summary");
  if (needs_section && !first_section)
    throw Error(ErrorCode::MissingContext, std::string(to_string(strategy)) + " needs first_section");

  SloganPrompt p;
  p.strategy = strategy;
  p.system_text = std::string(slogan_system_prompt(strategy));
  p.theorem_body = std::string(theorem_body);
  p.user_text = "theorem_body: " + p.theorem_body;
  if (needs_abstract) p.user_text += "\n\npaper_summary: " + *abstract_text;
  if (needs_section) p.user_text += "\n\nfirst_section: " + *first_section;
  return p;
}

inline std::string apply_task_instruction(std::string_view text, InstructionSide side, InstructionMode mode) {
  if (mode == InstructionMode::unprompted) return std::string(text);
  auto prefix = side == InstructionSide::document ? kDocumentInstruction : kQueryInstruction;
  std::string out(prefix);
  out += text;
  return out;
}

inline bool is_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 128; });
}

// ---------------------------------------------------------------------------
// Providers

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  /// One completion; throws Error(ProviderError) on transport/HTTP failure.
  virtual std::string complete(const SloganPrompt& prompt) = 0;
  virtual const ChatProviderConfig& config() const = 0;
};

class EmbedProvider {
 public:
  virtual ~EmbedProvider() = default;
  /// Raw provider output; dimension is checked by embed_text.
  virtual std::vector<float> embed(std::string_view text) = 0;
  virtual const EmbedProviderConfig& config() const = 0;
};

class RerankProvider {
 public:
  virtual ~RerankProvider() = default;
  virtual double score(std::string_view query, std::string_view candidate) = 0;
  virtual std::vector<double> score_batch(std::string_view query, const std::vector<std::string>& candidates) {
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(score(query, c));
    return out;
  }
};

namespace detail {

/// First sentence of a LaTeX body: up to the first . ! or ? outside math
/// that is followed by whitespace or the end of the text.
inline std::string first_sentence(std::string_view body) {
  bool in_math = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '\\') {
      ++i;
      continue;
    }
    if (c == '$') in_math = !in_math;
    if (!in_math && (c == '.' || c == '!' || c == '?') &&
        (i + 1 == body.size() || is_space(body[i + 1])))
      return std::string(body.substr(0, i + 1));
  }
  return std::string(body);
}

inline std::string strip_math_delimiters(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '$') continue;
    if (s[i] == '\\' && i + 1 < s.size() &&
        (s[i + 1] == '[' || s[i + 1] == ']' || s[i + 1] == '(' || s[i + 1] == ')')) {
      ++i;
      continue;
    }
    out.push_back(s[i]);
  }
  return collapse_whitespace(out);
}

inline void sleep_ms(int ms) {
  if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

}  // namespace detail

/// Deterministic offline chat model: the slogan is the body's first
/// sentence with math delimiters removed.
class MockChatProvider final : public ChatProvider {
 public:
  explicit MockChatProvider(ChatProviderConfig config = {}) : config_(std::move(config)) {
    config_.retry_backoff_ms = 0;
  }

  std::string complete(const SloganPrompt& prompt) override {
    return detail::strip_math_delimiters(detail::first_sentence(prompt.theorem_body));
  }
  const ChatProviderConfig& config() const override { return config_; }

 private:
  ChatProviderConfig config_;
};

/// 64-bit FNV-1a.
constexpr std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

/// Deterministic offline embedder. The text hash seeds an mt19937_64 whose
/// outputs are mapped to [-1, 1) and scaled to unit norm, so equal texts give
/// equal vectors and distinct texts are nearly orthogonal in high dimension.
class MockEmbedProvider final : public EmbedProvider {
 public:
  explicit MockEmbedProvider(std::size_t dimension) {
    config_.dimension = dimension;
    config_.model_name = "mock";
    config_.retry_backoff_ms = 0;
    config_.validate();
  }
  explicit MockEmbedProvider(EmbedProviderConfig config) : config_(std::move(config)) {
    config_.retry_backoff_ms = 0;
    config_.validate();
  }

  std::vector<float> embed(std::string_view text) override {
    std::mt19937_64 gen(stable_hash(text));
    std::vector<double> raw(config_.dimension);
    double norm = 0.0;
    for (auto& x : raw) {
      // 53 high bits -> [0, 1) -> [-1, 1); independent of the standard
      // library's distribution implementations.
      double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
      x = 2.0 * u - 1.0;
      norm += x * x;
    }
    norm = std::sqrt(norm);
    std::vector<float> out(config_.dimension);
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i] / norm);
    return out;
  }
  const EmbedProviderConfig& config() const override { return config_; }

 private:
  EmbedProviderConfig config_;
};

/// Scores a pair by the negated absolute length difference.
class MockRerankProvider final : public RerankProvider {
 public:
  double score(std::string_view query, std::string_view candidate) override {
    auto a = static_cast<double>(query.size());
    auto b = static_cast<double>(candidate.size());
    return -std::abs(a - b);
  }
};

// ---------------------------------------------------------------------------
// Operations

/// Calls the chat provider and validates the completion. Transport errors
/// and non-ASCII completions are retried once with backoff.
inline Slogan generate_slogan(ChatProvider& provider, const SloganPrompt& prompt, std::string record_id) {
  const int backoff = provider.config().retry_backoff_ms;
  int attempt = 0;
  for (;;) {
    std::string text;
    try {
      text = provider.complete(prompt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderError || attempt >= 1) throw;
      detail::sleep_ms(backoff << attempt);
      ++attempt;
      continue;
    }
    text = detail::trim(text);
    if (text.empty()) throw Error(ErrorCode::ProviderError, "EmptyCompletion for " + record_id);
    if (!is_ascii(text)) {
      if (attempt >= 1) throw Error(ErrorCode::NonAsciiOutput, "non-ASCII slogan for " + record_id);
      detail::sleep_ms(backoff << attempt);
      ++attempt;
      continue;
    }
    return Slogan{std::move(record_id), prompt.strategy, std::move(text)};
  }
}

/// Embeds one (already instruction-prefixed) text, checking length and finiteness.
inline EmbeddingVector embed_text(EmbedProvider& provider, std::string_view text, std::string record_id = {}) {
  if (text.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed empty text");
  const auto& cfg = provider.config();
  std::vector<float> values;
  for (int attempt = 0;; ++attempt) {
    try {
      values = provider.embed(text);
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderError || attempt >= 1) throw;
      detail::sleep_ms(cfg.retry_backoff_ms << attempt);
    }
  }
  if (values.size() != cfg.dimension)
    throw Error(ErrorCode::DimensionMismatch, "provider returned " + std::to_string(values.size()) +
                                                  " values, expected " + std::to_string(cfg.dimension));
  for (float v : values)
    if (!std::isfinite(v)) throw Error(ErrorCode::ProviderError, "non-finite embedding value");
  return EmbeddingVector{std::move(record_id), std::move(values)};
}

struct BatchItem {
  std::optional<EmbeddingVector> vector;
  std::optional<std::string> error;

  bool ok() const { return vector.has_value(); }
};

/// Order-preserving parallel map of embed_text with at most
/// config().max_in_flight concurrent provider calls. Failures stay per item.
inline std::vector<BatchItem> embed_batch(EmbedProvider& provider, const std::vector<std::string>& texts,
                                          const std::vector<std::string>& record_ids = {}) {
  std::vector<BatchItem> out(texts.size());
  if (texts.empty()) return out;
  auto work = [&](std::size_t i) {
    try {
      out[i].vector = embed_text(provider, texts[i], i < record_ids.size() ? record_ids[i] : std::string());
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  };
  std::size_t workers = std::min(provider.config().max_in_flight, texts.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < texts.size(); ++i) work(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < texts.size(); i = next++) work(i);
    });
  for (auto& t : pool) t.join();
  return out;
}

/// Relevance of a candidate slogan to the query; higher is better.
/// Any provider failure surfaces as ProviderError.
inline double cross_encoder_score(RerankProvider& provider, std::string_view query, std::string_view candidate) {
  try {
    return provider.score(query, candidate);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ProviderError, e.what());
  }
}

// Sidecar rows.

inline nlohmann::json slogan_row(const Slogan& s) {
  return {{"record_id", s.record_id}, {"strategy", to_string(s.strategy)}, {"text", s.text}};
}

inline Slogan slogan_from_row(const nlohmann::json& j) {
  Slogan s;
  s.record_id = j.at("record_id").get<std::string>();
  s.strategy = parse_slogan_strategy(j.value("strategy", std::string("body_only"))).value_or(SloganStrategy::body_only);
  s.text = j.at("text").get<std::string>();
  return s;
}

inline nlohmann::json embedding_row(const EmbeddingVector& v) {
  return {{"record_id", v.record_id}, {"dim", v.values.size()}, {"values", v.values}};
}

inline EmbeddingVector embedding_from_row(const nlohmann::json& j) {
  EmbeddingVector v;
  v.record_id = j.at("record_id").get<std::string>();
  v.values = j.at("values").get<std::vector<float>>();
  if (j.contains("dim") && j["dim"].get<std::size_t>() != v.values.size())
    throw Error(ErrorCode::DimensionMismatch, "embedding row " + v.record_id + " has inconsistent dim");
  return v;
}

inline std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace thmdx
