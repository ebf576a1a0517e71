#pragma once

// Two-stage retrieval index: HNSW over sign-quantized codes under Hamming
// distance produces a candidate pool, which is filtered by metadata and
// reranked on the full-precision vectors (cosine, optionally citation
// weighted) or by a cross-encoder.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "thmdx/binary_code.hpp"
#include "thmdx/checksum.hpp"
#include "thmdx/enrichment.hpp"
#include "thmdx/error.hpp"
#include "thmdx/hnsw.hpp"
#include "thmdx/latex_extract.hpp"
#include "thmdx/paper_meta.hpp"

namespace thmdx {

inline constexpr int kIndexFormatVersion = 1;
inline constexpr std::size_t kRerankDepth = 100;

/// clamp(max(200, 12k), 200, 800).
inline std::size_t candidate_pool_size(std::int64_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidK, "k must be >= 1, got " + std::to_string(k));
  std::int64_t scaled = k > 800 ? 800 * 12 : 12 * k;
  return static_cast<std::size_t>(std::clamp<std::int64_t>(std::max<std::int64_t>(200, scaled), 200, 800));
}

/// cosine + lambda * ln(max(citations, 1)).
inline double composite_score(double cosine_similarity, std::int64_t citations, double lambda) {
  return cosine_similarity + lambda * std::log(static_cast<double>(std::max<std::int64_t>(citations, 1)));
}

/// Everything the service shows for one indexed theorem (one meta.jsonl line).
struct IndexedTheorem {
  TheoremRecord record;
  std::string slogan;
  PaperMeta paper;
};

inline void to_json(nlohmann::json& j, const IndexedTheorem& t) {
  j = t.record;
  j["slogan"] = t.slogan;
  j["paper"] = t.paper;
}

inline void from_json(const nlohmann::json& j, IndexedTheorem& t) {
  t.record = j.get<TheoremRecord>();
  t.slogan = j.value("slogan", std::string());
  t.paper = j.contains("paper") ? j["paper"].get<PaperMeta>() : default_paper_meta(t.record.doc_id);
}

struct IndexEntry {
  std::string record_id;
  EmbeddingVector vector;
  BinaryCode code;
  std::size_t meta_key = 0;
};

/// Metadata restrictions; an unset field (or an empty set) does not restrict.
struct SearchFilters {
  std::optional<std::set<ThmType>> thm_types;
  std::optional<std::set<std::string>> authors;  // match any
  std::optional<std::set<std::string>> tags;     // match any, primary or cross-listed
  std::optional<std::string> doc_id;
  std::optional<std::pair<int, int>> year_range;  // inclusive
  std::optional<bool> published_only;

  bool matches(const IndexedTheorem& t) const {
    if (thm_types && !thm_types->empty() && !thm_types->count(t.record.thm_type)) return false;
    if (authors && !authors->empty() &&
        std::none_of(t.paper.authors.begin(), t.paper.authors.end(),
                     [&](const std::string& a) { return authors->count(a) > 0; }))
      return false;
    if (tags && !tags->empty() &&
        std::none_of(t.paper.tags.begin(), t.paper.tags.end(),
                     [&](const std::string& a) { return tags->count(a) > 0; }) &&
        !tags->count(t.paper.primary_tag))
      return false;
    if (doc_id && *doc_id != t.record.doc_id) return false;
    if (year_range && (t.paper.year < year_range->first || t.paper.year > year_range->second)) return false;
    if (published_only.value_or(false) && !t.paper.published()) return false;
    return true;
  }
};

inline void from_json(const nlohmann::json& j, SearchFilters& f) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "filters must be an object");
  auto string_set = [&](const char* key) -> std::optional<std::set<std::string>> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::set<std::string>>();
  };
  if (j.contains("thm_types") && !j["thm_types"].is_null()) {
    std::set<ThmType> types;
    for (const auto& s : j["thm_types"]) {
      auto t = parse_thm_type(s.get<std::string>());
      if (!t) throw Error(ErrorCode::InvalidArgument, "unknown thm_type " + s.get<std::string>());
      types.insert(*t);
    }
    f.thm_types = std::move(types);
  }
  f.authors = string_set("authors");
  f.tags = string_set("tags");
  if (j.contains("doc_id") && !j["doc_id"].is_null()) f.doc_id = j["doc_id"].get<std::string>();
  if (j.contains("year_range") && !j["year_range"].is_null()) {
    const auto& yr = j["year_range"];
    if (!yr.is_array() || yr.size() != 2) throw Error(ErrorCode::InvalidArgument, "year_range must be [min, max]");
    f.year_range = std::pair{yr[0].get<int>(), yr[1].get<int>()};
  }
  if (j.contains("published_only") && !j["published_only"].is_null())
    f.published_only = j["published_only"].get<bool>();
}

inline void to_json(nlohmann::json& j, const SearchFilters& f) {
  j = nlohmann::json::object();
  if (f.thm_types) {
    auto arr = nlohmann::json::array();
    for (auto t : *f.thm_types) arr.push_back(to_string(t));
    j["thm_types"] = arr;
  }
  if (f.authors) j["authors"] = *f.authors;
  if (f.tags) j["tags"] = *f.tags;
  if (f.doc_id) j["doc_id"] = *f.doc_id;
  if (f.year_range) j["year_range"] = {f.year_range->first, f.year_range->second};
  if (f.published_only) j["published_only"] = *f.published_only;
}

struct ScoredHit {
  std::string record_id;
  std::uint32_t node = 0;
  double cosine = 0.0;
  double composite = 0.0;  // the score the list is ordered by
  std::size_t rank = 0;
};

struct SearchOptions {
  std::size_t k = 10;
  SearchFilters filters;
  double citation_weight = 0.0;
  RerankProvider* reranker = nullptr;  // non-null: cross-encoder rescoring
  std::string query_text;              // passed to the reranker
};

struct SearchOutcome {
  std::vector<ScoredHit> hits;
  std::size_t pool_size = 0;
  std::size_t candidates = 0;
  std::size_t after_filter = 0;
  bool reranker_fallback = false;
  std::string reranker_error;
};

class VectorIndex {
 public:
  using NodeId = std::uint32_t;

  explicit VectorIndex(std::size_t dimension, HnswParams params = {})
      : dim_(dimension), graph_(params) {
    if (dimension == 0) throw Error(ErrorCode::InvalidArgument, "index dimension must be > 0");
  }

  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const HnswParams& params() const { return graph_.params(); }
  const HnswGraph<int>& graph() const { return graph_; }

  const std::string& record_id(NodeId n) const { return ids_[n]; }
  const IndexedTheorem& theorem(NodeId n) const { return meta_[n]; }
  const BinaryCode& code(NodeId n) const { return codes_[n]; }
  std::span<const float> vector(NodeId n) const { return {vectors_.data() + std::size_t(n) * dim_, dim_}; }

  std::optional<NodeId> find(const std::string& record_id) const {
    auto it = by_id_.find(record_id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  IndexEntry entry(NodeId n) const {
    auto v = vector(n);
    return IndexEntry{ids_[n], EmbeddingVector{ids_[n], {v.begin(), v.end()}}, codes_[n], n};
  }

  /// Adds one embedding with its metadata; the code is derived by quantize.
  void insert(const EmbeddingVector& v, IndexedTheorem meta) {
    if (v.values.size() != dim_)
      throw Error(ErrorCode::DimensionMismatch, "vector for " + v.record_id + " has " +
                                                    std::to_string(v.values.size()) + " dimensions, index has " +
                                                    std::to_string(dim_));
    if (by_id_.count(v.record_id)) throw Error(ErrorCode::DuplicateId, v.record_id);
    for (float x : v.values)
      if (!std::isfinite(x)) throw Error(ErrorCode::InvalidArgument, "non-finite vector for " + v.record_id);
    if (meta.record.record_id.empty()) meta.record.record_id = v.record_id;
    auto node = static_cast<NodeId>(ids_.size());
    ids_.push_back(v.record_id);
    by_id_.emplace(v.record_id, node);
    vectors_.insert(vectors_.end(), v.values.begin(), v.values.end());
    codes_.push_back(quantize(v.values));
    meta_.push_back(std::move(meta));
    graph_.insert([this](NodeId a, NodeId b) { return hamming_unchecked(codes_[a], codes_[b]); });
  }

  struct Candidate {
    NodeId node;
    int distance;
  };

  /// Up to `pool` approximate Hamming neighbors, ascending by distance with
  /// ties broken by record_id. Exhaustive when the pool covers the index.
  std::vector<Candidate> ann_candidate_nodes(const BinaryCode& query, std::size_t pool) const {
    if (query.dimension() != dim_) throw Error(ErrorCode::DimensionMismatch, "query code dimension");
    if (pool == 0) throw Error(ErrorCode::InvalidArgument, "pool must be >= 1");
    std::vector<Candidate> out;
    if (empty()) return out;
    if (pool >= size()) {
      out.reserve(size());
      for (NodeId n = 0; n < size(); ++n) out.push_back({n, hamming_unchecked(query, codes_[n])});
    } else {
      std::size_t ef = std::max(pool, params().ef_search);
      auto found = graph_.search([&](NodeId n) { return hamming_unchecked(query, codes_[n]); }, ef, ef);
      out.reserve(found.size());
      for (const auto& [d, n] : found) out.push_back({n, d});
    }
    std::sort(out.begin(), out.end(), [&](const Candidate& a, const Candidate& b) {
      return a.distance != b.distance ? a.distance < b.distance : ids_[a.node] < ids_[b.node];
    });
    if (out.size() > pool) out.resize(pool);
    return out;
  }

  std::vector<std::string> ann_candidates(const BinaryCode& query, std::size_t pool) const {
    std::vector<std::string> ids;
    for (const auto& c : ann_candidate_nodes(query, pool)) ids.push_back(ids_[c.node]);
    return ids;
  }

  /// quantize -> Hamming pool -> metadata filter -> cosine/composite order
  /// (or cross-encoder over the top kRerankDepth by cosine) -> top k.
  SearchOutcome search(std::span<const float> query, const SearchOptions& opts) const {
    if (opts.k < 1) throw Error(ErrorCode::InvalidK, "k must be >= 1");
    if (query.size() != dim_)
      throw Error(ErrorCode::DimensionMismatch, "query has " + std::to_string(query.size()) + " dimensions, index has " +
                                                    std::to_string(dim_));
    SearchOutcome outcome;
    outcome.pool_size = candidate_pool_size(static_cast<std::int64_t>(opts.k));
    if (empty()) return outcome;

    auto pool = ann_candidate_nodes(quantize(query), outcome.pool_size);
    outcome.candidates = pool.size();

    std::vector<ScoredHit> scored;
    for (const auto& c : pool) {
      const auto& meta = meta_[c.node];
      if (!opts.filters.matches(meta)) continue;
      ScoredHit h;
      h.record_id = ids_[c.node];
      h.node = c.node;
      h.cosine = cosine(query, vector(c.node));
      h.composite = composite_score(h.cosine, meta.paper.citations, opts.citation_weight);
      scored.push_back(std::move(h));
    }
    outcome.after_filter = scored.size();

    auto by_score = [](auto score) {
      return [score](const ScoredHit& a, const ScoredHit& b) {
        double sa = score(a), sb = score(b);
        return sa != sb ? sa > sb : a.record_id < b.record_id;
      };
    };

    if (opts.reranker && !scored.empty()) {
      auto prefix = scored;
      std::sort(prefix.begin(), prefix.end(), by_score([](const ScoredHit& h) { return h.cosine; }));
      if (prefix.size() > kRerankDepth) prefix.resize(kRerankDepth);
      std::vector<std::string> slogans;
      slogans.reserve(prefix.size());
      for (const auto& h : prefix) slogans.push_back(meta_[h.node].slogan);
      try {
        auto scores = opts.reranker->score_batch(opts.query_text, slogans);
        if (scores.size() != prefix.size()) throw Error(ErrorCode::ProviderError, "reranker returned wrong count");
        for (std::size_t i = 0; i < prefix.size(); ++i) prefix[i].composite = scores[i];
        scored = std::move(prefix);
      } catch (const std::exception& e) {
        // Fall back to the composite order over the whole filtered pool.
        outcome.reranker_fallback = true;
        outcome.reranker_error = e.what();
      }
    }
    std::sort(scored.begin(), scored.end(), by_score([](const ScoredHit& h) { return h.composite; }));
    if (scored.size() > opts.k) scored.resize(opts.k);
    for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = i + 1;
    outcome.hits = std::move(scored);
    return outcome;
  }

  // --- persistence -------------------------------------------------------

  /// Writes the index directory (manifest.json, vectors.bin, codes.bin,
  /// graph.bin, meta.jsonl) via a temporary sibling and a rename.
  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    std::string vectors;
    vectors.reserve(vectors_.size() * 4);
    for (float f : vectors_) put_u32(vectors, std::bit_cast<std::uint32_t>(f));
    std::string codes;
    for (const auto& c : codes_) c.append_bytes(codes);
    std::string graph = graph_.serialize();
    std::string meta;
    for (const auto& m : meta_) meta += nlohmann::json(m).dump() + "\n";

    nlohmann::json manifest = {
        {"format_version", kIndexFormatVersion},
        {"dimension", dim_},
        {"count", size()},
        {"hnsw_params",
         {{"m", params().m}, {"ef_construction", params().ef_construction}, {"ef_search", params().ef_search}}},
        {"rng_seed", params().rng_seed},
        {"rng_state", graph_.rng_state()},
        {"checksums",
         {{"vectors.bin", sha256_hex(vectors)},
          {"codes.bin", sha256_hex(codes)},
          {"graph.bin", sha256_hex(graph)},
          {"meta.jsonl", sha256_hex(meta)}}}};
    // The manifest covers itself too: digest of its compact form without this key.
    manifest["manifest_sha256"] = sha256_hex(manifest.dump());

    fs::path target = fs::absolute(dir);
    fs::path tmp = target;
    tmp += ".tmp";
    fs::path old = target;
    old += ".old";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp);
    write_bytes(tmp / "vectors.bin", vectors);
    write_bytes(tmp / "codes.bin", codes);
    write_bytes(tmp / "graph.bin", graph);
    write_bytes(tmp / "meta.jsonl", meta);
    write_bytes(tmp / "manifest.json", manifest.dump(2) + "\n");
    fs::remove_all(old, ec);
    if (fs::exists(target)) fs::rename(target, old);
    fs::rename(tmp, target);
    fs::remove_all(old, ec);
  }

  static VectorIndex load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir / "manifest.json")) throw Error(ErrorCode::IoError, "no manifest in " + dir.string());
    auto manifest = nlohmann::json::parse(read_bytes(dir / "manifest.json"), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object())
      throw Error(ErrorCode::ChecksumMismatch, "unreadable manifest in " + dir.string());
    if (manifest.value("format_version", -1) != kIndexFormatVersion)
      throw Error(ErrorCode::VersionMismatch, "index format version " + manifest.value("format_version", nlohmann::json(-1)).dump());
    {
      auto body = manifest;
      auto stored = body.value("manifest_sha256", std::string());
      body.erase("manifest_sha256");
      if (stored != sha256_hex(body.dump()))
        throw Error(ErrorCode::ChecksumMismatch, "manifest.json does not match its checksum");
    }

    try {
      HnswParams params;
      const auto& hp = manifest.at("hnsw_params");
      params.m = hp.at("m").get<std::size_t>();
      params.ef_construction = hp.at("ef_construction").get<std::size_t>();
      params.ef_search = hp.at("ef_search").get<std::size_t>();
      params.rng_seed = manifest.at("rng_seed").get<std::uint64_t>();
      auto dim = manifest.at("dimension").get<std::size_t>();
      auto count = manifest.at("count").get<std::size_t>();
      const auto& sums = manifest.at("checksums");

      auto checked = [&](const char* name) {
        std::string data = read_bytes(dir / name);
        if (sha256_hex(data) != sums.at(name).get<std::string>())
          throw Error(ErrorCode::ChecksumMismatch, std::string(name) + " does not match its checksum");
        return data;
      };
      std::string vectors = checked("vectors.bin");
      std::string codes = checked("codes.bin");
      std::string graph = checked("graph.bin");
      std::string meta = checked("meta.jsonl");

      VectorIndex index(dim, params);
      std::size_t code_bytes = (dim + 7) / 8;
      if (vectors.size() != count * dim * 4 || codes.size() != count * code_bytes)
        throw Error(ErrorCode::ChecksumMismatch, "index file sizes disagree with manifest");
      index.vectors_.resize(count * dim);
      for (std::size_t i = 0; i < count * dim; ++i)
        index.vectors_[i] = std::bit_cast<float>(get_u32(vectors, 4 * i));
      auto code_span = std::span(reinterpret_cast<const unsigned char*>(codes.data()), codes.size());
      for (std::size_t n = 0; n < count; ++n)
        index.codes_.push_back(BinaryCode::from_bytes(code_span.subspan(n * code_bytes, code_bytes), dim));
      std::size_t start = 0;
      while (start < meta.size()) {
        auto nl = meta.find('\n', start);
        if (nl == std::string::npos) nl = meta.size();
        auto row = nlohmann::json::parse(meta.substr(start, nl - start));
        index.meta_.push_back(row.get<IndexedTheorem>());
        start = nl + 1;
      }
      if (index.meta_.size() != count) throw Error(ErrorCode::ChecksumMismatch, "meta.jsonl row count mismatch");
      for (std::size_t n = 0; n < count; ++n) {
        const auto& id = index.meta_[n].record.record_id;
        if (!index.by_id_.emplace(id, static_cast<NodeId>(n)).second) throw Error(ErrorCode::DuplicateId, id);
        index.ids_.push_back(id);
      }
      index.graph_.deserialize(graph);
      if (index.graph_.size() != count) throw Error(ErrorCode::ChecksumMismatch, "graph node count mismatch");
      if (manifest.contains("rng_state")) index.graph_.set_rng_state(manifest["rng_state"].get<std::string>());
      return index;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ChecksumMismatch, std::string("malformed index data: ") + e.what());
    }
  }

 private:
  static void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }

  static std::uint32_t get_u32(const std::string& data, std::size_t pos) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(static_cast<unsigned char>(data[pos + b])) << (8 * b);
    return v;
  }

  static void write_bytes(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }

  static std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  std::size_t dim_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, NodeId> by_id_;
  std::vector<float> vectors_;
  std::vector<BinaryCode> codes_;
  std::vector<IndexedTheorem> meta_;
  HnswGraph<int> graph_;
};

}  // namespace thmdx
