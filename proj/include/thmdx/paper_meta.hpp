#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "thmdx/error.hpp"

namespace thmdx {

/// Document-level metadata attached to every theorem of a paper.
struct PaperMeta {
  std::string doc_id;
  std::string title;
  std::vector<std::string> authors;
  std::string abstract_text;
  std::string primary_tag;
  std::vector<std::string> tags;
  int year = 0;
  std::optional<std::string> journal;
  std::int64_t citations = 0;
  std::string source = "arxiv";
  std::string url;

  bool published() const { return journal && !journal->empty(); }

  friend bool operator==(const PaperMeta&, const PaperMeta&) = default;
};

/// Placeholder metadata for documents without an entry in the papers file.
inline PaperMeta default_paper_meta(const std::string& doc_id) {
  PaperMeta m;
  m.doc_id = doc_id;
  m.title = doc_id;
  return m;
}

inline void to_json(nlohmann::json& j, const PaperMeta& m) {
  j = nlohmann::json{{"doc_id", m.doc_id},
                     {"title", m.title},
                     {"authors", m.authors},
                     {"abstract", m.abstract_text},
                     {"primary_tag", m.primary_tag},
                     {"tags", m.tags},
                     {"year", m.year},
                     {"journal", m.journal ? nlohmann::json(*m.journal) : nlohmann::json(nullptr)},
                     {"citations", m.citations},
                     {"source", m.source},
                     {"url", m.url}};
}

inline void from_json(const nlohmann::json& j, PaperMeta& m) {
  m.doc_id = j.at("doc_id").get<std::string>();
  m.title = j.value("title", m.doc_id);
  m.authors = j.value("authors", std::vector<std::string>{});
  m.abstract_text = j.value("abstract", std::string());
  m.tags = j.value("tags", std::vector<std::string>{});
  m.primary_tag = j.value("primary_tag", m.tags.empty() ? std::string() : m.tags.front());
  if (!m.primary_tag.empty() &&
      std::find(m.tags.begin(), m.tags.end(), m.primary_tag) == m.tags.end())
    m.tags.insert(m.tags.begin(), m.primary_tag);
  m.year = j.value("year", 0);
  if (j.contains("journal") && j["journal"].is_string()) m.journal = j["journal"].get<std::string>();
  m.citations = j.value("citations", std::int64_t{0});
  if (m.citations < 0) throw Error(ErrorCode::InvalidArgument, "negative citations for " + m.doc_id);
  m.source = j.value("source", std::string("arxiv"));
  m.url = j.value("url", std::string());
}

}  // namespace thmdx
