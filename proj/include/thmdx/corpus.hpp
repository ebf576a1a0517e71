#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "thmdx/error.hpp"
#include "thmdx/jsonl.hpp"
#include "thmdx/latex_extract.hpp"

namespace thmdx {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Splits a .tex file at \begin{document}; the body stops at \end{document}.
inline RawDocument latex_document_from_source(std::string doc_id, std::string_view source) {
  RawDocument doc;
  doc.doc_id = std::move(doc_id);
  doc.format = DocFormat::latex;
  constexpr std::string_view kBegin = "\\begin{document}";
  constexpr std::string_view kEnd = "\\end{document}";
  auto begin = source.find(kBegin);
  if (begin == std::string_view::npos) {
    doc.body = std::string(source);
    return doc;
  }
  doc.preamble = std::string(source.substr(0, begin));
  auto body_start = begin + kBegin.size();
  auto end = source.find(kEnd, body_start);
  doc.body = std::string(source.substr(body_start, end == std::string_view::npos ? std::string_view::npos
                                                                                 : end - body_start));
  return doc;
}

inline bool is_wikitext_extension(const std::string& ext) {
  return ext == ".wiki" || ext == ".wikitext" || ext == ".mediawiki";
}

struct CorpusLoad {
  std::vector<RawDocument> documents;
  std::vector<std::string> errors;  // per-file problems; loading continues
};

/// Loads documents from directories (.tex / .wiki files, recursively, in
/// sorted path order) and JSON-lines files of {doc_id, format, preamble, body}.
/// The doc_id of a file is its path relative to the directory, without extension.
inline CorpusLoad load_corpus(const std::vector<std::filesystem::path>& paths) {
  namespace fs = std::filesystem;
  CorpusLoad out;
  auto load_jsonl = [&](const fs::path& file) {
    try {
      jsonl::for_each(file, [&](const nlohmann::json& row) {
        try {
          out.documents.push_back(row.get<RawDocument>());
        } catch (const std::exception& e) {
          out.errors.push_back(file.string() + ": " + e.what());
        }
      });
    } catch (const std::exception& e) {
      out.errors.push_back(e.what());
    }
  };

  for (const auto& path : paths) {
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& entry : fs::recursive_directory_iterator(path))
        if (entry.is_regular_file()) files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      for (const auto& file : files) {
        auto ext = file.extension().string();
        auto rel = fs::relative(file, path);
        auto doc_id = (rel.parent_path() / rel.stem()).generic_string();
        try {
          if (ext == ".tex") {
            out.documents.push_back(latex_document_from_source(doc_id, read_file(file)));
          } else if (is_wikitext_extension(ext)) {
            RawDocument doc;
            doc.doc_id = doc_id;
            doc.format = DocFormat::wikitext;
            doc.body = read_file(file);
            out.documents.push_back(std::move(doc));
          } else if (ext == ".jsonl") {
            load_jsonl(file);
          }
        } catch (const std::exception& e) {
          out.errors.push_back(file.string() + ": " + e.what());
        }
      }
    } else if (fs::is_regular_file(path)) {
      load_jsonl(path);
    } else {
      out.errors.push_back(path.string() + ": no such file or directory");
    }
  }
  return out;
}

/// Text of the first \section of a LaTeX body (up to the next \section),
/// comment-stripped and whitespace-collapsed. Empty when there is none.
inline std::string first_section(std::string_view body, std::size_t max_chars = 20000) {
  std::string text = strip_comments(body);
  constexpr std::string_view kSection = "\\section";
  auto start = text.find(kSection);
  if (start == std::string::npos) return {};
  std::size_t i = start + kSection.size();
  if (i < text.size() && text[i] == '*') ++i;
  detail::skip_space(text, i);
  detail::read_group(text, i, '{', '}');
  auto end = text.find(kSection, i);
  std::string section = collapse_whitespace(std::string_view(text).substr(i, end == std::string::npos ? std::string::npos : end - i));
  if (section.size() > max_chars) section.resize(max_chars);
  return section;
}

}  // namespace thmdx
