#pragma once

// Theorem extraction from LaTeX and MediaWiki sources.
//
// LaTeX documents are scanned for theorem delimiter tokens
// (\begin{env}..\end{env} and \proclaim..\endproclaim) after comment
// stripping and expansion of zero-argument author macros. Wikitext pages
// are reduced to their statement section and cleaned of wiki markup.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "thmdx/error.hpp"

namespace thmdx {

enum class DocFormat { latex, wikitext };

enum class ThmType { theorem, lemma, proposition, corollary };

/// How a record's ref_number was obtained.
enum class NumberedBy { counter, explicit_number, none };

inline constexpr ThmType kAllThmTypes[] = {ThmType::theorem, ThmType::lemma, ThmType::proposition,
                                           ThmType::corollary};

constexpr std::string_view to_string(DocFormat f) {
  return f == DocFormat::latex ? "latex" : "wikitext";
}

constexpr std::string_view to_string(ThmType t) {
  switch (t) {
    case ThmType::theorem: return "theorem";
    case ThmType::lemma: return "lemma";
    case ThmType::proposition: return "proposition";
    case ThmType::corollary: return "corollary";
  }
  return "theorem";
}

constexpr std::string_view to_string(NumberedBy n) {
  switch (n) {
    case NumberedBy::counter: return "counter";
    case NumberedBy::explicit_number: return "explicit";
    case NumberedBy::none: return "none";
  }
  return "none";
}

inline std::optional<ThmType> parse_thm_type(std::string_view s) {
  for (auto t : kAllThmTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

inline std::optional<DocFormat> parse_doc_format(std::string_view s) {
  if (s == "latex") return DocFormat::latex;
  if (s == "wikitext") return DocFormat::wikitext;
  return std::nullopt;
}

struct RawDocument {
  std::string doc_id;
  DocFormat format = DocFormat::latex;
  std::string preamble;
  std::string body;
  std::optional<std::string> source_url;
};

struct TheoremRecord {
  std::string record_id;
  std::string doc_id;
  ThmType thm_type = ThmType::theorem;
  std::optional<std::string> ref_number;
  NumberedBy numbered_by = NumberedBy::none;
  std::optional<std::string> note;
  std::optional<std::string> label;
  std::string body;
  std::string name;
  std::optional<std::string> source_url;

  friend bool operator==(const TheoremRecord&, const TheoremRecord&) = default;
};

/// Zero-argument author macros, keyed by control sequence (e.g. "\R").
struct MacroTable {
  std::map<std::string, std::string> entries;
  std::size_t skipped_parameterized = 0;

  bool empty() const { return entries.empty(); }
};

struct ParseReport {
  std::string doc_id;
  std::size_t extracted = 0;
  std::size_t filtered_short = 0;
  std::size_t filtered_suffix = 0;
  std::size_t unmatched_delimiters = 0;
  std::size_t nested = 0;           // theorem-like environments inside an extracted span
  std::size_t unknown_proclaim = 0;  // \proclaim spans whose heading is not a theorem type
  std::size_t skipped_macros = 0;
  bool macro_cycle = false;
  bool no_statement_section = false;

  std::size_t filtered() const { return filtered_short + filtered_suffix; }

  ParseReport& operator+=(const ParseReport& o) {
    extracted += o.extracted;
    filtered_short += o.filtered_short;
    filtered_suffix += o.filtered_suffix;
    unmatched_delimiters += o.unmatched_delimiters;
    nested += o.nested;
    unknown_proclaim += o.unknown_proclaim;
    skipped_macros += o.skipped_macros;
    macro_cycle = macro_cycle || o.macro_cycle;
    no_statement_section = no_statement_section || o.no_statement_section;
    return *this;
  }
};

struct Extraction {
  std::vector<TheoremRecord> records;
  ParseReport report;
};

inline constexpr int kMacroPassLimit = 10;
inline constexpr std::size_t kMinBodyLength = 8;

namespace detail {

inline bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

/// True when the character at `pos` is escaped by an odd run of backslashes.
inline bool escaped(std::string_view s, std::size_t pos) {
  std::size_t n = 0;
  while (pos > n && s[pos - n - 1] == '\\') ++n;
  return n % 2 == 1;
}

inline void skip_space(std::string_view s, std::size_t& i) {
  while (i < s.size() && is_space(s[i])) ++i;
}

/// Reads a balanced group starting at s[i] == open. Returns the inner text
/// and advances i past the closing delimiter; nullopt when unbalanced.
inline std::optional<std::string> read_group(std::string_view s, std::size_t& i, char open, char close) {
  if (i >= s.size() || s[i] != open) return std::nullopt;
  int depth = 0;
  int braces = 0;
  for (std::size_t j = i; j < s.size(); ++j) {
    char c = s[j];
    if (c == '\\') {
      ++j;
      continue;
    }
    if (open != '{') {
      if (c == '{') ++braces;
      if (c == '}') --braces;
      if (braces > 0) continue;
    }
    if (c == open) {
      ++depth;
    } else if (c == close) {
      if (--depth == 0) {
        std::string inner(s.substr(i + 1, j - i - 1));
        i = j + 1;
        return inner;
      }
    }
  }
  return std::nullopt;
}

/// Reads a control sequence (\name or \x) at s[i].
inline std::optional<std::string> read_control_sequence(std::string_view s, std::size_t& i) {
  if (i >= s.size() || s[i] != '\\' || i + 1 >= s.size()) return std::nullopt;
  std::size_t j = i + 1;
  if (is_letter(s[j])) {
    while (j < s.size() && is_letter(s[j])) ++j;
  } else {
    ++j;
  }
  std::string cs(s.substr(i, j - i));
  i = j;
  return cs;
}

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline std::string capitalize(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace detail

/// Collapses whitespace runs to one space and trims both ends.
inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : s) {
    if (detail::is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

/// Removes TeX comments: an unescaped % through the end of its line.
inline std::string strip_comments(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && !detail::escaped(s, i)) {
      while (i < s.size() && s[i] != '\n') ++i;
      continue;
    }
    out.push_back(s[i]);
  }
  return out;
}

/// Collects zero-argument macro definitions (\newcommand and friends, \def,
/// \DeclareMathOperator). Parameterized or unparseable definitions are skipped.
inline MacroTable build_macro_table(std::string_view preamble) {
  using namespace detail;
  MacroTable table;
  const std::string text = strip_comments(preamble);
  const std::string_view s = text;

  auto add = [&](const std::string& key, const std::string& value) {
    if (key.size() < 2 || key[0] != '\\' || value == key) return;
    table.entries[key] = value;
  };

  // Reads "{\X}" or "\X".
  auto read_name = [&](std::size_t& i) -> std::optional<std::string> {
    skip_space(s, i);
    if (i < s.size() && s[i] == '{') {
      auto inner = read_group(s, i, '{', '}');
      if (!inner) return std::nullopt;
      std::string name = trim(*inner);
      std::size_t k = 0;
      auto cs = read_control_sequence(name, k);
      if (!cs || k != name.size()) return std::nullopt;
      return cs;
    }
    return read_control_sequence(s, i);
  };

  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '\\' || escaped(s, i)) {
      ++i;
      continue;
    }
    std::size_t start = i;
    auto cs = read_control_sequence(s, i);
    if (!cs) break;
    if (*cs == "\\newcommand" || *cs == "\\renewcommand" || *cs == "\\providecommand") {
      if (i < s.size() && s[i] == '*') ++i;
      auto name = read_name(i);
      if (!name) continue;
      skip_space(s, i);
      bool parameterized = false;
      if (i < s.size() && s[i] == '[') {
        auto count = read_group(s, i, '[', ']');
        if (!count) continue;
        parameterized = trim(*count) != "0";
        skip_space(s, i);
        if (i < s.size() && s[i] == '[') {
          if (!read_group(s, i, '[', ']')) continue;
          skip_space(s, i);
        }
      }
      auto body = read_group(s, i, '{', '}');
      if (!body) continue;
      if (parameterized) {
        ++table.skipped_parameterized;
      } else {
        add(*name, *body);
      }
    } else if (*cs == "\\def" || *cs == "\\gdef" || *cs == "\\edef" || *cs == "\\xdef") {
      skip_space(s, i);
      auto name = read_control_sequence(s, i);
      if (!name) continue;
      std::size_t brace = s.find('{', i);
      if (brace == std::string_view::npos) break;
      bool parameterized = s.substr(i, brace - i).find('#') != std::string_view::npos;
      i = brace;
      auto body = read_group(s, i, '{', '}');
      if (!body) continue;
      if (parameterized) {
        ++table.skipped_parameterized;
      } else {
        add(*name, *body);
      }
    } else if (*cs == "\\DeclareMathOperator") {
      bool star = i < s.size() && s[i] == '*';
      if (star) ++i;
      auto name = read_name(i);
      if (!name) continue;
      skip_space(s, i);
      auto body = read_group(s, i, '{', '}');
      if (!body) continue;
      add(*name, std::string(star ? "\\operatorname*{" : "\\operatorname{") + *body + "}");
    } else {
      i = start + cs->size();
    }
  }
  return table;
}

namespace detail {

/// One substitution pass; returns the number of replacements made.
inline std::size_t expand_once(std::string_view in, const MacroTable& table, std::string& out) {
  out.clear();
  out.reserve(in.size());
  std::size_t replaced = 0;
  std::size_t i = 0;
  while (i < in.size()) {
    if (in[i] != '\\') {
      out.push_back(in[i++]);
      continue;
    }
    std::size_t j = i;
    auto cs = read_control_sequence(in, j);
    if (!cs) {
      out.push_back(in[i++]);
      continue;
    }
    auto it = table.entries.find(*cs);
    if (it != table.entries.end()) {
      out += it->second;
      ++replaced;
    } else {
      out += *cs;
    }
    i = j;
  }
  return replaced;
}

}  // namespace detail

/// Replaces every macro token with its definition until a fixpoint.
/// A control word only matches when not followed by another letter, so
/// "\R" never matches inside "\Real". Throws PassLimitExceeded when the
/// text still changes after kMacroPassLimit passes.
inline std::string expand_macros(std::string_view body, const MacroTable& table) {
  std::string current(body);
  if (table.empty()) return current;
  std::string next;
  for (int pass = 0; pass < kMacroPassLimit; ++pass) {
    if (detail::expand_once(current, table, next) == 0) return current;
    current.swap(next);
  }
  if (detail::expand_once(current, table, next) != 0)
    throw Error(ErrorCode::PassLimitExceeded,
                "macro expansion did not reach a fixpoint in " + std::to_string(kMacroPassLimit) +
                    " passes");
  return current;
}

/// Maps an environment name to one of the four statement types, accepting
/// the usual shorthands. Case-insensitive; a trailing '*' is ignored.
inline std::optional<ThmType> normalize_environment_name(std::string_view raw) {
  std::string name = detail::lower(detail::trim(raw));
  if (!name.empty() && name.back() == '*') name.pop_back();
  static const std::map<std::string, ThmType, std::less<>> kNames = {
      {"theorem", ThmType::theorem},         {"thm", ThmType::theorem},
      {"theo", ThmType::theorem},            {"lemma", ThmType::lemma},
      {"lem", ThmType::lemma},               {"proposition", ThmType::proposition},
      {"prop", ThmType::proposition},        {"corollary", ThmType::corollary},
      {"cor", ThmType::corollary},           {"corol", ThmType::corollary},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) return std::nullopt;
  return it->second;
}

/// "Theorem 3.9 (Shokurov reduction)"-style display name.
inline std::string compose_name(ThmType type, const std::optional<std::string>& ref_number,
                                const std::optional<std::string>& note) {
  std::string name = detail::capitalize(to_string(type));
  if (ref_number) name += " " + *ref_number;
  if (note) name += " (" + *note + ")";
  return name;
}

/// Rejects truncated extractions: fewer than 8 characters, or ending in
/// " and" / " let" (case-sensitive) after trailing whitespace is removed.
inline bool filter_malformed(std::string_view body) {
  std::string trimmed = detail::trim(body);
  if (detail::utf8_length(trimmed) < kMinBodyLength) return false;
  return !(detail::ends_with(trimmed, " and") || detail::ends_with(trimmed, " let"));
}

namespace detail {

enum class TokenKind { begin, end, proclaim, endproclaim };

struct DelimToken {
  TokenKind kind;
  std::string name;
  std::size_t pos;
  std::size_t end;
};

inline std::vector<DelimToken> scan_delimiters(const std::string& text) {
  static const std::regex kDelim(
      R"(\\(begin|end)\s*\{([^{}]*)\}|\\(endproclaim|proclaim)(?![A-Za-z]))");
  std::vector<DelimToken> tokens;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kDelim); it != std::sregex_iterator();
       ++it) {
    const auto& m = *it;
    auto pos = static_cast<std::size_t>(m.position(0));
    if (escaped(text, pos)) continue;
    DelimToken tok;
    tok.pos = pos;
    tok.end = pos + static_cast<std::size_t>(m.length(0));
    if (m[1].matched) {
      tok.kind = m[1] == "begin" ? TokenKind::begin : TokenKind::end;
      tok.name = trim(m[2].str());
    } else {
      tok.kind = m[3] == "proclaim" ? TokenKind::proclaim : TokenKind::endproclaim;
    }
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

/// Removes every \label{...}, returning the key of the first one.
inline std::optional<std::string> take_labels(std::string& text) {
  static const std::regex kLabel(R"(\\label\s*\{([^{}]*)\})");
  std::optional<std::string> first;
  std::smatch m;
  if (std::regex_search(text, m, kLabel)) first = trim(m[1].str());
  text = std::regex_replace(text, kLabel, "");
  return first;
}

struct ProclaimHeading {
  std::optional<ThmType> type;
  std::optional<std::string> number;
  std::optional<std::string> note;
};

inline ProclaimHeading parse_proclaim_heading(std::string heading) {
  heading = collapse_whitespace(heading);
  while (!heading.empty() && (heading.back() == '.' || heading.back() == ':')) heading.pop_back();
  ProclaimHeading out;
  static const std::regex kHeading(R"(^([A-Za-z]+)\s*([0-9]+(?:\.[0-9]+)*)?\.?\s*(?:\((.*)\))?\s*$)");
  std::smatch m;
  if (!std::regex_match(heading, m, kHeading)) return out;
  out.type = normalize_environment_name(m[1].str());
  if (m[2].matched) out.number = m[2].str();
  if (m[3].matched) {
    auto note = trim(m[3].str());
    if (!note.empty()) out.note = note;
  }
  return out;
}

}  // namespace detail

/// Extracts theorem records from a LaTeX document.
///
/// Only outermost theorem-like spans are extracted; inner ones stay in the
/// body and are counted in ParseReport::nested. Unbalanced \begin tokens are
/// skipped and counted. Records failing filter_malformed are dropped and
/// counted but still consume a counter value.
inline Extraction extract_theorems(const RawDocument& doc) {
  using namespace detail;
  if (doc.format != DocFormat::latex)
    throw Error(ErrorCode::InvalidArgument, "extract_theorems expects a latex document");

  Extraction result;
  ParseReport& report = result.report;
  report.doc_id = doc.doc_id;

  MacroTable table = build_macro_table(doc.preamble);
  report.skipped_macros = table.skipped_parameterized;
  std::string text = strip_comments(doc.body);
  try {
    text = expand_macros(text, table);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::PassLimitExceeded) throw;
    report.macro_cycle = true;
  }

  const auto tokens = scan_delimiters(text);
  int counter = 0;
  std::size_t ordinal = 0;

  auto emit = [&](ThmType type, std::optional<std::string> number, NumberedBy numbered_by,
                  std::optional<std::string> note, std::string inner) {
    ++ordinal;
    if (numbered_by == NumberedBy::counter) number = std::to_string(++counter);
    auto label = take_labels(inner);
    std::string body = collapse_whitespace(inner);
    if (utf8_length(body) < kMinBodyLength) {
      ++report.filtered_short;
      return;
    }
    if (!filter_malformed(body)) {
      ++report.filtered_suffix;
      return;
    }
    TheoremRecord rec;
    rec.record_id = doc.doc_id + ":" + std::to_string(ordinal);
    rec.doc_id = doc.doc_id;
    rec.thm_type = type;
    rec.ref_number = std::move(number);
    rec.numbered_by = numbered_by;
    rec.note = std::move(note);
    rec.label = std::move(label);
    rec.body = std::move(body);
    rec.name = compose_name(rec.thm_type, rec.ref_number, rec.note);
    rec.source_url = doc.source_url;
    result.records.push_back(std::move(rec));
    ++report.extracted;
  };

  std::size_t t = 0;
  while (t < tokens.size()) {
    const auto& tok = tokens[t];
    if (tok.kind == TokenKind::begin) {
      auto type = normalize_environment_name(tok.name);
      if (!type) {
        ++t;
        continue;
      }
      std::size_t u = t + 1;
      int depth = 0;
      for (; u < tokens.size(); ++u) {
        if (tokens[u].name != tok.name) continue;
        if (tokens[u].kind == TokenKind::begin) ++depth;
        if (tokens[u].kind == TokenKind::end && depth-- == 0) break;
      }
      if (u == tokens.size()) {
        ++report.unmatched_delimiters;
        ++t;
        continue;
      }
      for (std::size_t v = t + 1; v < u; ++v)
        if (tokens[v].kind == TokenKind::begin && normalize_environment_name(tokens[v].name))
          ++report.nested;

      std::string_view inner = std::string_view(text).substr(tok.end, tokens[u].pos - tok.end);
      std::size_t i = 0;
      skip_space(inner, i);
      std::optional<std::string> note;
      if (i < inner.size() && inner[i] == '[') {
        std::size_t j = i;
        if (auto group = read_group(inner, j, '[', ']')) {
          auto collapsed = collapse_whitespace(*group);
          if (!collapsed.empty()) note = collapsed;
          i = j;
        }
      }
      emit(*type, std::nullopt, NumberedBy::counter, std::move(note), std::string(inner.substr(i)));
      t = u + 1;
    } else if (tok.kind == TokenKind::proclaim) {
      std::size_t u = t + 1;
      while (u < tokens.size() && tokens[u].kind != TokenKind::endproclaim &&
             tokens[u].kind != TokenKind::proclaim)
        ++u;
      if (u == tokens.size() || tokens[u].kind != TokenKind::endproclaim) {
        ++report.unmatched_delimiters;
        ++t;
        continue;
      }
      std::string_view span = std::string_view(text).substr(tok.end, tokens[u].pos - tok.end);
      std::size_t i = 0;
      while (i < span.size() && (span[i] == ' ' || span[i] == '\t')) ++i;
      std::string heading;
      if (i < span.size() && span[i] == '{') {
        auto group = read_group(span, i, '{', '}');
        heading = group.value_or("");
      } else {
        // Heading ends at the line break or at a period followed by space.
        std::size_t j = i;
        while (j < span.size() && span[j] != '\n' &&
               !(span[j] == '.' && j + 1 < span.size() && is_space(span[j + 1])))
          ++j;
        heading = std::string(span.substr(i, j - i));
        i = j < span.size() ? j + 1 : j;
      }
      auto parsed = parse_proclaim_heading(heading);
      if (!parsed.type) {
        ++report.unknown_proclaim;
      } else {
        auto numbered_by = parsed.number ? NumberedBy::explicit_number : NumberedBy::counter;
        emit(*parsed.type, parsed.number, numbered_by, parsed.note, std::string(span.substr(i)));
      }
      t = u + 1;
    } else {
      ++t;
    }
  }
  return result;
}

namespace detail {

struct WikiHeading {
  std::size_t level;
  std::string title;
};

inline std::optional<WikiHeading> parse_wiki_heading(std::string_view line) {
  std::string l = trim(line);
  std::size_t lead = 0;
  while (lead < l.size() && l[lead] == '=') ++lead;
  std::size_t trail = 0;
  while (trail < l.size() - lead && l[l.size() - 1 - trail] == '=') ++trail;
  if (lead == 0 || lead != trail || l.size() <= 2 * lead) return std::nullopt;
  return WikiHeading{lead, trim(std::string_view(l).substr(lead, l.size() - 2 * lead))};
}

inline std::optional<ThmType> statement_heading_type(const std::string& title) {
  auto l = lower(title);
  if (l == "statement" || l == "theorem statement") return ThmType::theorem;
  return normalize_environment_name(l);
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

}  // namespace detail

/// Statement section of a wiki page: the text under the first statement
/// heading up to the next heading (normally the proof). Without such a
/// heading, the <onlyinclude> block is used.
struct WikiStatement {
  ThmType type = ThmType::theorem;
  std::string raw;
};

inline WikiStatement extract_statement_section(std::string_view page_text) {
  using namespace detail;
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= page_text.size()) {
    auto nl = page_text.find('\n', start);
    if (nl == std::string_view::npos) nl = page_text.size();
    lines.push_back(page_text.substr(start, nl - start));
    start = nl + 1;
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto heading = parse_wiki_heading(lines[i]);
    if (!heading) continue;
    auto type = statement_heading_type(heading->title);
    if (!type) continue;
    std::string raw;
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      if (parse_wiki_heading(lines[j])) break;
      raw.append(lines[j]);
      raw.push_back('\n');
    }
    return {*type, std::move(raw)};
  }
  auto open = page_text.find("<onlyinclude>");
  if (open != std::string_view::npos) {
    auto close = page_text.find("</onlyinclude>", open);
    auto end = close == std::string_view::npos ? page_text.size() : close + 14;
    return {ThmType::theorem, std::string(page_text.substr(open, end - open))};
  }
  throw Error(ErrorCode::NoStatementSection, "no statement heading or <onlyinclude> block");
}

/// Strips MediaWiki markup from a statement fragment: <onlyinclude> tags,
/// {{template}} calls, [[wiki links]]; <math>X</math> becomes $X$.
inline std::string clean_wiki_markup(std::string_view fragment) {
  using namespace detail;
  std::string s(fragment);

  // Math spans are parked in placeholders so template/link rules cannot touch them.
  std::vector<std::string> maths;
  {
    static const std::regex kMath(R"(<math>([\s\S]*?)</math>)", std::regex::icase);
    std::string out;
    auto begin = std::sregex_iterator(s.begin(), s.end(), kMath);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      out.append(s, last, static_cast<std::size_t>(it->position(0)) - last);
      out += "\x01" + std::to_string(maths.size()) + "\x02";
      maths.push_back(trim((*it)[1].str()));
      last = static_cast<std::size_t>(it->position(0) + it->length(0));
    }
    out.append(s, last, std::string::npos);
    s = std::move(out);
  }

  s = replace_all(s, "<onlyinclude>", "");
  s = replace_all(s, "</onlyinclude>", "");

  {
    std::string out;
    int depth = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.compare(i, 2, "{{") == 0) {
        ++depth;
        ++i;
      } else if (depth > 0 && s.compare(i, 2, "}}") == 0) {
        --depth;
        ++i;
      } else if (depth == 0) {
        out.push_back(s[i]);
      }
    }
    s = std::move(out);
  }

  {
    static const std::regex kLink(R"(\[\[([^\[\]|]*)(?:\|([^\[\]]*))?\]\])");
    std::string out;
    std::size_t last = 0;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), kLink); it != std::sregex_iterator(); ++it) {
      out.append(s, last, static_cast<std::size_t>(it->position(0)) - last);
      out += (*it)[2].matched ? (*it)[2].str() : (*it)[1].str();
      last = static_cast<std::size_t>(it->position(0) + it->length(0));
    }
    out.append(s, last, std::string::npos);
    s = std::move(out);
  }

  for (std::size_t k = 0; k < maths.size(); ++k)
    s = replace_all(s, "\x01" + std::to_string(k) + "\x02", "$" + maths[k] + "$");
  return collapse_whitespace(s);
}

/// Statement text of a wiki page with markup removed.
/// Throws NoStatementSection when the page has no recognizable statement.
inline std::string clean_wikitext(std::string_view page_text) {
  return clean_wiki_markup(extract_statement_section(page_text).raw);
}

/// ProofWiki-style page URL for a page title.
inline std::string wiki_page_url(std::string_view title) {
  std::string path(title);
  std::replace(path.begin(), path.end(), ' ', '_');
  return "https://proofwiki.org/wiki/" + path;
}

/// One record per wiki page, named after the page title.
inline Extraction extract_wikitext(const RawDocument& doc) {
  if (doc.format != DocFormat::wikitext)
    throw Error(ErrorCode::InvalidArgument, "extract_wikitext expects a wikitext document");
  Extraction result;
  result.report.doc_id = doc.doc_id;
  WikiStatement statement;
  try {
    statement = extract_statement_section(doc.body);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoStatementSection) throw;
    result.report.no_statement_section = true;
    return result;
  }
  std::string body = clean_wiki_markup(statement.raw);
  if (detail::utf8_length(body) < kMinBodyLength) {
    ++result.report.filtered_short;
    return result;
  }
  if (!filter_malformed(body)) {
    ++result.report.filtered_suffix;
    return result;
  }
  auto slash = doc.doc_id.rfind('/');
  std::string title = detail::replace_all(slash == std::string::npos ? doc.doc_id : doc.doc_id.substr(slash + 1), "_", " ");
  TheoremRecord rec;
  rec.record_id = doc.doc_id + ":1";
  rec.doc_id = doc.doc_id;
  rec.thm_type = statement.type;
  rec.numbered_by = NumberedBy::none;
  rec.note = title;
  rec.body = std::move(body);
  rec.name = compose_name(rec.thm_type, rec.ref_number, rec.note);
  rec.source_url = doc.source_url ? doc.source_url : std::optional(wiki_page_url(title));
  result.records.push_back(std::move(rec));
  result.report.extracted = 1;
  return result;
}

/// Format dispatch.
inline Extraction extract(const RawDocument& doc) {
  return doc.format == DocFormat::latex ? extract_theorems(doc) : extract_wikitext(doc);
}

// JSON mapping. Absent optionals serialize as null.

namespace detail {
template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::string>();
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const TheoremRecord& r) {
  j = nlohmann::json{{"record_id", r.record_id},
                     {"doc_id", r.doc_id},
                     {"thm_type", to_string(r.thm_type)},
                     {"ref_number", detail::opt(r.ref_number)},
                     {"numbered_by", to_string(r.numbered_by)},
                     {"note", detail::opt(r.note)},
                     {"label", detail::opt(r.label)},
                     {"body", r.body},
                     {"name", r.name},
                     {"source_url", detail::opt(r.source_url)}};
}

inline void from_json(const nlohmann::json& j, TheoremRecord& r) {
  r.record_id = j.at("record_id").get<std::string>();
  r.doc_id = j.at("doc_id").get<std::string>();
  auto type = parse_thm_type(j.at("thm_type").get<std::string>());
  if (!type) throw Error(ErrorCode::InvalidArgument, "unknown thm_type in record " + r.record_id);
  r.thm_type = *type;
  r.ref_number = detail::opt_string(j, "ref_number");
  auto nb = j.value("numbered_by", std::string("none"));
  r.numbered_by = nb == "counter" ? NumberedBy::counter
                  : nb == "explicit" ? NumberedBy::explicit_number
                                     : NumberedBy::none;
  r.note = detail::opt_string(j, "note");
  r.label = detail::opt_string(j, "label");
  r.body = j.at("body").get<std::string>();
  r.name = j.value("name", compose_name(r.thm_type, r.ref_number, r.note));
  r.source_url = detail::opt_string(j, "source_url");
}

inline void to_json(nlohmann::json& j, const ParseReport& r) {
  j = nlohmann::json{{"doc_id", r.doc_id},
                     {"extracted", r.extracted},
                     {"filtered_short", r.filtered_short},
                     {"filtered_suffix", r.filtered_suffix},
                     {"unmatched_delimiters", r.unmatched_delimiters},
                     {"nested", r.nested},
                     {"unknown_proclaim", r.unknown_proclaim},
                     {"skipped_macros", r.skipped_macros},
                     {"macro_cycle", r.macro_cycle},
                     {"no_statement_section", r.no_statement_section}};
}

inline void from_json(const nlohmann::json& j, RawDocument& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  auto format = parse_doc_format(j.value("format", std::string("latex")));
  if (!format) throw Error(ErrorCode::InvalidArgument, "unknown document format for " + d.doc_id);
  d.format = *format;
  d.preamble = j.value("preamble", std::string());
  d.body = j.at("body").get<std::string>();
  d.source_url = detail::opt_string(j, "source_url");
}

inline void to_json(nlohmann::json& j, const RawDocument& d) {
  j = nlohmann::json{{"doc_id", d.doc_id},
                     {"format", to_string(d.format)},
                     {"preamble", d.preamble},
                     {"body", d.body},
                     {"source_url", detail::opt(d.source_url)}};
}

}  // namespace thmdx
