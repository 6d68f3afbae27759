#pragma once

// QuAC-format datasets and question replacement tables.
//
// Dataset layout:
//   {"data": [{"title", "section_title", "background",
//              "paragraphs": [{"id", "context",
//                              "qas": [{"id", "question",
//                                       "answers": [{"text", "answer_start"}],
//                                       "orig_answer"?: {...}}]}]}]}
//
// Every paragraph is one conversation over one passage; the paragraph id
// names both. answer_start counts Unicode code points into context.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "convqa/error.hpp"
#include "convqa/text.hpp"

#ifndef CONVQA_SENTINEL
#define CONVQA_SENTINEL "CANNOTANSWER"
#endif

namespace convqa {

inline constexpr std::string_view kSentinel = CONVQA_SENTINEL;

inline bool is_sentinel(std::string_view s) { return text::trim(s) == kSentinel; }

struct AnswerRef {
  std::string text;
  std::size_t span_start = 0;  // code points
  std::size_t span_end = 0;
  // Span supplied by a human validator rather than the original collection.
  bool corrected = false;

  bool operator==(const AnswerRef&) const = default;
};

struct GoldTurn {
  std::string turn_id;
  std::string question;
  std::vector<AnswerRef> gold_answers;
  bool is_unanswerable = false;

  const AnswerRef& primary() const { return gold_answers.front(); }
  bool operator==(const GoldTurn&) const = default;
};

struct Passage {
  std::string passage_id;
  std::string title;
  std::string section_title;
  std::string background;
  std::string context;

  bool operator==(const Passage&) const = default;
};

struct ConversationRecord {
  std::string conversation_id;
  std::string passage_id;
  std::vector<GoldTurn> turns;

  bool operator==(const ConversationRecord&) const = default;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Passage> passages, std::vector<ConversationRecord> conversations)
      : passages_(std::move(passages)), conversations_(std::move(conversations)) {
    for (std::size_t i = 0; i < passages_.size(); ++i) index_.emplace(passages_[i].passage_id, i);
  }

  const std::vector<Passage>& passages() const { return passages_; }
  const std::vector<ConversationRecord>& conversations() const { return conversations_; }

  const Passage* find_passage(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &passages_[it->second];
  }

  std::size_t question_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations_) n += c.turns.size();
    return n;
  }

  std::size_t unanswerable_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations_)
      for (const auto& t : c.turns) n += t.is_unanswerable ? 1 : 0;
    return n;
  }

  bool operator==(const Corpus& o) const {
    return passages_ == o.passages_ && conversations_ == o.conversations_;
  }

 private:
  std::vector<Passage> passages_;
  std::vector<ConversationRecord> conversations_;
  std::map<std::string, std::size_t> index_;
};

struct Violation {
  std::string kind;  // "SpanError" or "SchemaError"
  std::string conversation_id;
  std::string turn_id;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool clean() const { return violations.empty(); }
};

inline ValidationReport validate_corpus(const Corpus& corpus) {
  ValidationReport report;
  auto add = [&](std::string kind, const std::string& conv, const std::string& turn,
                 std::string detail) {
    report.violations.push_back({std::move(kind), conv, turn, std::move(detail)});
  };

  std::set<std::string> passage_ids;
  for (const auto& p : corpus.passages()) {
    if (!passage_ids.insert(p.passage_id).second)
      add("SchemaError", p.passage_id, "", "duplicate passage_id");
    auto tokens = text::split_whitespace(p.context);
    if (tokens.empty() || tokens.back() != kSentinel)
      add("SchemaError", p.passage_id, "",
          "context must end with the " + std::string(kSentinel) + " token");
  }

  for (const auto& conv : corpus.conversations()) {
    const Passage* passage = corpus.find_passage(conv.passage_id);
    if (!passage) {
      add("SchemaError", conv.conversation_id, "", "unknown passage " + conv.passage_id);
      continue;
    }
    if (conv.turns.empty()) add("SchemaError", conv.conversation_id, "", "no turns");
    std::set<std::string> turn_ids;
    const std::size_t ctx_len = text::codepoint_length(passage->context);
    for (const auto& turn : conv.turns) {
      if (!turn_ids.insert(turn.turn_id).second)
        add("SchemaError", conv.conversation_id, turn.turn_id, "duplicate turn_id");
      if (turn.gold_answers.empty()) {
        add("SchemaError", conv.conversation_id, turn.turn_id, "no gold answers");
        continue;
      }
      for (const auto& ref : turn.gold_answers) {
        if (turn.is_unanswerable && ref.text != kSentinel)
          add("SchemaError", conv.conversation_id, turn.turn_id,
              "unanswerable turn with non-sentinel answer '" + ref.text + "'");
        if (ref.span_start > ref.span_end || ref.span_end > ctx_len) {
          add("SpanError", conv.conversation_id, turn.turn_id,
              "span [" + std::to_string(ref.span_start) + "," + std::to_string(ref.span_end) +
                  ") outside context of length " + std::to_string(ctx_len));
          continue;
        }
        auto slice = text::cp_slice(passage->context, ref.span_start, ref.span_end);
        if (!slice || text::squash_whitespace(*slice) != text::squash_whitespace(ref.text))
          add("SpanError", conv.conversation_id, turn.turn_id,
              "answer '" + ref.text + "' does not match context slice '" +
                  slice.value_or("") + "'");
      }
    }
  }
  return report;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw SchemaError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline AnswerRef parse_answer(const nlohmann::json& a, const std::string& context,
                              const std::string& where) {
  AnswerRef ref;
  ref.text = require_string(a, "text", where);
  const auto& start = require(a, "answer_start", where);
  if (!start.is_number_integer())
    throw SchemaError(where + ": answer_start must be an integer");
  long long s = start.get<long long>();
  if (s < 0) {
    // Some exports mark the sentinel with -1; pin it to the appended token.
    if (ref.text != kSentinel) throw SpanError(where + ": negative answer_start");
    std::size_t len = text::codepoint_length(context);
    s = static_cast<long long>(len - std::min(len, kSentinel.size()));
  }
  ref.span_start = static_cast<std::size_t>(s);
  ref.span_end = ref.span_start + text::codepoint_length(ref.text);
  ref.corrected = a.value("corrected", false);
  return ref;
}

}  // namespace detail

struct LoadStats {
  // Non-sentinel alternates dropped from turns whose primary answer is the sentinel.
  std::size_t dropped_alternates = 0;
};

// Builds a Corpus from parsed JSON without span verification.
inline Corpus parse_dataset(const nlohmann::json& root, LoadStats* stats = nullptr) {
  using detail::require;
  using detail::require_string;
  const auto& data = require(root, "data", "dataset");
  if (!data.is_array()) throw SchemaError("dataset: 'data' must be a list");

  std::vector<Passage> passages;
  std::vector<ConversationRecord> conversations;
  for (std::size_t di = 0; di < data.size(); ++di) {
    const auto& entry = data[di];
    const std::string where = "data[" + std::to_string(di) + "]";
    std::string title = require_string(entry, "title", where);
    std::string section = require_string(entry, "section_title", where);
    std::string background = require_string(entry, "background", where);
    const auto& paragraphs = require(entry, "paragraphs", where);
    if (!paragraphs.is_array()) throw SchemaError(where + ": 'paragraphs' must be a list");

    for (const auto& para : paragraphs) {
      Passage p;
      p.passage_id = require_string(para, "id", where);
      p.title = title;
      p.section_title = section;
      p.background = background;
      p.context = require_string(para, "context", p.passage_id);

      ConversationRecord conv;
      conv.conversation_id = p.passage_id;
      conv.passage_id = p.passage_id;
      const auto& qas = require(para, "qas", p.passage_id);
      if (!qas.is_array()) throw SchemaError(p.passage_id + ": 'qas' must be a list");
      for (const auto& qa : qas) {
        GoldTurn turn;
        turn.turn_id = require_string(qa, "id", p.passage_id);
        const std::string tw = p.passage_id + "/" + turn.turn_id;
        turn.question = require_string(qa, "question", tw);
        const auto& answers = require(qa, "answers", tw);
        if (!answers.is_array()) throw SchemaError(tw + ": 'answers' must be a list");
        for (const auto& a : answers) turn.gold_answers.push_back(detail::parse_answer(a, p.context, tw));
        if (qa.contains("orig_answer")) {
          AnswerRef orig = detail::parse_answer(qa.at("orig_answer"), p.context, tw);
          std::erase(turn.gold_answers, orig);
          turn.gold_answers.insert(turn.gold_answers.begin(), orig);
        }
        if (turn.gold_answers.empty()) throw SchemaError(tw + ": empty answer list");
        turn.is_unanswerable = turn.gold_answers.front().text == kSentinel;
        if (turn.is_unanswerable) {
          auto removed = std::erase_if(turn.gold_answers,
                                       [](const AnswerRef& r) { return r.text != kSentinel; });
          if (stats) stats->dropped_alternates += removed;
        }
        conv.turns.push_back(std::move(turn));
      }
      passages.push_back(std::move(p));
      conversations.push_back(std::move(conv));
    }
  }
  return Corpus(std::move(passages), std::move(conversations));
}

// Parses and verifies; the first violation is thrown with its conversation
// and turn id.
inline Corpus parse_and_validate(const std::string& json_text, LoadStats* stats = nullptr) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what());
  }
  Corpus corpus = parse_dataset(root, stats);
  auto report = validate_corpus(corpus);
  if (!report.clean()) {
    const auto& v = report.violations.front();
    std::string where = v.conversation_id + (v.turn_id.empty() ? "" : "/" + v.turn_id);
    if (v.kind == "SpanError") throw SpanError(where + ": " + v.detail);
    throw SchemaError(where + ": " + v.detail);
  }
  return corpus;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Corpus load_dataset(const std::filesystem::path& path, LoadStats* stats = nullptr) {
  return parse_and_validate(read_file(path), stats);
}

// Canonical serialization; load(serialize(c)) == c.
inline nlohmann::ordered_json dataset_to_json(const Corpus& corpus) {
  nlohmann::ordered_json data = nlohmann::ordered_json::array();
  for (const auto& conv : corpus.conversations()) {
    const Passage* p = corpus.find_passage(conv.passage_id);
    if (!p) throw SchemaError("unknown passage " + conv.passage_id);
    nlohmann::ordered_json qas = nlohmann::ordered_json::array();
    for (const auto& t : conv.turns) {
      nlohmann::ordered_json answers = nlohmann::ordered_json::array();
      for (const auto& a : t.gold_answers) {
        nlohmann::ordered_json aj = {{"text", a.text}, {"answer_start", a.span_start}};
        if (a.corrected) aj["corrected"] = true;
        answers.push_back(std::move(aj));
      }
      qas.push_back({{"id", t.turn_id}, {"question", t.question}, {"answers", std::move(answers)}});
    }
    nlohmann::ordered_json para = {{"id", conv.conversation_id}, {"context", p->context},
                                   {"qas", std::move(qas)}};
    data.push_back({{"title", p->title},
                    {"section_title", p->section_title},
                    {"background", p->background},
                    {"paragraphs", nlohmann::ordered_json::array({std::move(para)})}});
  }
  return {{"data", std::move(data)}};
}

// turn_id -> context-independent question.
class ReplacementTable {
 public:
  void insert(const std::string& turn_id, std::string question) {
    if (!entries_.emplace(turn_id, std::move(question)).second)
      throw DuplicateKeyError("duplicate replacement for turn " + turn_id);
  }

  std::optional<std::string> find(std::string_view turn_id) const {
    auto it = entries_.find(std::string(turn_id));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Tab-separated "turn_id<TAB>question" records, no header.
inline ReplacementTable parse_replacements(std::istream& in) {
  ReplacementTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw ParseError("replacement table line " + std::to_string(lineno) +
                       ": expected turn_id<TAB>question");
    table.insert(line.substr(0, tab), line.substr(tab + 1));
  }
  return table;
}

inline ReplacementTable load_replacements(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_replacements(in);
}

// Table keys that reference no turn in the corpus.
inline std::vector<std::string> unmatched_replacement_keys(const ReplacementTable& table,
                                                           const Corpus& corpus) {
  std::set<std::string> ids;
  for (const auto& c : corpus.conversations())
    for (const auto& t : c.turns) ids.insert(t.turn_id);
  std::vector<std::string> out;
  for (const auto& [k, v] : table.entries())
    if (!ids.contains(k)) out.push_back(k);
  return out;
}

}  // namespace convqa
