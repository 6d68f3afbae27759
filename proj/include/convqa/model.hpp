#pragma once

// Model wire protocol and the scripted test doubles.
//
// Request:  {"background","title","section_title","context",
//            "history":[{"question","answer"}],"question"}
// Response: {"answer_text","span_start","span_end","is_sentinel"}

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "convqa/corpus.hpp"
#include "convqa/error.hpp"

namespace convqa {

struct HistoryPair {
  std::string question;
  std::string answer;
  bool operator==(const HistoryPair&) const = default;
};

struct ModelRequest {
  std::string background;
  std::string title;
  std::string section_title;
  std::string context;
  std::vector<HistoryPair> history;
  std::string question;
};

struct ModelResponse {
  std::string answer_text;
  std::optional<std::size_t> span_start;
  std::optional<std::size_t> span_end;
  bool is_sentinel = false;
  double latency_ms = 0.0;
};

inline ModelResponse sentinel_response() { return {std::string(kSentinel), std::nullopt, std::nullopt, true, 0.0}; }

inline nlohmann::ordered_json to_json(const ModelRequest& r) {
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& h : r.history) hist.push_back({{"question", h.question}, {"answer", h.answer}});
  return {{"background", r.background}, {"title", r.title},       {"section_title", r.section_title},
          {"context", r.context},       {"history", std::move(hist)}, {"question", r.question}};
}

inline ModelRequest parse_model_request(const nlohmann::json& j) {
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string())
      throw ProtocolViolation(std::string("request field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  if (!j.is_object()) throw ProtocolViolation("request is not an object");
  ModelRequest r;
  r.background = str("background");
  r.title = str("title");
  r.section_title = str("section_title");
  r.context = str("context");
  r.question = str("question");
  if (!j.contains("history") || !j["history"].is_array())
    throw ProtocolViolation("request field 'history' must be a list");
  for (const auto& h : j["history"]) {
    if (!h.is_object() || !h.contains("question") || !h.contains("answer") ||
        !h["question"].is_string() || !h["answer"].is_string())
      throw ProtocolViolation("history entries need string 'question' and 'answer'");
    r.history.push_back({h["question"].get<std::string>(), h["answer"].get<std::string>()});
  }
  return r;
}

inline nlohmann::ordered_json to_json(const ModelResponse& r) {
  auto opt = [](const std::optional<std::size_t>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
  };
  return {{"answer_text", r.answer_text},
          {"span_start", opt(r.span_start)},
          {"span_end", opt(r.span_end)},
          {"is_sentinel", r.is_sentinel}};
}

// Parses and checks a model reply. is_sentinel with any other text is a
// violation; the sentinel text without the flag is promoted to a sentinel.
inline ModelResponse parse_model_response(const nlohmann::json& j) {
  if (!j.is_object()) throw ProtocolViolation("response is not an object");
  if (!j.contains("answer_text") || !j["answer_text"].is_string())
    throw ProtocolViolation("response field 'answer_text' must be a string");
  if (!j.contains("is_sentinel") || !j["is_sentinel"].is_boolean())
    throw ProtocolViolation("response field 'is_sentinel' must be a boolean");
  ModelResponse r;
  r.answer_text = j["answer_text"].get<std::string>();
  r.is_sentinel = j["is_sentinel"].get<bool>();
  auto span = [&](const char* key) -> std::optional<std::size_t> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_number_unsigned())
      throw ProtocolViolation(std::string("response field '") + key + "' must be a non-negative integer");
    return j[key].get<std::size_t>();
  };
  r.span_start = span("span_start");
  r.span_end = span("span_end");
  if (r.span_start && r.span_end && *r.span_start > *r.span_end)
    throw ProtocolViolation("span_start > span_end");
  if (r.is_sentinel && r.answer_text != kSentinel)
    throw ProtocolViolation("is_sentinel set but answer_text is '" + r.answer_text + "'");
  if (!r.is_sentinel && r.answer_text == kSentinel) r.is_sentinel = true;
  return r;
}

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  // Throws Timeout, Unreachable, ProtocolViolation, or UnknownTurn.
  virtual ModelResponse answer(const ModelRequest& req) = 0;
  virtual std::string name() const = 0;
};

enum class ScriptedKind { oracle, echo, always_sentinel, amnesiac };

inline std::optional<ScriptedKind> parse_scripted_kind(std::string_view s) {
  if (s == "oracle") return ScriptedKind::oracle;
  if (s == "echo") return ScriptedKind::echo;
  if (s == "always_sentinel") return ScriptedKind::always_sentinel;
  if (s == "amnesiac") return ScriptedKind::amnesiac;
  return std::nullopt;
}

inline std::string_view to_string(ScriptedKind k) {
  switch (k) {
    case ScriptedKind::oracle: return "oracle";
    case ScriptedKind::echo: return "echo";
    case ScriptedKind::always_sentinel: return "always_sentinel";
    case ScriptedKind::amnesiac: return "amnesiac";
  }
  return "";
}

// Deterministic test doubles. oracle and amnesiac look the turn up in the
// corpus: first by (context, question), then by (context, history length + 1)
// so that a human asking free-form questions still gets turn-indexed answers.
class ScriptedModel : public ModelClient {
 public:
  ScriptedModel(ScriptedKind kind, std::shared_ptr<const Corpus> corpus = nullptr)
      : kind_(kind), corpus_(std::move(corpus)) {
    if (!corpus_) return;
    for (const auto& conv : corpus_->conversations()) {
      const Passage* p = corpus_->find_passage(conv.passage_id);
      if (!p) continue;
      for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        by_question_.try_emplace({p->context, conv.turns[i].question}, &conv.turns[i]);
        by_position_.try_emplace({p->context, i + 1}, &conv.turns[i]);
      }
    }
  }

  ModelResponse answer(const ModelRequest& req) override {
    switch (kind_) {
      case ScriptedKind::echo:
        return {req.question, std::nullopt, std::nullopt, req.question == kSentinel, 0.0};
      case ScriptedKind::always_sentinel:
        return sentinel_response();
      case ScriptedKind::amnesiac:
        if (!req.history.empty() && is_sentinel(req.history.back().answer)) return sentinel_response();
        return gold_answer(req);
      case ScriptedKind::oracle:
        return gold_answer(req);
    }
    return sentinel_response();
  }

  std::string name() const override { return std::string(to_string(kind_)); }

 private:
  ModelResponse gold_answer(const ModelRequest& req) const {
    const GoldTurn* turn = nullptr;
    if (auto it = by_question_.find({req.context, req.question}); it != by_question_.end()) {
      turn = it->second;
    } else if (auto jt = by_position_.find({req.context, req.history.size() + 1});
               jt != by_position_.end()) {
      turn = jt->second;
    }
    if (!turn) throw UnknownTurn("no gold turn for question '" + req.question + "'");
    const auto& ref = turn->primary();
    bool sentinel = ref.text == kSentinel;
    return {ref.text, ref.span_start, ref.span_end, sentinel, 0.0};
  }

  ScriptedKind kind_;
  std::shared_ptr<const Corpus> corpus_;
  std::map<std::pair<std::string, std::string>, const GoldTurn*> by_question_;
  std::map<std::pair<std::string, std::size_t>, const GoldTurn*> by_position_;
};

}  // namespace convqa
