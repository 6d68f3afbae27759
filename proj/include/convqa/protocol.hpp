#pragma once

// Replay protocols over a corpus:
//   gold    - history answers are gold answers
//   pred    - history answers are the model's own earlier predictions
//   rewrite - pred, with questions invalidated by the predicted history
//             rewritten by entity substitution
//   replace - pred, with invalidated questions swapped for table entries

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "convqa/corpus.hpp"
#include "convqa/coref.hpp"
#include "convqa/error.hpp"
#include "convqa/model.hpp"
#include "convqa/rewrite.hpp"
#include "convqa/scoring.hpp"

namespace convqa {

enum class ProtocolKind { gold, pred, rewrite, replace };

inline std::string_view to_string(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::gold: return "gold";
    case ProtocolKind::pred: return "pred";
    case ProtocolKind::rewrite: return "rewrite";
    case ProtocolKind::replace: return "replace";
  }
  return "";
}

inline ProtocolKind parse_protocol_kind(std::string_view s) {
  if (s == "gold") return ProtocolKind::gold;
  if (s == "pred") return ProtocolKind::pred;
  if (s == "rewrite") return ProtocolKind::rewrite;
  if (s == "replace") return ProtocolKind::replace;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (gold|pred|rewrite|replace)");
}

// Display name used in reports ("Auto-Gold", ...).
inline std::string method_name(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::gold: return "Auto-Gold";
    case ProtocolKind::pred: return "Auto-Pred";
    case ProtocolKind::rewrite: return "Auto-Rewrite";
    case ProtocolKind::replace: return "Auto-Replace";
  }
  return "";
}

inline Window parse_window(std::string_view s) {
  if (s == "all") return std::nullopt;
  std::size_t k = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw ConfigError("window must be a positive integer or 'all'");
    k = k * 10 + static_cast<std::size_t>(c - '0');
  }
  if (s.empty() || k == 0) throw ConfigError("window must be a positive integer or 'all'");
  return k;
}

struct DetectorConfig {
  std::shared_ptr<CorefResolver> resolver;
  bool ne_filter = true;
  Window coref_window = std::nullopt;
};

struct ProtocolConfig {
  ProtocolKind kind = ProtocolKind::gold;
  Window window = std::nullopt;
  // Required for rewrite and replace; both detect before repairing.
  std::optional<DetectorConfig> detector;
  std::shared_ptr<const ReplacementTable> replacements;  // replace only
  std::size_t jobs = 1;

  void validate() const {
    if (window && *window == 0) throw ConfigError("history window must be positive");
    bool detects = kind == ProtocolKind::rewrite || kind == ProtocolKind::replace;
    if (detects && (!detector || !detector->resolver))
      throw ConfigError(std::string(to_string(kind)) + " needs a coreference resolver");
    if (!detects && detector) throw ConfigError("coreference options only apply to rewrite/replace");
    if ((kind == ProtocolKind::replace) != static_cast<bool>(replacements))
      throw ConfigError("a replacement table is required for, and only for, replace");
  }
};

enum class InvalidityLabel { unresolved_coreference, incoherence, answer_changed };

inline std::string_view to_string(InvalidityLabel l) {
  switch (l) {
    case InvalidityLabel::unresolved_coreference: return "unresolved_coreference";
    case InvalidityLabel::incoherence: return "incoherence";
    case InvalidityLabel::answer_changed: return "answer_changed";
  }
  return "";
}

inline InvalidityLabel parse_invalidity_label(std::string_view s) {
  if (s == "unresolved_coreference") return InvalidityLabel::unresolved_coreference;
  if (s == "incoherence") return InvalidityLabel::incoherence;
  if (s == "answer_changed") return InvalidityLabel::answer_changed;
  throw ParseError("unknown invalidity_label '" + std::string(s) + "'");
}

struct Prediction {
  std::string text;
  std::optional<std::size_t> span_start;
  std::optional<std::size_t> span_end;
  bool is_sentinel = false;
  bool operator==(const Prediction&) const = default;
};

struct TurnEntry {
  std::string turn_id;
  std::string question_asked;
  std::vector<HistoryPair> history_snapshot;
  Prediction prediction;
  double score = 0.0;  // [0, 1]
  RewriteFlag rewrite_flag = RewriteFlag::none;
  std::optional<InvalidityLabel> invalidity_label;
  std::optional<std::string> error_flag;
  // Joined from the corpus; not part of the log record.
  bool gold_unanswerable = false;

  bool operator==(const TurnEntry&) const = default;
};

inline nlohmann::ordered_json to_json(const TurnEntry& e) {
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& h : e.history_snapshot) hist.push_back({{"question", h.question}, {"answer", h.answer}});
  auto opt = [](const std::optional<std::size_t>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
  };
  nlohmann::ordered_json pred = {{"text", e.prediction.text},
                                 {"span_start", opt(e.prediction.span_start)},
                                 {"span_end", opt(e.prediction.span_end)},
                                 {"is_sentinel", e.prediction.is_sentinel}};
  return {{"turn_id", e.turn_id},
          {"question_asked", e.question_asked},
          {"history_snapshot", std::move(hist)},
          {"prediction", std::move(pred)},
          {"score", e.score},
          {"rewrite_flag", std::string(to_string(e.rewrite_flag))},
          {"invalidity_label", e.invalidity_label ? nlohmann::ordered_json(std::string(to_string(*e.invalidity_label)))
                                                  : nlohmann::ordered_json()},
          {"error_flag", e.error_flag ? nlohmann::ordered_json(*e.error_flag) : nlohmann::ordered_json()}};
}

inline TurnEntry turn_entry_from_json(const nlohmann::json& j) {
  try {
    TurnEntry e;
    e.turn_id = j.at("turn_id").get<std::string>();
    e.question_asked = j.at("question_asked").get<std::string>();
    for (const auto& h : j.at("history_snapshot"))
      e.history_snapshot.push_back({h.at("question").get<std::string>(), h.at("answer").get<std::string>()});
    const auto& p = j.at("prediction");
    e.prediction.text = p.at("text").get<std::string>();
    if (p.contains("span_start") && !p["span_start"].is_null()) e.prediction.span_start = p["span_start"].get<std::size_t>();
    if (p.contains("span_end") && !p["span_end"].is_null()) e.prediction.span_end = p["span_end"].get<std::size_t>();
    e.prediction.is_sentinel = p.at("is_sentinel").get<bool>();
    e.score = j.at("score").get<double>();
    e.rewrite_flag = parse_rewrite_flag(j.at("rewrite_flag").get<std::string>());
    if (j.contains("invalidity_label") && !j["invalidity_label"].is_null())
      e.invalidity_label = parse_invalidity_label(j["invalidity_label"].get<std::string>());
    if (j.contains("error_flag") && !j["error_flag"].is_null()) e.error_flag = j["error_flag"].get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("run log record: ") + ex.what());
  }
}

struct ConversationRun {
  std::string conversation_id;
  std::string passage_id;
  std::vector<TurnEntry> turns;
  bool aborted = false;
  std::optional<std::string> abort_reason;
};

struct ProtocolRun {
  ProtocolKind kind = ProtocolKind::gold;
  Window window = std::nullopt;
  std::string model;
  std::vector<ConversationRun> conversations;  // sorted by conversation_id

  std::vector<const TurnEntry*> entries() const {
    std::vector<const TurnEntry*> out;
    for (const auto& c : conversations)
      for (const auto& t : c.turns) out.push_back(&t);
    return out;
  }
};

// What the driver has accumulated for one conversation before turn i.
struct ConversationState {
  std::vector<std::string> asked;      // question actually asked per turn
  std::vector<std::string> gold;       // gold answer text per turn
  std::vector<std::string> predicted;  // model prediction per turn
};

// History shown at turn i (1-based): the last min(k, i-1) asked questions,
// paired with gold answers (gold) or the model's predictions (otherwise).
inline std::vector<HistoryPair> build_history(ProtocolKind kind, const ConversationState& state,
                                              std::size_t i, Window window = std::nullopt) {
  if (i == 0) throw ConfigError("turn index is 1-based");
  const std::size_t prior = i - 1;
  if (state.asked.size() < prior) throw MissingPrediction("questions for earlier turns are missing");
  const auto& answers = kind == ProtocolKind::gold ? state.gold : state.predicted;
  if (answers.size() < prior)
    throw MissingPrediction("turn " + std::to_string(i) + " needs " + std::to_string(prior) +
                            " earlier answers, have " + std::to_string(answers.size()));
  const std::size_t take = window ? std::min(*window, prior) : prior;
  std::vector<HistoryPair> out;
  for (std::size_t j = prior - take; j < prior; ++j) out.push_back({state.asked[j], answers[j]});
  return out;
}

inline ConversationRun run_conversation(const ConversationRecord& conv, const Passage& passage,
                                        ModelClient& model, const ProtocolConfig& config) {
  ConversationRun run;
  run.conversation_id = conv.conversation_id;
  run.passage_id = conv.passage_id;
  ConversationState state;

  for (std::size_t idx = 0; idx < conv.turns.size(); ++idx) {
    const GoldTurn& gold = conv.turns[idx];
    const std::size_t i = idx + 1;
    TurnEntry entry;
    entry.turn_id = gold.turn_id;
    entry.gold_unanswerable = gold.is_unanswerable;
    entry.question_asked = gold.question;

    if (config.kind == ProtocolKind::rewrite || config.kind == ProtocolKind::replace) {
      const auto& det = *config.detector;
      try {
        auto d = detect_invalid_question(*det.resolver, passage.background, state.asked, state.gold,
                                         state.predicted, gold.question, {det.ne_filter, det.coref_window});
        if (!d.verdict.valid) {
          if (config.kind == ProtocolKind::rewrite) {
            auto r = rewrite_by_substitution(gold.question, d.verdict, d.gold_entities);
            entry.question_asked = r.text;
            entry.rewrite_flag = r.flag;
          } else if (auto q = replace_from_table(gold.turn_id, *config.replacements)) {
            entry.question_asked = *q;
            entry.rewrite_flag = RewriteFlag::replaced;
          } else {
            entry.rewrite_flag = RewriteFlag::unrewritable;
          }
        }
      } catch (const Error& e) {
        entry.error_flag = "coref:" + e.code();
      }
    }

    entry.history_snapshot = build_history(config.kind, state, i, config.window);

    ModelRequest req{passage.background, passage.title,    passage.section_title,
                     passage.context,    entry.history_snapshot, entry.question_asked};
    ModelResponse resp;
    try {
      resp = model.answer(req);
    } catch (const Unreachable& e) {
      run.aborted = true;
      run.abort_reason = e.what();
      return run;
    } catch (const Error& e) {
      resp = sentinel_response();
      entry.error_flag = "model:" + e.code();
    }
    entry.prediction = {resp.answer_text, resp.span_start, resp.span_end, resp.is_sentinel};
    entry.score = score_answer(resp.answer_text, gold.gold_answers);

    state.asked.push_back(entry.question_asked);
    state.gold.push_back(gold.primary().text);
    state.predicted.push_back(resp.answer_text);
    run.turns.push_back(std::move(entry));
  }
  return run;
}

// Conversations run on a bounded worker pool; turns within one conversation
// stay sequential. Output is ordered by conversation_id regardless of
// scheduling.
inline ProtocolRun run_protocol(const Corpus& corpus, ModelClient& model, const ProtocolConfig& config) {
  config.validate();
  const auto& convs = corpus.conversations();
  std::vector<ConversationRun> results(convs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next++; k < convs.size(); k = next++) {
      const auto& conv = convs[k];
      const Passage* p = corpus.find_passage(conv.passage_id);
      if (!p) {
        results[k] = {conv.conversation_id, conv.passage_id, {}, true, "unknown passage"};
        continue;
      }
      try {
        results[k] = run_conversation(conv, *p, model, config);
      } catch (const std::exception& e) {
        results[k] = {conv.conversation_id, conv.passage_id, {}, true, e.what()};
      }
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(config.jobs, 1, std::max<std::size_t>(1, convs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }

  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return a.conversation_id < b.conversation_id; });
  return {config.kind, config.window, model.name(), std::move(results)};
}

inline std::optional<double> mean_percent(const std::vector<double>& scores) {
  if (scores.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : scores) s += x;
  return 100.0 * s / static_cast<double>(scores.size());
}

// Macro average over turns whose gold answer is not the sentinel.
inline std::optional<double> answerable_only_summary(const ProtocolRun& run) {
  std::vector<double> scores;
  for (const auto* e : run.entries())
    if (!e->gold_unanswerable) scores.push_back(e->score);
  return mean_percent(scores);
}

struct RunSummary {
  std::string model;
  ProtocolKind kind = ProtocolKind::gold;
  Window window = std::nullopt;
  std::size_t conversations = 0;
  std::size_t turns = 0;
  std::optional<double> overall_f1;
  std::optional<double> answerable_f1;
  UnanswerableStats unanswerable;
  std::size_t rewritten = 0;
  std::size_t replaced = 0;
  std::size_t unrewritable = 0;
  std::size_t model_errors = 0;
  std::size_t aborted_conversations = 0;
  std::map<std::string, double> passage_scores;  // mean percent per passage

  std::size_t repaired() const { return rewritten + replaced; }
  bool partial_failure() const { return model_errors > 0 || aborted_conversations > 0; }
};

inline RunSummary summarize(const ProtocolRun& run) {
  RunSummary s;
  s.model = run.model;
  s.kind = run.kind;
  s.window = run.window;
  s.conversations = run.conversations.size();
  std::vector<double> all;
  std::vector<SentinelOutcome> outcomes;
  std::map<std::string, std::vector<double>> by_passage;
  for (const auto& c : run.conversations) {
    if (c.aborted) ++s.aborted_conversations;
    for (const auto& t : c.turns) {
      all.push_back(t.score);
      outcomes.push_back({t.gold_unanswerable, t.prediction.is_sentinel});
      by_passage[c.passage_id].push_back(t.score);
      s.rewritten += t.rewrite_flag == RewriteFlag::rewritten;
      s.replaced += t.rewrite_flag == RewriteFlag::replaced;
      s.unrewritable += t.rewrite_flag == RewriteFlag::unrewritable;
      s.model_errors += t.error_flag && t.error_flag->starts_with("model:");
    }
  }
  s.turns = all.size();
  s.overall_f1 = mean_percent(all);
  s.answerable_f1 = answerable_only_summary(run);
  s.unanswerable = unanswerable_stats(outcomes);
  for (const auto& [pid, scores] : by_passage) s.passage_scores[pid] = *mean_percent(scores);
  return s;
}

inline nlohmann::ordered_json to_json(const RunSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json passages = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.passage_scores) passages[k] = v;
  return {{"model", s.model},
          {"protocol", std::string(to_string(s.kind))},
          {"window", s.window ? nlohmann::ordered_json(*s.window) : nlohmann::ordered_json("all")},
          {"conversations", s.conversations},
          {"turns", s.turns},
          {"overall_f1", opt(s.overall_f1)},
          {"answerable_f1", opt(s.answerable_f1)},
          {"unanswerable",
           {{"predicted_rate", s.unanswerable.predicted_rate},
            {"precision", opt(s.unanswerable.precision)},
            {"recall", opt(s.unanswerable.recall)},
            {"gold", s.unanswerable.gold_sentinel},
            {"predicted", s.unanswerable.predicted_sentinel},
            {"correct", s.unanswerable.correct_sentinel}}},
          {"rewrites", {{"rewritten", s.rewritten}, {"replaced", s.replaced}, {"unrewritable", s.unrewritable}}},
          {"model_errors", s.model_errors},
          {"aborted_conversations", s.aborted_conversations},
          {"passage_scores", std::move(passages)}};
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
  try {
    RunSummary s;
    auto opt = [](const nlohmann::json& v) -> std::optional<double> {
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    s.model = j.at("model").get<std::string>();
    s.kind = parse_protocol_kind(j.at("protocol").get<std::string>());
    const auto& w = j.at("window");
    if (!w.is_string()) s.window = w.get<std::size_t>();
    s.conversations = j.at("conversations").get<std::size_t>();
    s.turns = j.at("turns").get<std::size_t>();
    s.overall_f1 = opt(j.at("overall_f1"));
    s.answerable_f1 = opt(j.at("answerable_f1"));
    const auto& u = j.at("unanswerable");
    s.unanswerable.predicted_rate = u.at("predicted_rate").get<double>();
    s.unanswerable.precision = opt(u.at("precision"));
    s.unanswerable.recall = opt(u.at("recall"));
    s.unanswerable.gold_sentinel = u.at("gold").get<std::size_t>();
    s.unanswerable.predicted_sentinel = u.at("predicted").get<std::size_t>();
    s.unanswerable.correct_sentinel = u.at("correct").get<std::size_t>();
    s.unanswerable.turns = s.turns;
    const auto& r = j.at("rewrites");
    s.rewritten = r.at("rewritten").get<std::size_t>();
    s.replaced = r.at("replaced").get<std::size_t>();
    s.unrewritable = r.at("unrewritable").get<std::size_t>();
    s.model_errors = j.at("model_errors").get<std::size_t>();
    s.aborted_conversations = j.at("aborted_conversations").get<std::size_t>();
    for (const auto& [k, v] : j.at("passage_scores").items()) s.passage_scores[k] = v.get<double>();
    return s;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("run summary: ") + ex.what());
  }
}

// One record per line, conversations in conversation_id order.
inline void write_run_log(std::ostream& out, const ProtocolRun& run) {
  for (const auto& c : run.conversations)
    for (const auto& t : c.turns) out << to_json(t).dump() << '\n';
}

inline std::vector<TurnEntry> read_run_log(std::istream& in) {
  std::vector<TurnEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(turn_entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("run log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<TurnEntry> read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingLogs("cannot open run log " + path.string());
  return read_run_log(in);
}

}  // namespace convqa
