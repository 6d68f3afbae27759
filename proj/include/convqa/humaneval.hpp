#pragma once

// Two-phase human evaluation.
//
// Conversation phase: an annotator sees only the passage title, section
// title, background and the first dataset question, and asks 8-12 questions
// that a model answers from the hidden passage. Validation phase: the asker
// plus two validators (claimed first-come, never the asker) see the passage
// and judge every turn: first grammaticality/answerability from the question
// alone, then, for answerable questions, correctness of the revealed answer
// (with a corrected span when incorrect). A turn is discarded when both
// validators mark it ungrammatical; otherwise its correctness is the majority
// of the three opinions.
//
// State is event-sourced: every mutation appends one line to
// <store>/sessions/<id>.jsonl and sessions are rebuilt by replaying those
// logs. <store>/index.json is a convenience listing rebuilt on phase changes.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "convqa/analytics.hpp"
#include "convqa/corpus.hpp"
#include "convqa/error.hpp"
#include "convqa/model.hpp"
#include "convqa/scoring.hpp"

namespace convqa::humaneval {

inline constexpr std::size_t kMinTurns = 8;
inline constexpr std::size_t kMaxTurns = 12;
inline constexpr std::size_t kValidators = 2;
inline constexpr std::int64_t kSessionTimeoutSeconds = 24 * 60 * 60;

enum class Phase { conversation, validation, done, voided };
enum class Grammaticality { ok, ungrammatical };
enum class Answerability { answerable, unanswerable };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::conversation: return "conversation";
    case Phase::validation: return "validation";
    case Phase::done: return "done";
    case Phase::voided: return "voided";
  }
  return "";
}

inline std::string_view to_string(Grammaticality g) { return g == Grammaticality::ok ? "ok" : "ungrammatical"; }
inline std::string_view to_string(Answerability a) {
  return a == Answerability::answerable ? "answerable" : "unanswerable";
}

inline Grammaticality parse_grammaticality(std::string_view s) {
  if (s == "ok") return Grammaticality::ok;
  if (s == "ungrammatical") return Grammaticality::ungrammatical;
  throw InvariantViolation("grammaticality must be ok|ungrammatical");
}

inline Answerability parse_answerability(std::string_view s) {
  if (s == "answerable") return Answerability::answerable;
  if (s == "unanswerable") return Answerability::unanswerable;
  throw InvariantViolation("answerability must be answerable|unanswerable");
}

struct Turn {
  std::string question;
  ModelResponse response;
};

// One submission; fields not yet known stay empty.
struct JudgmentInput {
  std::string annotator_id;
  std::size_t turn = 0;  // 1-based
  std::optional<Grammaticality> grammaticality;
  std::optional<Answerability> answerability;
  std::optional<bool> correctness;
  std::optional<AnswerRef> corrected_span;
};

// Merged state of one annotator's opinion on one turn.
struct Judgment {
  std::string annotator_id;
  std::size_t turn = 0;
  Grammaticality grammaticality = Grammaticality::ok;
  Answerability answerability = Answerability::answerable;
  std::optional<bool> correctness;
  std::optional<AnswerRef> corrected_span;

  bool complete() const { return answerability == Answerability::unanswerable || correctness.has_value(); }
};

struct Session {
  std::string session_id;
  Phase phase = Phase::conversation;
  std::string passage_id;
  std::string model_id;
  std::string annotator_id;
  std::int64_t created_at = 0;
  std::vector<Turn> turns;
  std::vector<std::string> validators;
  std::map<std::pair<std::string, std::size_t>, Judgment> judgments;

  std::vector<std::string> raters() const {
    std::vector<std::string> r{annotator_id};
    r.insert(r.end(), validators.begin(), validators.end());
    return r;
  }

  const Judgment* judgment(const std::string& annotator, std::size_t turn) const {
    auto it = judgments.find({annotator, turn});
    return it == judgments.end() ? nullptr : &it->second;
  }

  bool fully_judged() const {
    if (validators.size() < kValidators) return false;
    for (const auto& a : raters())
      for (std::size_t t = 1; t <= turns.size(); ++t) {
        const auto* j = judgment(a, t);
        if (!j || !j->complete()) return false;
      }
    return true;
  }
};

// ---------------------------------------------------------------------------
// JSON encodings

inline nlohmann::ordered_json answer_ref_json(const AnswerRef& r) {
  return {{"text", r.text}, {"span_start", r.span_start}, {"span_end", r.span_end}};
}

inline nlohmann::ordered_json judgment_input_json(const JudgmentInput& j) {
  nlohmann::ordered_json o = {{"annotator_id", j.annotator_id}, {"turn", j.turn}};
  if (j.grammaticality) o["grammaticality"] = std::string(to_string(*j.grammaticality));
  if (j.answerability) o["answerability"] = std::string(to_string(*j.answerability));
  if (j.correctness) o["correctness"] = *j.correctness;
  if (j.corrected_span) o["corrected_span"] = answer_ref_json(*j.corrected_span);
  return o;
}

// corrected_span accepts {"text","span_start"} with span_end optional.
inline JudgmentInput parse_judgment_input(const nlohmann::json& j) {
  if (!j.is_object()) throw InvariantViolation("judgment must be an object");
  JudgmentInput in;
  try {
    in.annotator_id = j.at("annotator_id").get<std::string>();
    in.turn = j.at("turn").get<std::size_t>();
    if (j.contains("grammaticality") && !j["grammaticality"].is_null())
      in.grammaticality = parse_grammaticality(j["grammaticality"].get<std::string>());
    if (j.contains("answerability") && !j["answerability"].is_null())
      in.answerability = parse_answerability(j["answerability"].get<std::string>());
    if (j.contains("correctness") && !j["correctness"].is_null()) in.correctness = j["correctness"].get<bool>();
    if (j.contains("corrected_span") && !j["corrected_span"].is_null()) {
      const auto& s = j["corrected_span"];
      AnswerRef r;
      r.text = s.at("text").get<std::string>();
      r.span_start = s.at("span_start").get<std::size_t>();
      r.span_end = s.contains("span_end") ? s["span_end"].get<std::size_t>()
                                          : r.span_start + text::codepoint_length(r.text);
      r.corrected = true;
      in.corrected_span = r;
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation(std::string("malformed judgment: ") + e.what());
  }
  if (in.annotator_id.empty()) throw InvariantViolation("annotator_id is required");
  return in;
}

inline nlohmann::ordered_json turn_json(const Turn& t, bool reveal_answer) {
  nlohmann::ordered_json o = {{"question", t.question}};
  if (reveal_answer) {
    o["answer_text"] = t.response.answer_text;
    o["is_sentinel"] = t.response.is_sentinel;
  } else {
    o["answer_hidden"] = true;
  }
  return o;
}

// ---------------------------------------------------------------------------
// Persistence

class EventStore {
 public:
  EventStore() = default;  // in-memory only
  explicit EventStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(*root_ / "sessions");
  }

  bool persistent() const { return root_.has_value(); }

  void append(const std::string& session_id, const nlohmann::ordered_json& event) {
    if (!root_) return;
    std::ofstream out(*root_ / "sessions" / (session_id + ".jsonl"), std::ios::app | std::ios::binary);
    if (!out) throw Error("StoreError", "cannot append to log of session " + session_id);
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw Error("StoreError", "write failed for session " + session_id);
  }

  // Sessions in id order, each with its events in log order.
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> load_all() const {
    std::vector<std::pair<std::string, std::vector<nlohmann::json>>> out;
    if (!root_) return out;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(*root_ / "sessions"))
      if (e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      std::vector<nlohmann::json> events;
      std::string line;
      while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        try {
          events.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error&) {
          break;  // torn final write; the rest of the log is unusable
        }
      }
      out.emplace_back(f.stem().string(), std::move(events));
    }
    return out;
  }

  void write_index(const nlohmann::ordered_json& index) {
    if (!root_) return;
    auto tmp = *root_ / "index.json.tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << index.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, *root_ / "index.json");
  }

 private:
  std::optional<std::filesystem::path> root_;
};

// ---------------------------------------------------------------------------
// Statistics

struct SessionStats {
  std::string model_id;
  std::size_t sessions = 0;
  std::size_t turns = 0;      // non-discarded
  std::size_t discarded = 0;
  std::optional<double> accuracy;
  std::optional<double> answerable_accuracy;
  std::optional<double> unanswerable_rate;
  std::optional<Kappa> kappa_overall;
  std::optional<Kappa> kappa_answerability;
  PassageScores passage_accuracy;
};

inline nlohmann::ordered_json stats_json(const SessionStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  auto kappa = [](const std::optional<Kappa>& k) {
    return k ? nlohmann::ordered_json(k->value) : nlohmann::ordered_json();
  };
  nlohmann::ordered_json passages = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.passage_accuracy) passages[k] = v;
  return {{"model_id", s.model_id},
          {"sessions", s.sessions},
          {"turns", s.turns},
          {"discarded", s.discarded},
          {"accuracy", opt(s.accuracy)},
          {"answerable_accuracy", opt(s.answerable_accuracy)},
          {"unanswerable_rate", opt(s.unanswerable_rate)},
          {"kappa_overall", kappa(s.kappa_overall)},
          {"kappa_answerability", kappa(s.kappa_answerability)},
          {"passage_scores", std::move(passages)}};
}

inline bool judged_correct(const Judgment& j, const Turn& t) {
  if (j.answerability == Answerability::unanswerable) return t.response.is_sentinel;
  return j.correctness.value_or(false);
}

// Aggregates fully judged sessions. Kappa uses the two validators' ratings
// over all judged turns; categories are ungrammatical / unanswerable /
// correct / incorrect (overall) and answerable / unanswerable.
inline SessionStats compute_stats(const std::string& model_id, const std::vector<const Session*>& sessions) {
  SessionStats st;
  st.model_id = model_id;
  RatingMatrix overall(4), answerability(2);
  std::size_t correct = 0, answerable_turns = 0, answerable_correct = 0, unanswerable_turns = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_passage;  // correct, total

  for (const Session* s : sessions) {
    if (s->phase != Phase::done) continue;
    ++st.sessions;
    const auto raters = s->raters();
    for (std::size_t t = 1; t <= s->turns.size(); ++t) {
      const Turn& turn = s->turns[t - 1];
      std::vector<std::size_t> ov, an;
      bool all_validators_ungrammatical = true;
      for (std::size_t r = 1; r < raters.size(); ++r) {
        const Judgment& j = *s->judgment(raters[r], t);
        all_validators_ungrammatical = all_validators_ungrammatical && j.grammaticality == Grammaticality::ungrammatical;
        std::size_t cat = j.grammaticality == Grammaticality::ungrammatical      ? 0
                          : j.answerability == Answerability::unanswerable ? 1
                          : j.correctness.value_or(false)                  ? 2
                                                                           : 3;
        ov.push_back(cat);
        an.push_back(j.answerability == Answerability::answerable ? 0 : 1);
      }
      overall.add_votes(ov);
      answerability.add_votes(an);
      if (all_validators_ungrammatical) {
        ++st.discarded;
        continue;
      }
      std::vector<bool> votes_correct, votes_answerable;
      for (const auto& r : raters) {
        const Judgment& j = *s->judgment(r, t);
        votes_correct.push_back(judged_correct(j, turn));
        votes_answerable.push_back(j.answerability == Answerability::answerable);
      }
      std::vector<char> vc(votes_correct.begin(), votes_correct.end());
      std::vector<char> va(votes_answerable.begin(), votes_answerable.end());
      bool ok = majority_vote<char>(std::span<const char>(vc)) != 0;
      bool answerable = majority_vote<char>(std::span<const char>(va)) != 0;
      ++st.turns;
      correct += ok;
      if (answerable) {
        ++answerable_turns;
        answerable_correct += ok;
      } else {
        ++unanswerable_turns;
      }
      auto& pp = per_passage[s->passage_id];
      pp.first += ok;
      ++pp.second;
    }
  }
  if (st.sessions == 0)
    throw InsufficientJudgments("no fully judged session for model " + model_id);
  auto pct = [](std::size_t a, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    return 100.0 * static_cast<double>(a) / static_cast<double>(b);
  };
  st.accuracy = pct(correct, st.turns);
  st.answerable_accuracy = pct(answerable_correct, answerable_turns);
  st.unanswerable_rate = pct(unanswerable_turns, st.turns);
  if (overall.items() >= 2) {
    st.kappa_overall = fleiss_kappa(overall);
    st.kappa_answerability = fleiss_kappa(answerability);
  }
  for (const auto& [pid, ct] : per_passage) st.passage_accuracy[pid] = *pct(ct.first, ct.second);
  return st;
}

// ---------------------------------------------------------------------------
// Service

struct ServiceOptions {
  std::function<std::int64_t()> clock = [] {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
  std::int64_t session_timeout_seconds = kSessionTimeoutSeconds;
};

class Service {
 public:
  Service(std::shared_ptr<const Corpus> corpus, std::map<std::string, std::shared_ptr<ModelClient>> models,
          EventStore store = {}, ServiceOptions options = {})
      : corpus_(std::move(corpus)), models_(std::move(models)), store_(std::move(store)), options_(std::move(options)) {
    for (auto& [id, events] : store_.load_all()) {
      auto entry = std::make_unique<Entry>();
      for (const auto& ev : events) apply(entry->session, ev);
      if (entry->session.session_id.empty()) continue;
      next_id_ = std::max(next_id_, parse_counter(id) + 1);
      sessions_.emplace(id, std::move(entry));
    }
    rebuild_index();
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  std::vector<std::string> model_ids() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : models_) out.push_back(k);
    return out;
  }

  Session open_session(const std::string& passage_id, const std::string& model_id, const std::string& annotator_id) {
    if (!corpus_->find_passage(passage_id)) throw UnknownPassage("unknown passage " + passage_id);
    if (!models_.contains(model_id)) throw UnknownModel("unknown model " + model_id);
    if (annotator_id.empty()) throw InvariantViolation("annotator_id is required");
    if (!first_question(passage_id)) throw UnknownPassage("passage " + passage_id + " has no dataset question");

    std::unique_lock lock(mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", next_id_++);
    std::string id = buf;
    auto entry = std::make_unique<Entry>();
    nlohmann::ordered_json ev = {{"event", "open"},         {"session_id", id},
                                 {"passage_id", passage_id}, {"model_id", model_id},
                                 {"annotator_id", annotator_id}, {"created_at", options_.clock()}};
    store_.append(id, ev);
    apply(entry->session, ev);
    Session snapshot = entry->session;
    sessions_.emplace(id, std::move(entry));
    lock.unlock();
    rebuild_index();
    return snapshot;
  }

  Session get_session(const std::string& session_id) {
    return with_session(session_id, [](Session& s) { return s; });
  }

  // Payload for GET /sessions/{id}. Conversation-phase payloads carry only
  // the prompt fields; the passage context appears from validation on.
  // Validators see an answer only after judging that turn's question.
  nlohmann::ordered_json view(const std::string& session_id, const std::optional<std::string>& annotator = {}) {
    return with_session(session_id, [&](Session& s) { return view_locked(s, annotator); });
  }

  Turn ask(const std::string& session_id, const std::string& question) {
    if (text::trim(question).empty()) throw InvariantViolation("question is empty");
    return with_session(session_id, [&](Session& s) {
      if (s.phase != Phase::conversation)
        throw PhaseError("session " + s.session_id + " is in " + std::string(to_string(s.phase)) + " phase");
      if (s.turns.size() >= kMaxTurns)
        throw TurnLimitExceeded("at most " + std::to_string(kMaxTurns) + " questions per conversation");
      const Passage& p = *corpus_->find_passage(s.passage_id);
      ModelRequest req{p.background, p.title, p.section_title, p.context, {}, question};
      for (const auto& t : s.turns) req.history.push_back({t.question, t.response.answer_text});
      ModelResponse resp = models_.at(s.model_id)->answer(req);
      nlohmann::ordered_json ev = {{"event", "ask"}, {"question", question}, {"response", to_json(resp)}};
      store_.append(s.session_id, ev);
      apply(s, ev);
      return s.turns.back();
    });
  }

  Session finish_conversation(const std::string& session_id) {
    return with_session(session_id, [&](Session& s) {
      if (s.phase != Phase::conversation)
        throw PhaseError("session " + s.session_id + " already left the conversation phase");
      if (s.turns.size() < kMinTurns)
        throw TooFewTurns("at least " + std::to_string(kMinTurns) + " questions are required, have " +
                          std::to_string(s.turns.size()));
      nlohmann::ordered_json ev = {{"event", "finish"}, {"at", options_.clock()}};
      store_.append(s.session_id, ev);
      apply(s, ev);
      index_dirty_ = true;
      return s;
    });
  }

  Session claim(const std::string& session_id, const std::string& annotator_id) {
    return with_session(session_id, [&](Session& s) {
      if (s.phase != Phase::validation) throw PhaseError("session " + s.session_id + " is not awaiting validation");
      if (annotator_id.empty()) throw InvariantViolation("annotator_id is required");
      if (annotator_id == s.annotator_id) throw ClaimError("the asker cannot validate their own conversation");
      if (std::find(s.validators.begin(), s.validators.end(), annotator_id) != s.validators.end()) return s;
      if (s.validators.size() >= kValidators) throw ClaimError("session already has two validators");
      nlohmann::ordered_json ev = {{"event", "claim"}, {"annotator_id", annotator_id}};
      store_.append(s.session_id, ev);
      apply(s, ev);
      return s;
    });
  }

  // Stores one submission. The question-only verdict (grammaticality and
  // answerability) must precede correctness for the same annotator and turn.
  Judgment record_judgment(const std::string& session_id, const JudgmentInput& in) {
    return with_session(session_id, [&](Session& s) {
      if (s.phase != Phase::validation) throw PhaseError("session " + s.session_id + " is not in validation");
      auto raters = s.raters();
      if (std::find(raters.begin(), raters.end(), in.annotator_id) == raters.end())
        throw ClaimError("annotator " + in.annotator_id + " has not claimed session " + s.session_id);
      if (in.turn < 1 || in.turn > s.turns.size()) throw InvariantViolation("turn out of range");

      const Judgment* prior = s.judgment(in.annotator_id, in.turn);
      const bool stage1 = in.grammaticality || in.answerability;
      const bool stage2 = in.correctness || in.corrected_span;
      if (!stage1 && !stage2) throw InvariantViolation("empty judgment");
      if (stage1) {
        if (!in.grammaticality || !in.answerability)
          throw InvariantViolation("grammaticality and answerability are submitted together");
        if (prior) throw InvariantViolation("question verdict already recorded for this turn");
      }
      if (stage2) {
        if (!stage1 && !prior) throw OrderingViolation("answerability must be recorded before correctness");
        Answerability a = stage1 ? *in.answerability : prior->answerability;
        if (a != Answerability::answerable) throw InvariantViolation("correctness only applies to answerable questions");
        if (prior && prior->correctness) throw InvariantViolation("correctness already recorded for this turn");
        if (!in.correctness) throw OrderingViolation("corrected_span needs a correctness verdict");
        if (*in.correctness && in.corrected_span) throw InvariantViolation("corrected_span only accompanies incorrect");
        if (!*in.correctness && !in.corrected_span) throw InvariantViolation("incorrect answers need a corrected_span");
        if (in.corrected_span) check_span(s.passage_id, *in.corrected_span);
      }
      nlohmann::ordered_json ev = judgment_input_json(in);
      ev["event"] = "judgment";
      store_.append(s.session_id, ev);
      apply(s, ev);
      if (s.phase == Phase::done) index_dirty_ = true;
      return *s.judgment(in.annotator_id, in.turn);
    });
  }

  SessionStats session_stats(const std::string& model_id) {
    if (!models_.contains(model_id)) throw UnknownModel("unknown model " + model_id);
    std::lock_guard lock(mu_);
    std::vector<std::unique_lock<std::mutex>> held;
    std::vector<const Session*> mine;
    for (auto& [id, e] : sessions_) {
      held.emplace_back(e->mu);
      if (e->session.model_id == model_id) mine.push_back(&e->session);
    }
    return compute_stats(model_id, mine);
  }

  // {"models": {id: stats}} for every model with judged sessions.
  nlohmann::ordered_json all_stats() {
    nlohmann::ordered_json models = nlohmann::ordered_json::object();
    for (const auto& id : model_ids()) {
      try {
        models[id] = stats_json(session_stats(id));
      } catch (const InsufficientJudgments&) {
      }
    }
    return {{"models", std::move(models)}};
  }

  // One line per (session, turn, rater) in session order, asker first.
  std::string export_annotations() {
    std::lock_guard lock(mu_);
    std::ostringstream out;
    for (auto& [id, e] : sessions_) {
      std::lock_guard sl(e->mu);
      const Session& s = e->session;
      const auto raters = s.raters();
      for (std::size_t t = 1; t <= s.turns.size(); ++t) {
        for (std::size_t r = 0; r < raters.size(); ++r) {
          const Judgment* j = s.judgment(raters[r], t);
          if (!j) continue;
          nlohmann::ordered_json o = {{"session_id", s.session_id},
                                      {"passage_id", s.passage_id},
                                      {"model_id", s.model_id},
                                      {"turn", t},
                                      {"question", s.turns[t - 1].question},
                                      {"answer_text", s.turns[t - 1].response.answer_text},
                                      {"is_sentinel", s.turns[t - 1].response.is_sentinel},
                                      {"annotator_id", j->annotator_id},
                                      {"role", r == 0 ? "asker" : "validator"},
                                      {"grammaticality", std::string(to_string(j->grammaticality))},
                                      {"answerability", std::string(to_string(j->answerability))},
                                      {"correctness", j->correctness ? nlohmann::ordered_json(*j->correctness)
                                                                     : nlohmann::ordered_json()},
                                      {"corrected_span", j->corrected_span ? answer_ref_json(*j->corrected_span)
                                                                           : nlohmann::ordered_json()}};
          out << o.dump() << '\n';
        }
      }
    }
    return out.str();
  }

  // Passage ids and titles only; safe for the conversation screen.
  nlohmann::ordered_json passages() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& p : corpus_->passages())
      out.push_back({{"passage_id", p.passage_id}, {"title", p.title}, {"section_title", p.section_title}});
    return out;
  }

 private:
  struct Entry {
    std::mutex mu;
    Session session;
  };

  static std::size_t parse_counter(const std::string& id) {
    if (id.size() < 2 || id[0] != 's') return 0;
    try {
      return static_cast<std::size_t>(std::stoull(id.substr(1)));
    } catch (...) {
      return 0;
    }
  }

  std::optional<std::string> first_question(const std::string& passage_id) const {
    for (const auto& c : corpus_->conversations())
      if (c.passage_id == passage_id && !c.turns.empty()) return c.turns.front().question;
    return std::nullopt;
  }

  void check_span(const std::string& passage_id, const AnswerRef& r) const {
    const Passage& p = *corpus_->find_passage(passage_id);
    auto slice = text::cp_slice(p.context, r.span_start, r.span_end);
    if (!slice || text::squash_whitespace(*slice) != text::squash_whitespace(r.text))
      throw InvariantViolation("corrected_span does not match the passage at the given offsets");
  }

  template <typename F>
  std::invoke_result_t<F&, Session&> with_session(const std::string& id, F&& f) {
    Entry* e = nullptr;
    {
      std::lock_guard lock(mu_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw UnknownSession("unknown session " + id);
      e = it->second.get();
    }
    using R = decltype(f(e->session));
    std::optional<R> result;
    {
      std::lock_guard sl(e->mu);
      expire(e->session);
      result.emplace(f(e->session));
    }
    if (index_dirty_.exchange(false)) rebuild_index();
    return std::move(*result);
  }

  void expire(Session& s) {
    if (s.phase != Phase::conversation) return;
    if (options_.clock() - s.created_at < options_.session_timeout_seconds) return;
    nlohmann::ordered_json ev = {{"event", "void"}, {"reason", "timeout"}};
    store_.append(s.session_id, ev);
    apply(s, ev);
    index_dirty_ = true;
  }

  void apply(Session& s, const nlohmann::json& ev) {
    const std::string kind = ev.at("event").get<std::string>();
    if (kind == "open") {
      s.session_id = ev.at("session_id").get<std::string>();
      s.passage_id = ev.at("passage_id").get<std::string>();
      s.model_id = ev.at("model_id").get<std::string>();
      s.annotator_id = ev.at("annotator_id").get<std::string>();
      s.created_at = ev.at("created_at").get<std::int64_t>();
      s.phase = Phase::conversation;
    } else if (kind == "ask") {
      s.turns.push_back({ev.at("question").get<std::string>(), parse_model_response(ev.at("response"))});
    } else if (kind == "finish") {
      s.phase = Phase::validation;
    } else if (kind == "claim") {
      s.validators.push_back(ev.at("annotator_id").get<std::string>());
    } else if (kind == "void") {
      s.phase = Phase::voided;
    } else if (kind == "judgment") {
      JudgmentInput in = parse_judgment_input(ev);
      auto key = std::make_pair(in.annotator_id, in.turn);
      auto& j = s.judgments[key];
      j.annotator_id = in.annotator_id;
      j.turn = in.turn;
      if (in.grammaticality) j.grammaticality = *in.grammaticality;
      if (in.answerability) j.answerability = *in.answerability;
      if (in.correctness) j.correctness = in.correctness;
      if (in.corrected_span) j.corrected_span = in.corrected_span;
      if (s.phase == Phase::validation && s.fully_judged()) s.phase = Phase::done;
    }
  }

  nlohmann::ordered_json view_locked(const Session& s, const std::optional<std::string>& annotator) const {
    const Passage& p = *corpus_->find_passage(s.passage_id);
    nlohmann::ordered_json v = {{"session_id", s.session_id},
                                {"phase", std::string(to_string(s.phase))},
                                {"passage_id", s.passage_id},
                                {"model_id", s.model_id},
                                {"annotator_id", s.annotator_id},
                                {"created_at", s.created_at},
                                {"prompt",
                                 {{"title", p.title},
                                  {"section_title", p.section_title},
                                  {"background", p.background},
                                  {"first_question", first_question(s.passage_id).value_or("")}}},
                                {"turn_count", s.turns.size()},
                                {"min_turns", kMinTurns},
                                {"max_turns", kMaxTurns}};
    nlohmann::ordered_json turns = nlohmann::ordered_json::array();
    const bool revealed_phase = s.phase == Phase::validation || s.phase == Phase::done;
    const bool is_validator = annotator && std::find(s.validators.begin(), s.validators.end(), *annotator) != s.validators.end();
    for (std::size_t t = 1; t <= s.turns.size(); ++t) {
      bool reveal = true;
      if (revealed_phase && is_validator && s.phase != Phase::done) reveal = s.judgment(*annotator, t) != nullptr;
      turns.push_back(turn_json(s.turns[t - 1], reveal));
    }
    v["turns"] = std::move(turns);
    if (revealed_phase) {
      v["context"] = p.context;
      v["validators"] = s.validators;
      if (annotator) {
        nlohmann::ordered_json mine = nlohmann::ordered_json::array();
        for (std::size_t t = 1; t <= s.turns.size(); ++t) {
          const Judgment* j = s.judgment(*annotator, t);
          mine.push_back(j ? nlohmann::ordered_json{{"turn", t},
                                                    {"answerability", std::string(to_string(j->answerability))},
                                                    {"complete", j->complete()}}
                           : nlohmann::ordered_json{{"turn", t}, {"complete", false}});
        }
        v["my_judgments"] = std::move(mine);
      }
    }
    return v;
  }

  void rebuild_index() {
    std::lock_guard lock(mu_);
    rebuild_index_locked();
  }

  void rebuild_index_locked() {
    if (!store_.persistent()) return;
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (auto& [id, e] : sessions_) {
      std::lock_guard sl(e->mu);
      const Session& s = e->session;
      list.push_back({{"session_id", s.session_id},
                      {"phase", std::string(to_string(s.phase))},
                      {"passage_id", s.passage_id},
                      {"model_id", s.model_id},
                      {"annotator_id", s.annotator_id},
                      {"turns", s.turns.size()}});
    }
    store_.write_index({{"sessions", std::move(list)}});
  }

  std::shared_ptr<const Corpus> corpus_;
  std::map<std::string, std::shared_ptr<ModelClient>> models_;
  EventStore store_;
  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Entry>> sessions_;
  std::size_t next_id_ = 1;
  std::atomic<bool> index_dirty_{false};
};

}  // namespace convqa::humaneval
