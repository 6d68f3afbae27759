#pragma once

// Invalid-question detection by coreference drift, and the two repair
// strategies: entity substitution and table replacement.
//
// A question is valid when resolving it against the gold history and against
// the predicted history yields the same entities: equal entity counts, and
// each pair of entities sharing a question mention has first mentions with
// non-zero word F1.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convqa/coref.hpp"
#include "convqa/corpus.hpp"
#include "convqa/rule_resolver.hpp"
#include "convqa/scoring.hpp"

namespace convqa {

struct QuestionEntity {
  std::size_t cluster = 0;  // index into the ClusterSet it came from
  Mention first_mention;
  bool first_mention_in_question = false;
  // Mentions inside the current question, relative to the question start.
  std::vector<Span> question_mentions;
  bool operator==(const QuestionEntity&) const = default;
};

using EntityList = std::vector<QuestionEntity>;

namespace rewrite_detail {

inline bool is_named_entity_text(std::string_view mention) {
  auto tokens = text::split_whitespace(mention);
  bool any_capitalized = false;
  for (const auto& tok : tokens) {
    std::string lower = rule_detail::ascii_lower(tok);
    while (!lower.empty() && !std::isalnum(static_cast<unsigned char>(lower.back()))) lower.pop_back();
    if (rule_detail::is_pronoun(lower)) return false;
    bool alphabetic = std::any_of(tok.begin(), tok.end(),
                                  [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
    if (!alphabetic) continue;
    if (tok.front() >= 'A' && tok.front() <= 'Z') {
      any_capitalized = true;
    } else if (!rule_detail::contains(rule_detail::kConnectors, lower)) {
      return false;
    }
  }
  return any_capitalized;
}

}  // namespace rewrite_detail

// Named-entity test for a question mention. A provider label of "O"/"NONE"
// (or empty) vetoes; otherwise the mention is a named entity iff it is not a
// pronoun and every alphabetic token is capitalized, lowercase connector
// words ("the", "of", ...) aside.
inline bool is_named_entity(const Cluster& cluster, std::string_view mention_text) {
  if (cluster.entity_type) {
    const auto& t = *cluster.entity_type;
    if (t.empty() || t == "O" || t == "NONE") return false;
  }
  return rewrite_detail::is_named_entity_text(mention_text);
}

// Clusters with at least two mentions and at least one inside the question.
// Unresolved singletons are not entities.
inline EntityList extract_question_entities(const ClusterSet& clusters, Span question,
                                            bool ne_filter_on) {
  EntityList out;
  for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
    const auto& c = clusters[ci];
    if (c.mentions.size() < 2) continue;
    QuestionEntity e;
    e.cluster = ci;
    e.first_mention = c.first_mention();
    const Mention* first_q = nullptr;
    for (const auto& m : c.mentions) {
      if (m.span.begin >= question.begin && m.span.end <= question.end) {
        if (!first_q) first_q = &m;
        e.question_mentions.push_back({m.span.begin - question.begin, m.span.end - question.begin});
      }
    }
    if (!first_q) continue;
    if (ne_filter_on && is_named_entity(c, first_q->text)) continue;
    e.first_mention_in_question =
        e.first_mention.span.begin >= question.begin && e.first_mention.span.end <= question.end;
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), [](const QuestionEntity& a, const QuestionEntity& b) {
    return a.question_mentions.front() < b.question_mentions.front();
  });
  return out;
}

enum class InvalidReason { none, size_mismatch, entity_mismatch };

inline std::string_view to_string(InvalidReason r) {
  switch (r) {
    case InvalidReason::none: return "none";
    case InvalidReason::size_mismatch: return "size_mismatch";
    case InvalidReason::entity_mismatch: return "entity_mismatch";
  }
  return "";
}

struct ValidityVerdict {
  bool valid = true;
  InvalidReason reason = InvalidReason::none;
  // (gold-side index, predicted-side index) for every aligned pair examined.
  std::vector<std::pair<std::size_t, std::size_t>> aligned;
};

inline bool shares_question_mention(const QuestionEntity& a, const QuestionEntity& b) {
  for (const auto& s : a.question_mentions)
    if (std::find(b.question_mentions.begin(), b.question_mentions.end(), s) != b.question_mentions.end())
      return true;
  return false;
}

inline bool same_entity(const QuestionEntity& gold, const QuestionEntity& pred) {
  return token_f1(normalize(gold.first_mention.text), normalize(pred.first_mention.text)) > 0.0;
}

inline ValidityVerdict is_valid_question(const EntityList& gold, const EntityList& pred) {
  ValidityVerdict v;
  if (gold.size() != pred.size()) {
    v.valid = false;
    v.reason = InvalidReason::size_mismatch;
    return v;
  }
  for (std::size_t j = 0; j < gold.size(); ++j) {
    std::optional<std::size_t> match;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      if (shares_question_mention(gold[j], pred[k])) {
        match = k;
        break;
      }
    }
    if (!match) {
      v.valid = false;
      v.reason = InvalidReason::entity_mismatch;
      return v;
    }
    v.aligned.emplace_back(j, *match);
    if (!same_entity(gold[j], pred[*match])) {
      v.valid = false;
      v.reason = InvalidReason::entity_mismatch;
      return v;
    }
  }
  return v;
}

enum class RewriteFlag { none, rewritten, replaced, unrewritable };

inline std::string_view to_string(RewriteFlag f) {
  switch (f) {
    case RewriteFlag::none: return "none";
    case RewriteFlag::rewritten: return "rewritten";
    case RewriteFlag::replaced: return "replaced";
    case RewriteFlag::unrewritable: return "unrewritable";
  }
  return "";
}

inline RewriteFlag parse_rewrite_flag(std::string_view s) {
  if (s == "none") return RewriteFlag::none;
  if (s == "rewritten") return RewriteFlag::rewritten;
  if (s == "replaced") return RewriteFlag::replaced;
  if (s == "unrewritable") return RewriteFlag::unrewritable;
  throw ParseError("unknown rewrite_flag '" + std::string(s) + "'");
}

struct Substitution {
  Span question_span;  // in the original question
  std::string replacement;
};

struct RewriteResult {
  std::string text;
  RewriteFlag flag = RewriteFlag::none;
  std::vector<Substitution> substitutions;  // right-to-left application order
};

// Splices each gold-side entity's first mention over that entity's mentions in
// the question. Overlapping candidates resolve longest-span-first; splices
// apply right to left so earlier offsets stay valid.
inline RewriteResult rewrite_by_substitution(const std::string& question,
                                             const ValidityVerdict& verdict,
                                             const EntityList& gold_entities) {
  if (verdict.valid) return {question, RewriteFlag::none, {}};

  std::vector<Substitution> candidates;
  for (const auto& e : gold_entities) {
    if (e.first_mention_in_question) continue;
    for (const auto& s : e.question_mentions) {
      if (s.end > question.size() || s.begin >= s.end) continue;
      candidates.push_back({s, e.first_mention.text});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.question_span.length() != b.question_span.length())
      return a.question_span.length() > b.question_span.length();
    return a.question_span.begin < b.question_span.begin;
  });
  std::vector<Substitution> chosen;
  for (auto& c : candidates) {
    bool clash = std::any_of(chosen.begin(), chosen.end(), [&](const Substitution& x) {
      return x.question_span.overlaps(c.question_span);
    });
    if (!clash) chosen.push_back(std::move(c));
  }
  if (chosen.empty()) return {question, RewriteFlag::unrewritable, {}};

  std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) {
    return a.question_span.begin > b.question_span.begin;
  });
  std::string out = question;
  for (const auto& sub : chosen)
    out.replace(sub.question_span.begin, sub.question_span.length(), sub.replacement);
  return {std::move(out), RewriteFlag::rewritten, std::move(chosen)};
}

inline std::optional<std::string> replace_from_table(std::string_view turn_id,
                                                     const ReplacementTable& table) {
  return table.find(turn_id);
}

struct Detection {
  CorefInput gold_input;
  CorefInput pred_input;
  ClusterSet gold_clusters;
  ClusterSet pred_clusters;
  EntityList gold_entities;
  EntityList pred_entities;
  ValidityVerdict verdict;
};

struct DetectorOptions {
  bool ne_filter = true;
  Window window = std::nullopt;
};

// Resolves both history variants of the current question and compares their
// question entities. Identical inputs skip the second resolver call.
inline Detection detect_invalid_question(CorefResolver& resolver, const std::string& background,
                                         const std::vector<std::string>& asked_history,
                                         const std::vector<std::string>& gold_history,
                                         const std::vector<std::string>& predicted_history,
                                         const std::string& question, DetectorOptions opts = {}) {
  Detection d;
  std::tie(d.gold_input, d.pred_input) = build_coref_inputs(
      background, asked_history, gold_history, predicted_history, question, opts.window);
  d.gold_clusters = resolver.resolve(d.gold_input);
  d.pred_clusters = d.gold_input == d.pred_input ? d.gold_clusters : resolver.resolve(d.pred_input);
  d.gold_entities = extract_question_entities(d.gold_clusters, d.gold_input.question_span(), opts.ne_filter);
  d.pred_entities = extract_question_entities(d.pred_clusters, d.pred_input.question_span(), opts.ne_filter);
  d.verdict = is_valid_question(d.gold_entities, d.pred_entities);
  return d;
}

}  // namespace convqa
