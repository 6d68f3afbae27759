#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/error.hpp"

namespace convqa {

using TokenList = std::vector<std::string>;

// SQuAD-style normalization: lowercase, punctuation becomes a space, the
// articles a/an/the are dropped, then split on whitespace. Only ASCII is
// case-folded or treated as punctuation; other bytes pass through.
inline TokenList normalize(std::string_view s) {
  std::string buf;
  buf.reserve(s.size());
  for (char c : s) {
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) {
      buf.push_back(' ');
    } else if (u < 0x80) {
      buf.push_back(static_cast<char>(std::tolower(u)));
    } else {
      buf.push_back(c);
    }
  }
  TokenList out;
  for (auto& tok : text::split_whitespace(buf)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    out.push_back(std::move(tok));
  }
  return out;
}

inline std::string join_tokens(const TokenList& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

// Multiset-overlap F1. Two empty lists score 1; one empty list scores 0.
inline double token_f1(const TokenList& pred, const TokenList& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string_view, long> counts;
  for (const auto& t : gold) ++counts[t];
  long overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct ScoreOptions {
  // Count validator-corrected spans as references.
  bool include_corrected = true;
};

// Max over references of word F1. The sentinel only matches the sentinel.
inline double score_answer(std::string_view pred, std::span<const AnswerRef> refs,
                           ScoreOptions opts = {}) {
  const bool pred_sentinel = is_sentinel(pred);
  const TokenList pred_tokens = pred_sentinel ? TokenList{} : normalize(pred);
  double best = 0.0;
  bool any = false;
  for (const auto& ref : refs) {
    if (ref.corrected && !opts.include_corrected) continue;
    any = true;
    const bool ref_sentinel = is_sentinel(ref.text);
    double s = 0.0;
    if (pred_sentinel || ref_sentinel)
      s = (pred_sentinel && ref_sentinel) ? 1.0 : 0.0;
    else
      s = token_f1(pred_tokens, normalize(ref.text));
    best = std::max(best, s);
  }
  if (!any) throw EmptyRefs("score_answer needs at least one reference");
  return best;
}

struct SentinelOutcome {
  bool gold_unanswerable = false;
  bool predicted_sentinel = false;
};

struct UnanswerableStats {
  double predicted_rate = 0.0;  // percent
  std::optional<double> precision;
  std::optional<double> recall;
  std::size_t turns = 0;
  std::size_t gold_sentinel = 0;
  std::size_t predicted_sentinel = 0;
  std::size_t correct_sentinel = 0;
};

inline UnanswerableStats unanswerable_stats(std::span<const SentinelOutcome> turns) {
  UnanswerableStats st;
  st.turns = turns.size();
  for (const auto& t : turns) {
    st.gold_sentinel += t.gold_unanswerable;
    st.predicted_sentinel += t.predicted_sentinel;
    st.correct_sentinel += (t.gold_unanswerable && t.predicted_sentinel);
  }
  if (st.turns > 0)
    st.predicted_rate = 100.0 * static_cast<double>(st.predicted_sentinel) / static_cast<double>(st.turns);
  if (st.predicted_sentinel > 0)
    st.precision = 100.0 * static_cast<double>(st.correct_sentinel) / static_cast<double>(st.predicted_sentinel);
  if (st.gold_sentinel > 0)
    st.recall = 100.0 * static_cast<double>(st.correct_sentinel) / static_cast<double>(st.gold_sentinel);
  return st;
}

template <typename T>
T majority_vote(std::span<const T> votes) {
  if (votes.size() < 3 || votes.size() % 2 == 0)
    throw EvenCount("majority needs an odd number (>= 3) of votes, got " +
                    std::to_string(votes.size()));
  std::map<T, std::size_t> counts;
  for (const auto& v : votes) ++counts[v];
  for (const auto& [v, c] : counts)
    if (2 * c > votes.size()) return v;
  // Only reachable for non-binary categories with no strict majority.
  throw InvariantViolation("no strict majority");
}

inline bool majority_correctness(const std::vector<bool>& judgments) {
  std::vector<char> v(judgments.begin(), judgments.end());
  return majority_vote<char>(std::span<const char>(v)) != 0;
}

// Items x categories; each cell counts raters choosing that category.
class RatingMatrix {
 public:
  explicit RatingMatrix(std::size_t categories) : categories_(categories) {}

  void add_item(std::vector<int> counts) {
    if (counts.size() != categories_)
      throw InvariantViolation("rating row has wrong number of categories");
    int n = 0;
    for (int c : counts) {
      if (c < 0) throw InvariantViolation("negative rating count");
      n += c;
    }
    if (n < 2) throw InvariantViolation("need at least 2 raters per item");
    if (!rows_.empty() && n != raters_)
      throw InvariantViolation("raters per item must be constant");
    raters_ = n;
    rows_.push_back(std::move(counts));
  }

  // Tallies one item from category indices chosen by each rater.
  void add_votes(std::span<const std::size_t> choices) {
    std::vector<int> counts(categories_, 0);
    for (auto c : choices) {
      if (c >= categories_) throw InvariantViolation("category out of range");
      ++counts[c];
    }
    add_item(std::move(counts));
  }

  std::size_t items() const { return rows_.size(); }
  std::size_t categories() const { return categories_; }
  int raters() const { return raters_; }
  const std::vector<std::vector<int>>& rows() const { return rows_; }

 private:
  std::size_t categories_;
  int raters_ = 0;
  std::vector<std::vector<int>> rows_;
};

struct Kappa {
  double value = 0.0;
  // Expected agreement is 1 (every rating in one category); value is 1.
  bool chance_saturated = false;
};

inline Kappa fleiss_kappa(const RatingMatrix& m) {
  if (m.items() < 2) throw TooFewItems("Fleiss' kappa needs at least 2 items");
  const double n = m.raters();
  const double items = static_cast<double>(m.items());
  std::vector<double> column(m.categories(), 0.0);
  double p_bar = 0.0;
  for (const auto& row : m.rows()) {
    double sq = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      sq += static_cast<double>(row[j]) * row[j];
      column[j] += row[j];
    }
    p_bar += (sq - n) / (n * (n - 1.0));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (double c : column) {
    double pj = c / (items * n);
    p_e += pj * pj;
  }
  if (p_e >= 1.0) return {1.0, true};
  return {(p_bar - p_e) / (1.0 - p_e), false};
}

}  // namespace convqa
