#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convqa/error.hpp"
#include "convqa/protocol.hpp"

namespace convqa {

inline constexpr double kAutoEps = 0.0;
inline constexpr double kHumanEps = 0.5;

enum class Winner { A, B, tie };

inline Winner passage_winner(double score_a, double score_b, double eps) {
  if (std::fabs(score_a - score_b) <= eps) return Winner::tie;
  return score_a > score_b ? Winner::A : Winner::B;
}

// passage_id -> mean score of one model under one evaluation method.
using PassageScores = std::map<std::string, double>;
using PassageWinners = std::map<std::string, Winner>;

inline PassageWinners passage_winners(const PassageScores& a, const PassageScores& b, double eps) {
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; }))
    throw PassageMismatch("models were scored on different passage sets");
  PassageWinners out;
  for (const auto& [pid, sa] : a) out[pid] = passage_winner(sa, b.at(pid), eps);
  return out;
}

// Restricts two score maps to the passages both contain.
inline std::pair<PassageScores, PassageScores> common_passages(const PassageScores& a, const PassageScores& b) {
  PassageScores ra, rb;
  for (const auto& [pid, s] : a) {
    if (auto it = b.find(pid); it != b.end()) {
      ra[pid] = s;
      rb[pid] = it->second;
    }
  }
  return {ra, rb};
}

struct AgreementReport {
  std::optional<double> agreement;  // percent; absent when nothing was comparable
  std::size_t passages = 0;
  std::size_t compared = 0;  // neither side tied
  std::size_t matching = 0;
  std::size_t auto_ties = 0;
  std::size_t human_ties = 0;
  std::size_t excluded = 0;  // tie on either side
};

// Percentage of passages on which the automatic method picks the same winner
// as human evaluation. Passages where either side ties are excluded.
inline AgreementReport pairwise_agreement(const PassageWinners& automatic, const PassageWinners& human) {
  if (automatic.size() != human.size() ||
      !std::equal(automatic.begin(), automatic.end(), human.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; }))
    throw PassageMismatch("automatic and human outcomes cover different passages");
  AgreementReport r;
  r.passages = automatic.size();
  for (const auto& [pid, w] : automatic) {
    Winner h = human.at(pid);
    r.auto_ties += w == Winner::tie;
    r.human_ties += h == Winner::tie;
    if (w == Winner::tie || h == Winner::tie) {
      ++r.excluded;
      continue;
    }
    ++r.compared;
    r.matching += w == h;
  }
  if (r.compared > 0) r.agreement = 100.0 * static_cast<double>(r.matching) / static_cast<double>(r.compared);
  return r;
}

struct ModelScore {
  std::string model;
  double score = 0.0;
};

// Best first. A group collects every model within eps of the group's top
// score.
using Ranking = std::vector<std::vector<ModelScore>>;

inline Ranking rank_models(std::vector<ModelScore> scores, double eps) {
  std::sort(scores.begin(), scores.end(), [](const ModelScore& a, const ModelScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.model < b.model;
  });
  Ranking out;
  for (auto& s : scores) {
    if (!out.empty() && out.back().front().score - s.score <= eps)
      out.back().push_back(std::move(s));
    else
      out.push_back({std::move(s)});
  }
  return out;
}

// Worst first, e.g. "G < B < H ≈ E".
inline std::string format_ranking(const Ranking& r) {
  std::string out;
  for (auto g = r.rbegin(); g != r.rend(); ++g) {
    if (!out.empty()) out += " < ";
    for (auto m = g->rbegin(); m != g->rend(); ++m) {
      if (m != g->rbegin()) out += " ≈ ";
      out += m->model;
    }
  }
  return out;
}

struct InvalidityTally {
  std::size_t labeled = 0;
  std::map<InvalidityLabel, std::size_t> counts;
  std::map<InvalidityLabel, double> percent;
};

inline InvalidityTally invalidity_tally(std::span<const TurnEntry> entries) {
  InvalidityTally t;
  for (const auto& e : entries) {
    if (!e.invalidity_label) continue;
    ++t.labeled;
    ++t.counts[*e.invalidity_label];
  }
  for (auto l : {InvalidityLabel::unresolved_coreference, InvalidityLabel::incoherence,
                 InvalidityLabel::answer_changed}) {
    t.counts.try_emplace(l, 0);
    if (t.labeled > 0) t.percent[l] = 100.0 * static_cast<double>(t.counts[l]) / static_cast<double>(t.labeled);
  }
  return t;
}

}  // namespace convqa
