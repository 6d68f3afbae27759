#pragma once

// Deterministic rule-based coreference, used as the offline fallback and in
// tests.
//
// Mentions:
//   - third-person pronouns (he/she/it/they/him/her/them and possessives);
//   - proper noun phrases: maximal runs of capitalized tokens inside one
//     segment, separated only by spaces, optionally bridged by lowercase
//     connector words ("Punch in the Face"). Sentence-initial function words
//     ("What", "Did", "The") never start a phrase. A trailing possessive 's
//     is excluded from the span and ends the phrase.
// Clustering:
//   (a) noun phrases with the same normalized text share a cluster;
//   (b) each pronoun joins the cluster of the nearest preceding noun phrase of
//       the same grammatical number; otherwise it stays a singleton.

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "convqa/coref.hpp"
#include "convqa/corpus.hpp"
#include "convqa/scoring.hpp"

namespace convqa {

namespace rule_detail {

enum class Number { singular, plural };

inline constexpr std::array<std::string_view, 8> kSingularPronouns = {
    "he", "she", "it", "him", "her", "his", "hers", "its"};
inline constexpr std::array<std::string_view, 4> kPluralPronouns = {"they", "them", "their",
                                                                    "theirs"};

inline constexpr std::array<std::string_view, 19> kConnectors = {
    "of", "in", "the", "and", "de", "on", "for", "at", "to", "a",
    "an", "von", "van", "la", "le", "du", "del", "da", "y"};

inline constexpr std::array<std::string_view, 96> kStopWords = {
    "what", "who", "whom", "whose", "when", "where", "why", "how", "which", "did",
    "do", "does", "done", "is", "are", "was", "were", "be", "been", "being",
    "has", "have", "had", "can", "could", "will", "would", "should", "shall", "may",
    "might", "must", "i", "you", "we", "he", "she", "it", "they", "me",
    "him", "her", "us", "them", "my", "your", "our", "his", "its", "their",
    "this", "that", "these", "those", "there", "here", "then", "also", "any", "anything",
    "other", "another", "some", "yes", "no", "not", "after", "before", "during", "as",
    "if", "so", "but", "or", "nor", "and", "the", "a", "an", "in",
    "on", "at", "of", "for", "to", "from", "with", "by", "about", "into",
    "while", "since", "besides", "tell", "please", "cannotanswer"};

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& set, std::string_view w) {
  return std::find(set.begin(), set.end(), w) != set.end();
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '\'' || c == '-' || c >= 0x80;
}

struct Token {
  Span span;
  std::string lower;
  std::size_t base_end = 0;  // span.end minus any possessive suffix
  bool possessive = false;
  bool capitalized = false;
  std::size_t segment = 0;
};

inline std::vector<Token> tokenize(const CorefInput& input) {
  const std::string& s = input.text();
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_word_byte(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && (s[b] == '\'' || s[b] == '-')) ++b;
    while (e > b && (s[e - 1] == '\'' || s[e - 1] == '-')) --e;
    i = j;
    if (b == e) continue;
    Token t;
    t.span = {b, e};
    std::string_view word(s.data() + b, e - b);
    t.base_end = e;
    if (word.size() > 2 && word.ends_with("'s")) {
      t.possessive = true;
      t.base_end = e - 2;
    } else if (word.size() > 4 && word.ends_with("\xE2\x80\x99s")) {
      t.possessive = true;
      t.base_end = e - 4;
    }
    t.lower = ascii_lower(std::string_view(s.data() + b, t.base_end - b));
    t.capitalized = word.front() >= 'A' && word.front() <= 'Z';
    t.segment = input.segment_at(b);
    out.push_back(std::move(t));
  }
  return out;
}

inline bool only_spaces_between(const std::string& s, const Token& a, const Token& b) {
  if (a.segment != b.segment || a.possessive) return false;
  for (std::size_t k = a.span.end; k < b.span.begin; ++k)
    if (s[k] != ' ') return false;
  return true;
}

inline bool is_pronoun(std::string_view lower) {
  return contains(kSingularPronouns, lower) || contains(kPluralPronouns, lower);
}

inline bool starts_phrase(const Token& t) {
  return t.capitalized && !contains(kStopWords, t.lower) && !is_pronoun(t.lower);
}

inline Number phrase_number(std::string_view last_token_lower) {
  const auto& w = last_token_lower;
  if (w.size() >= 4 && w.back() == 's' && !w.ends_with("ss") && !w.ends_with("us") &&
      !w.ends_with("is"))
    return Number::plural;
  return Number::singular;
}

struct Candidate {
  Span span;
  bool pronoun = false;
  Number number = Number::singular;
};

inline std::vector<Candidate> detect_mentions(const CorefInput& input) {
  const std::string& s = input.text();
  auto toks = tokenize(input);
  std::vector<Candidate> out;
  for (std::size_t t = 0; t < toks.size();) {
    const Token& tok = toks[t];
    if (is_pronoun(tok.lower) && !tok.possessive) {
      out.push_back({tok.span, true,
                     contains(kPluralPronouns, tok.lower) ? Number::plural : Number::singular});
      ++t;
      continue;
    }
    if (!starts_phrase(tok)) {
      ++t;
      continue;
    }
    std::size_t end = t;
    if (!tok.possessive) {
      for (std::size_t k = t + 1; k < toks.size(); ++k) {
        if (!only_spaces_between(s, toks[k - 1], toks[k])) break;
        if (contains(kConnectors, toks[k].lower) && !toks[k].possessive) continue;
        if (!starts_phrase(toks[k])) break;
        end = k;
        if (toks[k].possessive) break;
      }
    }
    out.push_back({{tok.span.begin, toks[end].base_end}, false, phrase_number(toks[end].lower)});
    t = end + 1;
  }
  return out;
}

}  // namespace rule_detail

class RuleCorefResolver : public CorefResolver {
 public:
  ClusterSet resolve(const CorefInput& input) override {
    using namespace rule_detail;
    auto mentions = detect_mentions(input);
    const std::string& s = input.text();

    std::vector<RawCluster> clusters;
    std::map<std::string, std::size_t> by_key;
    // Phrase mention index -> cluster; pronouns resolve against phrases only.
    std::vector<std::pair<const Candidate*, std::size_t>> phrases;
    for (const auto& m : mentions) {
      if (m.pronoun) continue;
      std::string key = join_tokens(normalize(std::string_view(s).substr(m.span.begin, m.span.length())));
      auto [it, inserted] = by_key.emplace(key, clusters.size());
      if (inserted) clusters.push_back({});
      clusters[it->second].spans.push_back(m.span);
      phrases.emplace_back(&m, it->second);
    }
    for (const auto& m : mentions) {
      if (!m.pronoun) continue;
      std::optional<std::size_t> target;
      for (auto it = phrases.rbegin(); it != phrases.rend(); ++it) {
        if (it->first->span.begin < m.span.begin && it->first->number == m.number) {
          target = it->second;
          break;
        }
      }
      if (target) {
        clusters[*target].spans.push_back(m.span);
      } else {
        clusters.push_back({{m.span}, std::nullopt});
      }
    }
    return materialize_clusters(input, std::move(clusters));
  }

  std::string id() const override { return "rule"; }
};

}  // namespace convqa
