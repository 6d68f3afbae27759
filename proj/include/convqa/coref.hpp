#pragma once

// Coreference inputs and clusters. A CorefInput is a list of role-tagged
// segments joined by single spaces; every offset here is a byte offset into
// that joined text. The wire protocol to external providers uses code point
// offsets and is translated at the transport boundary.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "convqa/error.hpp"
#include "convqa/text.hpp"

namespace convqa {

enum class SegmentRole { background, question, answer };

inline std::string_view to_string(SegmentRole r) {
  switch (r) {
    case SegmentRole::background: return "background";
    case SegmentRole::question: return "question";
    case SegmentRole::answer: return "answer";
  }
  return "";
}

inline SegmentRole parse_segment_role(std::string_view s) {
  if (s == "background") return SegmentRole::background;
  if (s == "question") return SegmentRole::question;
  if (s == "answer") return SegmentRole::answer;
  throw ProtocolViolation("unknown segment role '" + std::string(s) + "'");
}

struct Segment {
  SegmentRole role;
  std::string text;
  bool operator==(const Segment&) const = default;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  bool operator==(const Span&) const = default;
  auto operator<=>(const Span&) const = default;
};

class CorefInput {
 public:
  CorefInput() = default;
  explicit CorefInput(std::vector<Segment> segments) : segments_(std::move(segments)) {
    for (const auto& s : segments_) {
      if (!offsets_.empty()) text_.push_back(' ');
      offsets_.push_back(text_.size());
      text_ += s.text;
    }
  }

  const std::vector<Segment>& segments() const { return segments_; }
  const std::string& text() const { return text_; }
  std::size_t segment_offset(std::size_t i) const { return offsets_.at(i); }

  Span segment_span(std::size_t i) const {
    return {offsets_.at(i), offsets_.at(i) + segments_.at(i).text.size()};
  }

  // The current question is always the last segment.
  Span question_span() const {
    if (segments_.empty()) return {};
    return segment_span(segments_.size() - 1);
  }

  // Segment containing byte offset `pos`; separators belong to the left segment.
  std::size_t segment_at(std::size_t pos) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), pos);
    return it == offsets_.begin() ? 0 : static_cast<std::size_t>(it - offsets_.begin()) - 1;
  }

  bool operator==(const CorefInput& o) const { return segments_ == o.segments_; }

 private:
  std::vector<Segment> segments_;
  std::string text_;
  std::vector<std::size_t> offsets_;
};

struct Mention {
  std::string text;
  Span span;
  std::size_t segment = 0;
  bool operator==(const Mention&) const = default;
};

struct Cluster {
  std::vector<Mention> mentions;  // document order
  // Provider-supplied label such as "PERSON"; absent when the provider has none.
  std::optional<std::string> entity_type;

  const Mention& first_mention() const { return mentions.front(); }
  bool operator==(const Cluster&) const = default;
};

using ClusterSet = std::vector<Cluster>;

struct RawCluster {
  std::vector<Span> spans;
  std::optional<std::string> entity_type;
};

// Turns raw spans into mentions over `input`: checks bounds, sorts mentions
// and clusters into document order, rejects a span shared by two clusters.
inline ClusterSet materialize_clusters(const CorefInput& input, std::vector<RawCluster> raw) {
  const auto& txt = input.text();
  ClusterSet out;
  std::vector<Span> seen;
  for (auto& rc : raw) {
    if (rc.spans.empty()) continue;
    Cluster c;
    c.entity_type = std::move(rc.entity_type);
    std::sort(rc.spans.begin(), rc.spans.end());
    rc.spans.erase(std::unique(rc.spans.begin(), rc.spans.end()), rc.spans.end());
    for (const auto& s : rc.spans) {
      if (s.begin >= s.end || s.end > txt.size())
        throw ProtocolViolation("mention span [" + std::to_string(s.begin) + "," +
                                std::to_string(s.end) + ") outside input of length " +
                                std::to_string(txt.size()));
      if (std::find(seen.begin(), seen.end(), s) != seen.end())
        throw ProtocolViolation("mention span shared by two clusters");
      seen.push_back(s);
      c.mentions.push_back({txt.substr(s.begin, s.length()), s, input.segment_at(s.begin)});
    }
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const Cluster& a, const Cluster& b) {
    return a.first_mention().span < b.first_mention().span;
  });
  return out;
}

class CorefResolver {
 public:
  virtual ~CorefResolver() = default;
  virtual ClusterSet resolve(const CorefInput& input) = 0;
  virtual std::string id() const = 0;
};

using Window = std::optional<std::size_t>;  // nullopt = all turns

// Gold-history and predicted-history inputs for the current question:
// [background; Q_{i-k}; A_{i-k}; ...; Q_i]. Both share questions and
// background; only answer segments differ.
inline std::pair<CorefInput, CorefInput> build_coref_inputs(
    const std::string& background, const std::vector<std::string>& asked_history,
    const std::vector<std::string>& gold_history, const std::vector<std::string>& predicted_history,
    const std::string& current_question, Window window = std::nullopt) {
  if (asked_history.size() != gold_history.size() ||
      asked_history.size() != predicted_history.size())
    throw MisalignedHistories("history lengths differ: " + std::to_string(asked_history.size()) +
                              " questions, " + std::to_string(gold_history.size()) + " gold, " +
                              std::to_string(predicted_history.size()) + " predicted");
  if (window && *window == 0) throw ConfigError("coref window must be positive");
  const std::size_t n = asked_history.size();
  const std::size_t take = window ? std::min(*window, n) : n;

  std::vector<Segment> gold{{SegmentRole::background, background}};
  std::vector<Segment> pred{{SegmentRole::background, background}};
  for (std::size_t j = n - take; j < n; ++j) {
    gold.push_back({SegmentRole::question, asked_history[j]});
    pred.push_back({SegmentRole::question, asked_history[j]});
    gold.push_back({SegmentRole::answer, gold_history[j]});
    pred.push_back({SegmentRole::answer, predicted_history[j]});
  }
  gold.push_back({SegmentRole::question, current_question});
  pred.push_back({SegmentRole::question, current_question});
  return {CorefInput(std::move(gold)), CorefInput(std::move(pred))};
}

// Wire encoding for external providers. Offsets are code points.
inline nlohmann::json coref_request_json(const CorefInput& input) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : input.segments())
    segs.push_back({{"role", std::string(to_string(s.role))}, {"text", s.text}});
  return {{"segments", std::move(segs)}};
}

inline CorefInput parse_coref_request(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("segments") || !body["segments"].is_array())
    throw ProtocolViolation("coref request lacks 'segments'");
  std::vector<Segment> segs;
  for (const auto& s : body["segments"]) {
    if (!s.is_object() || !s.contains("role") || !s.contains("text") || !s["role"].is_string() ||
        !s["text"].is_string())
      throw ProtocolViolation("segment needs string 'role' and 'text'");
    segs.push_back({parse_segment_role(s["role"].get<std::string>()), s["text"].get<std::string>()});
  }
  return CorefInput(std::move(segs));
}

// Accepts {"clusters": [cluster...]} where a cluster is either a list of
// {"start","end"} spans or {"mentions": [spans], "entity_type": "..."}.
inline ClusterSet parse_coref_response(const CorefInput& input, const nlohmann::json& body) {
  if (!body.is_object()) throw ProtocolViolation("coref response is not an object");
  if (body.contains("error"))
    throw ProtocolViolation("coref provider error: " + body["error"].dump());
  if (!body.contains("clusters") || !body["clusters"].is_array())
    throw ProtocolViolation("coref response lacks 'clusters'");
  const auto& txt = input.text();
  std::vector<RawCluster> raw;
  for (const auto& c : body["clusters"]) {
    RawCluster rc;
    const nlohmann::json* mentions = &c;
    if (c.is_object()) {
      if (!c.contains("mentions")) throw ProtocolViolation("cluster object lacks 'mentions'");
      mentions = &c["mentions"];
      if (c.contains("entity_type") && c["entity_type"].is_string())
        rc.entity_type = c["entity_type"].get<std::string>();
    }
    if (!mentions->is_array()) throw ProtocolViolation("cluster must be a list of spans");
    for (const auto& m : *mentions) {
      if (!m.is_object() || !m.contains("start") || !m.contains("end") ||
          !m["start"].is_number_unsigned() || !m["end"].is_number_unsigned())
        throw ProtocolViolation("mention needs non-negative integer 'start' and 'end'");
      auto b = text::byte_offset(txt, m["start"].get<std::size_t>());
      auto e = text::byte_offset(txt, m["end"].get<std::size_t>());
      if (!b || !e) throw ProtocolViolation("mention offset beyond input");
      rc.spans.push_back({*b, *e});
    }
    raw.push_back(std::move(rc));
  }
  return materialize_clusters(input, std::move(raw));
}

inline nlohmann::json coref_response_json(const CorefInput& input, const ClusterSet& clusters) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : clusters) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& m : c.mentions)
      spans.push_back({{"start", text::codepoint_offset(input.text(), m.span.begin)},
                       {"end", text::codepoint_offset(input.text(), m.span.end)}});
    if (c.entity_type)
      out.push_back({{"mentions", std::move(spans)}, {"entity_type", *c.entity_type}});
    else
      out.push_back(std::move(spans));
  }
  return {{"clusters", std::move(out)}};
}

}  // namespace convqa
