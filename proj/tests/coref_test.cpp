#include <gtest/gtest.h>

#include "convqa/coref.hpp"
#include "convqa/rule_resolver.hpp"

using namespace convqa;

namespace {

CorefInput input_of(std::vector<std::pair<SegmentRole, std::string>> segs) {
  std::vector<Segment> v;
  for (auto& [r, t] : segs) v.push_back({r, t});
  return CorefInput(std::move(v));
}

// Texts of each cluster's mentions, clusters in document order.
std::vector<std::vector<std::string>> texts(const ClusterSet& cs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : cs) {
    out.emplace_back();
    for (const auto& m : c.mentions) out.back().push_back(m.text);
  }
  return out;
}

}  // namespace

TEST(CorefInput, JoinsSegmentsWithSingleSpaces) {
  auto in = input_of({{SegmentRole::background, "Bg."}, {SegmentRole::question, "Q1?"}, {SegmentRole::answer, "A1"}});
  EXPECT_EQ(in.text(), "Bg. Q1? A1");
  EXPECT_EQ(in.segment_span(1), (Span{4, 7}));
  EXPECT_EQ(in.question_span(), (Span{8, 10}));
  EXPECT_EQ(in.segment_at(3), 0u);
  EXPECT_EQ(in.segment_at(4), 1u);
  EXPECT_EQ(in.segment_at(9), 2u);
}

TEST(CorefInputs, GoldAndPredictedDifferOnlyInAnswers) {
  auto [g, p] = build_coref_inputs("B", {"q1", "q2"}, {"g1", "g2"}, {"p1", "p2"}, "q3");
  ASSERT_EQ(g.segments().size(), 6u);
  EXPECT_EQ(g.text(), "B q1 g1 q2 g2 q3");
  EXPECT_EQ(p.text(), "B q1 p1 q2 p2 q3");
  auto [gw, pw] = build_coref_inputs("B", {"q1", "q2"}, {"g1", "g2"}, {"p1", "p2"}, "q3", 1);
  EXPECT_EQ(gw.text(), "B q2 g2 q3");
  EXPECT_EQ(pw.text(), "B q2 p2 q3");
}

TEST(CorefInputs, MisalignedHistoriesRejected) {
  EXPECT_THROW(build_coref_inputs("B", {"q1"}, {"g1", "g2"}, {"p1"}, "q"), MisalignedHistories);
}

TEST(Materialize, RejectsOutOfRangeAndSharedSpans) {
  auto in = input_of({{SegmentRole::question, "he ran"}});
  EXPECT_THROW(materialize_clusters(in, {{{{0, 99}}, {}}}), ProtocolViolation);
  EXPECT_THROW(materialize_clusters(in, {{{{0, 2}}, {}}, {{{0, 2}}, {}}}), ProtocolViolation);
  auto cs = materialize_clusters(in, {{{{3, 6}, {0, 2}}, {}}});
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].first_mention().text, "he");
}

TEST(CorefWire, RequestRoundTrip) {
  auto in = input_of({{SegmentRole::background, "Björk sings."}, {SegmentRole::question, "Is she Icelandic?"}});
  EXPECT_EQ(parse_coref_request(coref_request_json(in)), in);
}

TEST(CorefWire, ResponseOffsetsAreCodePoints) {
  auto in = input_of({{SegmentRole::background, "Björk sings."}, {SegmentRole::question, "Is she Icelandic?"}});
  // "Björk" = cp [0,5); "she" = cp [16,19)
  auto body = nlohmann::json::parse(R"({"clusters": [[{"start":0,"end":5},{"start":16,"end":19}]]})");
  auto cs = parse_coref_response(in, body);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].mentions[0].text, "Björk");
  EXPECT_EQ(cs[0].mentions[1].text, "she");
  EXPECT_EQ(coref_response_json(in, cs), body);
}

TEST(CorefWire, ClusterObjectsCarryEntityType) {
  auto in = input_of({{SegmentRole::question, "Did Paris fall?"}});
  auto body = nlohmann::json::parse(R"({"clusters": [{"mentions": [{"start":4,"end":9}], "entity_type": "GPE"}]})");
  auto cs = parse_coref_response(in, body);
  EXPECT_EQ(cs[0].entity_type, "GPE");
  EXPECT_EQ(parse_coref_response(in, coref_response_json(in, cs)), cs);
}

TEST(CorefWire, MalformedResponsesAreProtocolViolations) {
  auto in = input_of({{SegmentRole::question, "x y"}});
  for (const char* bad : {R"([])", R"({"error":"boom"})", R"({"clusters": 3})", R"({"clusters": [[{"start":-1,"end":1}]]})",
                          R"({"clusters": [[{"start":0,"end":50}]]})", R"({"clusters": [{"entity_type":"X"}]})"})
    EXPECT_THROW(parse_coref_response(in, nlohmann::json::parse(bad)), ProtocolViolation) << bad;
}

TEST(RuleResolver, ProperNounRunsWithConnectorsAndPossessives) {
  RuleCorefResolver r;
  auto in = input_of({{SegmentRole::background, "The Bank of England hired Maria Callas's tutor."}});
  auto m = rule_detail::detect_mentions(in);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(in.text().substr(m[0].span.begin, m[0].span.length()), "Bank of England");
  EXPECT_EQ(in.text().substr(m[1].span.begin, m[1].span.length()), "Maria Callas");
}

TEST(RuleResolver, PhrasesStopAtSegmentBoundaries) {
  auto in = input_of({{SegmentRole::answer, "Bernie Taupin"}, {SegmentRole::question, "Where did he go?"}});
  auto m = rule_detail::detect_mentions(in);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].span, (Span{0, 13}));
}

TEST(RuleResolver, PluralHeuristic) {
  using rule_detail::Number;
  using rule_detail::phrase_number;
  EXPECT_EQ(phrase_number("ramones"), Number::plural);
  EXPECT_EQ(phrase_number("jobs"), Number::plural);
  EXPECT_EQ(phrase_number("louis"), Number::singular);
  EXPECT_EQ(phrase_number("glass"), Number::singular);
  EXPECT_EQ(phrase_number("venus"), Number::singular);
  EXPECT_EQ(phrase_number("gas"), Number::singular);
}

TEST(RuleResolver, PronounJoinsNearestPrecedingPhraseOfSameNumber) {
  RuleCorefResolver r;
  auto in = input_of({{SegmentRole::background, "Elton John is a singer and pianist."},
                      {SegmentRole::question, "Who wrote his lyrics?"},
                      {SegmentRole::answer, "Bernie Taupin"},
                      {SegmentRole::question, "Where did he grow up?"}});
  auto cs = r.resolve(in);
  EXPECT_EQ(texts(cs), (std::vector<std::vector<std::string>>{{"Elton John", "his"}, {"Bernie Taupin", "he"}}));
}

TEST(RuleResolver, SameTextPhrasesCluster) {
  RuleCorefResolver r;
  auto in = input_of({{SegmentRole::answer, "June Carter"}, {SegmentRole::question, "When did June Carter die?"}});
  auto cs = r.resolve(in);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].mentions.size(), 2u);
}

TEST(RuleResolver, UnresolvedPronounIsSingletonAndSentinelIsIgnored) {
  RuleCorefResolver r;
  auto in = input_of({{SegmentRole::answer, "CANNOTANSWER"}, {SegmentRole::question, "Were they successful?"}});
  auto cs = r.resolve(in);
  EXPECT_EQ(texts(cs), (std::vector<std::vector<std::string>>{{"they"}}));
}

TEST(RuleResolver, Deterministic) {
  RuleCorefResolver r;
  auto in = input_of({{SegmentRole::background, "The Ramones were a punk band."},
                      {SegmentRole::question, "What did he think of them?"}});
  EXPECT_EQ(r.resolve(in), r.resolve(in));
  EXPECT_EQ(r.id(), "rule");
}
