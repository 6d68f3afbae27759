#include <gtest/gtest.h>

#include <random>

#include "convqa/analytics.hpp"

using namespace convqa;

TEST(PassageWinner, AntisymmetricOverRandomPairs) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> score(0.0, 100.0);
  std::uniform_real_distribution<double> eps(0.0, 5.0);
  for (int k = 0; k < 1000; ++k) {
    double a = score(rng), b = k % 10 == 0 ? a : score(rng), e = eps(rng);
    Winner ab = passage_winner(a, b, e), ba = passage_winner(b, a, e);
    const Winner mirrored = ab == Winner::A ? Winner::B : ab == Winner::B ? Winner::A : Winner::tie;
    EXPECT_EQ(ba, mirrored);
  }
}

TEST(PassageWinner, EpsilonBoundaryIsATie) {
  EXPECT_EQ(passage_winner(50.0, 50.0, 0.0), Winner::tie);
  EXPECT_EQ(passage_winner(50.5, 50.0, 0.5), Winner::tie);
  EXPECT_EQ(passage_winner(50.6, 50.0, 0.5), Winner::A);
  EXPECT_EQ(passage_winner(40.0, 50.0, 0.5), Winner::B);
}

TEST(PairwiseAgreement, SelfAgreementIsComplete) {
  PassageScores a{{"p1", 80}, {"p2", 20}, {"p3", 55}}, b{{"p1", 60}, {"p2", 40}, {"p3", 50}};
  auto w = passage_winners(a, b, 0.0);
  auto r = pairwise_agreement(w, w);
  EXPECT_DOUBLE_EQ(*r.agreement, 100.0);
  EXPECT_EQ(r.compared, 3u);
}

TEST(PairwiseAgreement, TiesAreExcluded) {
  PassageWinners automatic{{"p1", Winner::A}, {"p2", Winner::tie}, {"p3", Winner::B}, {"p4", Winner::A}};
  PassageWinners human{{"p1", Winner::A}, {"p2", Winner::A}, {"p3", Winner::A}, {"p4", Winner::tie}};
  auto r = pairwise_agreement(automatic, human);
  EXPECT_EQ(r.passages, 4u);
  EXPECT_EQ(r.compared, 2u);
  EXPECT_EQ(r.matching, 1u);
  EXPECT_EQ(r.auto_ties, 1u);
  EXPECT_EQ(r.human_ties, 1u);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_DOUBLE_EQ(*r.agreement, 50.0);
  PassageWinners all_tied{{"p1", Winner::tie}};
  EXPECT_FALSE(pairwise_agreement(all_tied, all_tied).agreement.has_value());
}

TEST(PairwiseAgreement, PassageSetsMustMatch) {
  EXPECT_THROW(passage_winners({{"p1", 1}}, {{"p2", 1}}, 0.0), PassageMismatch);
  EXPECT_THROW(pairwise_agreement({{"p1", Winner::A}}, {{"p1", Winner::A}, {"p2", Winner::B}}), PassageMismatch);
  auto [a, b] = common_passages({{"p1", 1}, {"p2", 2}}, {{"p2", 3}, {"p3", 4}});
  EXPECT_EQ(a, (PassageScores{{"p2", 2}}));
  EXPECT_EQ(b, (PassageScores{{"p2", 3}}));
}

TEST(Ranking, GroupsWithinEpsilon) {
  auto r = rank_models({{"G", 40.0}, {"B", 50.0}, {"H", 60.0}, {"E", 60.3}}, 0.5);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(format_ranking(r), "G < B < H ≈ E");
  EXPECT_EQ(format_ranking(rank_models({{"x", 1.0}, {"y", 1.0}}, 0.0)), "y ≈ x");
  EXPECT_EQ(format_ranking(rank_models({}, 0.0)), "");
}

TEST(InvalidityTallyTest, PercentagesOverLabeledTurns) {
  std::vector<TurnEntry> entries(5);
  entries[0].invalidity_label = InvalidityLabel::unresolved_coreference;
  entries[1].invalidity_label = InvalidityLabel::unresolved_coreference;
  entries[2].invalidity_label = InvalidityLabel::answer_changed;
  entries[3].invalidity_label = InvalidityLabel::incoherence;
  auto t = invalidity_tally(entries);
  EXPECT_EQ(t.labeled, 4u);
  EXPECT_DOUBLE_EQ(t.percent[InvalidityLabel::unresolved_coreference], 50.0);
  EXPECT_DOUBLE_EQ(t.percent[InvalidityLabel::incoherence], 25.0);
  EXPECT_TRUE(invalidity_tally({}).percent.empty());
}
