#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <sstream>

#include "convqa/protocol.hpp"
#include "convqa/rule_resolver.hpp"
#include "test_util.hpp"

using namespace convqa;

namespace {

ProtocolConfig config_for(ProtocolKind kind, std::size_t jobs = 1) {
  ProtocolConfig cfg;
  cfg.kind = kind;
  cfg.jobs = jobs;
  if (kind == ProtocolKind::rewrite || kind == ProtocolKind::replace)
    cfg.detector = DetectorConfig{std::make_shared<RuleCorefResolver>(), true, std::nullopt};
  return cfg;
}

// Records the history length of every request and answers with the question.
class RecordingModel : public ModelClient {
 public:
  ModelResponse answer(const ModelRequest& req) override {
    std::lock_guard lock(mu_);
    history_sizes.push_back(req.history.size());
    return {req.question, std::nullopt, std::nullopt, false, 0.0};
  }
  std::string name() const override { return "recording"; }
  std::vector<std::size_t> history_sizes;

 private:
  std::mutex mu_;
};

// Fails with `E` on the n-th call (0-based), answers with the sentinel otherwise.
template <typename E>
class FailingModel : public ModelClient {
 public:
  explicit FailingModel(std::size_t n) : n_(n) {}
  ModelResponse answer(const ModelRequest&) override {
    if (calls_++ == n_) throw E("injected");
    return sentinel_response();
  }
  std::string name() const override { return "failing"; }

 private:
  std::size_t n_;
  std::atomic<std::size_t> calls_{0};
};

std::vector<double> scores_of(const ProtocolRun& run) {
  std::vector<double> out;
  for (const auto* e : run.entries()) out.push_back(e->score);
  return out;
}

}  // namespace

TEST(ProtocolConfigCheck, RejectsInconsistentOptions) {
  ProtocolConfig gold;
  EXPECT_NO_THROW(gold.validate());
  gold.window = 0;
  EXPECT_THROW(gold.validate(), ConfigError);
  ProtocolConfig rewrite;
  rewrite.kind = ProtocolKind::rewrite;
  EXPECT_THROW(rewrite.validate(), ConfigError);
  auto replace = config_for(ProtocolKind::replace);
  EXPECT_THROW(replace.validate(), ConfigError);
  auto pred = config_for(ProtocolKind::pred);
  pred.detector = DetectorConfig{std::make_shared<RuleCorefResolver>(), true, std::nullopt};
  EXPECT_THROW(pred.validate(), ConfigError);
  EXPECT_THROW(parse_protocol_kind("auto"), ConfigError);
  EXPECT_EQ(parse_window("all"), std::nullopt);
  EXPECT_EQ(parse_window("3"), 3u);
  EXPECT_THROW(parse_window("x"), ConfigError);
}

TEST(BuildHistory, GoldVersusPredictedAndWindow) {
  ConversationState st{{"q1", "q2", "q3"}, {"g1", "g2", "g3"}, {"p1", "p2", "p3"}};
  auto gold = build_history(ProtocolKind::gold, st, 4);
  ASSERT_EQ(gold.size(), 3u);
  EXPECT_EQ(gold[2], (HistoryPair{"q3", "g3"}));
  auto pred = build_history(ProtocolKind::pred, st, 4, 2);
  ASSERT_EQ(pred.size(), 2u);
  EXPECT_EQ(pred[0], (HistoryPair{"q2", "p2"}));
  EXPECT_TRUE(build_history(ProtocolKind::pred, st, 1).empty());
  ConversationState short_pred{{"q1", "q2"}, {"g1", "g2"}, {"p1"}};
  EXPECT_THROW(build_history(ProtocolKind::pred, short_pred, 3), MissingPrediction);
  EXPECT_NO_THROW(build_history(ProtocolKind::gold, short_pred, 3));
}

TEST(Protocols, OracleIsPerfectUnderEveryProtocol) {
  auto c = convqa::testing::load_fixture("mini.json");
  ScriptedModel oracle(ScriptedKind::oracle, c);
  for (auto kind : {ProtocolKind::gold, ProtocolKind::pred, ProtocolKind::rewrite}) {
    auto s = summarize(run_protocol(*c, oracle, config_for(kind)));
    EXPECT_EQ(s.turns, 79u) << to_string(kind);
    EXPECT_EQ(s.conversations, 20u);
    EXPECT_DOUBLE_EQ(*s.overall_f1, 100.0) << to_string(kind);
    EXPECT_EQ(s.model_errors, 0u);
    EXPECT_FALSE(s.partial_failure());
  }
}

TEST(Protocols, AmnesiacSeparatesGoldFromPredictedHistory) {
  auto c = convqa::testing::load_fixture("amnesiac.json");
  ScriptedModel m(ScriptedKind::amnesiac, c);
  auto gold = run_protocol(*c, m, config_for(ProtocolKind::gold));
  auto pred = run_protocol(*c, m, config_for(ProtocolKind::pred));
  EXPECT_EQ(scores_of(gold), (std::vector<double>{1, 1, 0, 1}));
  EXPECT_EQ(scores_of(pred), (std::vector<double>{1, 1, 0, 0}));
  EXPECT_DOUBLE_EQ(*summarize(gold).overall_f1, 75.0);
  EXPECT_DOUBLE_EQ(*summarize(pred).overall_f1, 50.0);
  EXPECT_EQ(pred.conversations[0].turns[3].history_snapshot[2].answer, "CANNOTANSWER");
}

TEST(Protocols, WindowBoundsHistory) {
  auto c = convqa::testing::load_fixture("mini.json");
  RecordingModel m;
  auto cfg = config_for(ProtocolKind::pred);
  cfg.window = 2;
  run_protocol(*c, m, cfg);
  for (auto n : m.history_sizes) EXPECT_LE(n, 2u);
  EXPECT_NE(std::find(m.history_sizes.begin(), m.history_sizes.end(), 2u), m.history_sizes.end());
}

TEST(Protocols, ModelErrorIsFlaggedAndScoredAsSentinel) {
  auto c = convqa::testing::load_fixture("amnesiac.json");
  FailingModel<Timeout> m(0);
  auto run = run_protocol(*c, m, config_for(ProtocolKind::pred));
  const auto& first = run.conversations[0].turns[0];
  EXPECT_EQ(first.error_flag, "model:Timeout");
  EXPECT_TRUE(first.prediction.is_sentinel);
  EXPECT_EQ(first.score, 0.0);
  auto s = summarize(run);
  EXPECT_EQ(s.model_errors, 1u);
  EXPECT_TRUE(s.partial_failure());
  EXPECT_EQ(s.turns, 4u);
}

TEST(Protocols, UnreachableAbortsOnlyThatConversation) {
  auto c = convqa::testing::load_fixture("mini.json");
  FailingModel<Unreachable> m(1);
  auto run = run_protocol(*c, m, config_for(ProtocolKind::gold));
  auto s = summarize(run);
  EXPECT_EQ(s.aborted_conversations, 1u);
  EXPECT_TRUE(s.partial_failure());
  EXPECT_EQ(s.conversations, 20u);
  EXPECT_TRUE(run.conversations[0].aborted);
  EXPECT_EQ(run.conversations[0].turns.size(), 1u);
  EXPECT_FALSE(run.conversations[1].aborted);
}

TEST(Protocols, ParallelRunsMatchSequential) {
  auto c = convqa::testing::load_fixture("drift.json");
  ScriptedModel m(ScriptedKind::amnesiac, c);
  std::ostringstream one, four;
  write_run_log(one, run_protocol(*c, m, config_for(ProtocolKind::rewrite, 1)));
  write_run_log(four, run_protocol(*c, m, config_for(ProtocolKind::rewrite, 4)));
  EXPECT_EQ(one.str(), four.str());
}

TEST(Protocols, RewriteRepairsEveryDriftedTurn) {
  auto c = convqa::testing::load_fixture("drift.json");
  ScriptedModel m(ScriptedKind::amnesiac, c);
  auto run = run_protocol(*c, m, config_for(ProtocolKind::rewrite));
  auto s = summarize(run);
  EXPECT_EQ(s.rewritten, 7u);
  EXPECT_EQ(s.unrewritable, 0u);
  auto labels = nlohmann::json::parse(read_file(convqa::testing::fixture("drift_labels.json")));
  for (const auto* e : run.entries()) {
    const auto& l = labels["turns"][e->turn_id];
    if (l["valid"].get<bool>()) {
      EXPECT_EQ(e->rewrite_flag, RewriteFlag::none) << e->turn_id;
    } else {
      EXPECT_EQ(e->rewrite_flag, RewriteFlag::rewritten) << e->turn_id;
      EXPECT_EQ(e->question_asked, l["rewrite"].get<std::string>()) << e->turn_id;
    }
  }
}

TEST(Protocols, ReplaceUsesTableAndFlagsTheRest) {
  auto c = convqa::testing::load_fixture("drift.json");
  ScriptedModel m(ScriptedKind::amnesiac, c);
  auto cfg = config_for(ProtocolKind::replace);
  cfg.replacements = std::make_shared<const ReplacementTable>(
      load_replacements(convqa::testing::fixture("replacements.tsv")));
  auto run = run_protocol(*c, m, cfg);
  auto s = summarize(run);
  EXPECT_EQ(s.replaced, 4u);
  EXPECT_EQ(s.unrewritable, 4u);
  std::vector<std::string> unrewritable;
  for (const auto* e : run.entries())
    if (e->rewrite_flag == RewriteFlag::unrewritable) unrewritable.push_back(e->turn_id);
  EXPECT_EQ(unrewritable, (std::vector<std::string>{"D_006_q#4", "D_008_q#3", "D_008_q#4", "D_009_q#3"}));
}

TEST(RunLog, RoundTripsThroughJsonLines) {
  auto c = convqa::testing::load_fixture("drift.json");
  ScriptedModel m(ScriptedKind::amnesiac, c);
  auto run = run_protocol(*c, m, config_for(ProtocolKind::rewrite));
  std::ostringstream out;
  write_run_log(out, run);
  std::istringstream in(out.str());
  auto back = read_run_log(in);
  auto orig = run.entries();
  ASSERT_EQ(back.size(), orig.size());
  for (std::size_t k = 0; k < back.size(); ++k) EXPECT_EQ(to_json(back[k]), to_json(*orig[k]));
  std::istringstream bad("{\"turn_id\":1}\nnot json\n");
  EXPECT_THROW(read_run_log(bad), Error);
  EXPECT_THROW(read_run_log(std::filesystem::path("/nonexistent/run.jsonl")), MissingLogs);
}

TEST(RunSummaryJson, RoundTrips) {
  auto c = convqa::testing::load_fixture("mini.json");
  ScriptedModel m(ScriptedKind::echo);
  auto s = summarize(run_protocol(*c, m, config_for(ProtocolKind::gold)));
  s.model = "echo";
  auto back = summary_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(back), to_json(s));
}
