#include <gtest/gtest.h>

#include <random>

#include "rollout_gen.hpp"
#include "test_support.hpp"
#include "twinseg/rollout.hpp"
#include "twinseg/twin_json.hpp"

using namespace twinseg;

namespace {

const std::string kReason = "<reason>r</reason>";
const std::string kPlan = R"(<plan>[{"tool":"size","args":{"id":1}}]</plan>)";
const std::string kResults = R"(<results>{"schema_version":1,"frames":[]}</results>)";
const std::string kAnswer = R"(<answer>{"instances":[1]}</answer>)";

const std::string& block_text(int k) {
  static const std::string* texts[] = {&kReason, &kPlan, &kResults, &kAnswer};
  return *texts[k];
}

TwinSequence one_instance_twin() {
  TwinSequence t;
  t.source = {"v", "test"};
  t.frames = {TwinFrame{1, {testing_support::instance(1, testing_support::rect_mask(4, 4, 0, 0, 1, 1), 3.0, "cup")}}};
  return t;
}

}  // namespace

TEST(RolloutParse, PlanlessShape) {
  const auto out = parse_rollout(kReason + kAnswer);
  ASSERT_TRUE(out.ok());
  EXPECT_FALSE(out.rollout().plan.has_value());
  EXPECT_EQ(out.rollout().reason, "r");
  EXPECT_EQ(out.rollout().answer.instances, (std::vector<InstanceId>{1}));
}

TEST(RolloutParse, FourBlockShape) {
  const auto out = parse_rollout(kReason + "\n" + kPlan + " " + kResults + "\n" + kAnswer + "\n");
  ASSERT_TRUE(out.ok());
  ASSERT_TRUE(out.rollout().plan.has_value());
  EXPECT_EQ(out.rollout().plan->size(), 1u);
  EXPECT_EQ(out.rollout().plan->front().name, "size");
}

TEST(RolloutParse, ErrorKinds) {
  EXPECT_EQ(parse_rollout(kAnswer + kReason).error().kind, ParseErrorKind::wrong_order);
  EXPECT_EQ(parse_rollout(kReason).error().kind, ParseErrorKind::missing_block);
  EXPECT_EQ(parse_rollout("").error().kind, ParseErrorKind::missing_block);
  EXPECT_EQ(parse_rollout(kReason + kAnswer + kAnswer).error().kind, ParseErrorKind::duplicate_block);
  EXPECT_EQ(parse_rollout(kReason + kPlan + kAnswer).error().kind, ParseErrorKind::incomplete_execution);
  EXPECT_EQ(parse_rollout("<reason>r" + kAnswer).error().kind, ParseErrorKind::unbalanced_tokens);
  EXPECT_EQ(parse_rollout("</reason>" + kAnswer).error().kind, ParseErrorKind::unbalanced_tokens);
  EXPECT_EQ(parse_rollout("hello " + kReason + kAnswer).error().kind, ParseErrorKind::stray_text);
  EXPECT_EQ(parse_rollout(kReason + "<plan>[]</plan>" + kResults + kAnswer).error().kind, ParseErrorKind::malformed_plan);
  EXPECT_EQ(parse_rollout(kReason + kPlan + "<results>[1]</results>" + kAnswer).error().kind,
            ParseErrorKind::malformed_results);
  EXPECT_EQ(parse_rollout(kReason + "<answer>{\"instances\":[]}</answer>").error().kind, ParseErrorKind::malformed_answer);
  EXPECT_EQ(parse_rollout(kReason + "<answer>{\"ids\":[1]}</answer>").error().kind, ParseErrorKind::malformed_answer);
  EXPECT_TRUE(parse_rollout(kReason + "<answer>{\"instances\":[],\"no_target\":true}</answer>").ok());
}

TEST(RolloutParse, ErrorOffsetsPointAtTheProblem) {
  const std::string text = kReason + "  junk" + kAnswer;
  const auto out = parse_rollout(text);
  ASSERT_FALSE(out.ok());
  EXPECT_EQ(out.error().offset, kReason.size() + 2);
}

// Every block sequence of length 0..4 over the four kinds (with repeats):
// exactly the two accepted shapes parse.
TEST(RolloutGrammar, ExhaustiveSequences) {
  int accepted = 0, total = 0;
  std::vector<int> seq;
  std::function<void()> visit = [&] {
    std::string text;
    for (int k : seq) text += block_text(k);
    const auto out = parse_rollout(text);
    const bool expect = seq == std::vector<int>{0, 3} || seq == std::vector<int>{0, 1, 2, 3};
    EXPECT_EQ(out.ok(), expect) << text;
    accepted += out.ok();
    ++total;
    if (seq.size() == 4) return;
    for (int k = 0; k < 4; ++k) {
      seq.push_back(k);
      visit();
      seq.pop_back();
    }
  };
  visit();
  EXPECT_EQ(total, 341);
  EXPECT_EQ(accepted, 2);
}

TEST(RolloutGrammar, AllOrderingsOfFourBlocks) {
  std::vector<int> perm = {0, 1, 2, 3};
  int accepted = 0, n = 0;
  do {
    std::string text;
    for (int k : perm) text += block_text(k);
    accepted += parse_rollout(text).ok();
    ++n;
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(n, 24);
  EXPECT_EQ(accepted, 1);
}

TEST(RolloutSerialize, ShapesAndRoundTrip) {
  RolloutSequence r;
  r.reason = "why";
  r.answer.instances = {4};
  EXPECT_EQ(serialize_rollout(r), "<reason>why</reason><answer>{\"instances\":[4]}</answer>");
  r.plan = std::vector<ToolCall>{{"size", Json{{"id", 1}}}, {"size", Json{{"id", 2}}}, {"depth_rank", Json::object()}};
  r.results = R"({"frames":[]})";
  const std::string text = serialize_rollout(r);
  const auto b = text.find("<plan>") + 6, e = text.find("</plan>");
  const Json plan = Json::parse(text.substr(b, e - b));
  ASSERT_TRUE(plan.is_array());
  EXPECT_EQ(plan.size(), 3u);

  std::mt19937_64 rng(17);
  for (int i = 0; i < 2000; ++i) {
    const auto seq = rollout_gen::random_rollout(rng);
    const auto out = parse_rollout(serialize_rollout(seq));
    ASSERT_TRUE(out.ok()) << serialize_rollout(seq);
    ASSERT_EQ(out.rollout(), seq);
  }
}

TEST(RolloutSerialize, RejectsUnrepresentable) {
  RolloutSequence r;
  r.answer.instances = {1};
  r.reason = "a</reason>b";
  EXPECT_THROW(serialize_rollout(r), ValidationError);
  r.reason = "ok";
  r.plan = std::vector<ToolCall>{};
  r.results = "{}";
  EXPECT_THROW(serialize_rollout(r), ValidationError);
  r.plan = std::vector<ToolCall>{{"t", Json::object()}};
  r.results.reset();
  EXPECT_THROW(serialize_rollout(r), ValidationError);
}

TEST(RolloutFuzz, TotalAndConsistent) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 20000; ++i) {
    const std::string input = rollout_gen::fuzz_input(rng);
    const auto out = parse_rollout(input);
    if (out.ok()) {
      const auto again = parse_rollout(serialize_rollout(out.rollout()));
      ASSERT_TRUE(again.ok());
      ASSERT_EQ(again.rollout(), out.rollout());
    } else {
      ASSERT_LE(out.error().offset, input.size());
    }
  }
}

TEST(PauseScan, Examples) {
  const std::string prefix = kReason + kPlan;
  const auto scan = scan_for_pause(prefix);
  ASSERT_TRUE(scan.paused_at.has_value());
  EXPECT_EQ(*scan.paused_at, prefix.size() - 1);
  EXPECT_EQ(prefix[*scan.paused_at], '>');

  EXPECT_FALSE(scan_for_pause(kReason).paused_at.has_value());
  EXPECT_FALSE(scan_for_pause("<reason>thinking").paused_at.has_value());

  const auto stray = scan_for_pause("<reason>a</plan>b</reason>");
  EXPECT_FALSE(stray.paused_at.has_value());
  EXPECT_EQ(stray.anomalies.size(), 1u);
  EXPECT_FALSE(scan_for_pause(kReason + kPlan + kResults).paused_at.has_value());
}

TEST(Splice, RoundTripThroughParse) {
  const auto twin = one_instance_twin();
  const std::string prefix = kReason + kPlan;
  const std::string spliced = splice_results(prefix, twin);
  const auto out = parse_rollout(spliced + kAnswer);
  ASSERT_TRUE(out.ok());
  EXPECT_EQ(parse_twin(*out.rollout().results), twin);
  EXPECT_THROW(splice_results(spliced, twin), ValidationError);
  EXPECT_THROW(splice_results(kReason, twin), ValidationError);
}

TEST(Splice, EmptyTwinIsValid) {
  TwinSequence empty;
  empty.frames = {TwinFrame{1, {}}, TwinFrame{2, {}}};
  const std::string text = splice_results(kReason + kPlan, empty) + "<answer>{\"instances\":[],\"no_target\":true}</answer>";
  const auto out = parse_rollout(text);
  ASSERT_TRUE(out.ok());
  EXPECT_TRUE(out.rollout().answer.no_target);
  EXPECT_EQ(parse_twin(*out.rollout().results).frames.size(), 2u);
}

TEST(Extract, LenientHelpers) {
  EXPECT_EQ(extract_reason("junk<reason>because</reason><answer>"), "because");
  EXPECT_FALSE(extract_reason("<reason>open").has_value());
  const auto plan = extract_plan(kReason + kPlan);
  ASSERT_TRUE(plan.has_value());
  EXPECT_EQ(plan->front().args["id"], 1);
}
