#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "twinseg/distill.hpp"

using namespace twinseg;

namespace {

std::vector<EvalCase> synthetic_cases(std::uint64_t seed, int scenes) {
  std::vector<SceneOutput> out;
  for (int i = 0; i < scenes; ++i) out.push_back(generate(random_scene(seed, i)));
  return cases_from_scenes(out);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RolloutRecord record(std::string qid, int id, std::string rollout, double accuracy = 0.0) {
  RolloutRecord r;
  r.query_id = std::move(qid);
  r.rollout_id = id;
  r.prompt = "prompt for " + r.query_id;
  r.rollout = std::move(rollout);
  const auto out = parse_rollout(r.rollout);
  if (!out.ok()) r.parse_error = out.error();
  r.reward.accuracy = accuracy;
  return r;
}

const std::string kTeacherText =
    "<reason>The red disc is nearest because its mean depth is lowest.</reason><answer>{\"instances\":[2]}</answer>";

// Counts first-turn generations (the rollouts actually started).
class CountingPolicy : public PolicyBackend {
 public:
  std::string generate(const GenerationRequest& req) override {
    const auto parts = split_prompt(req.context);
    if (parts && parts->rollout.empty()) ++started;
    return inner.generate(req);
  }
  std::string name() const override { return inner.name(); }
  OraclePolicy inner;
  std::atomic<int> started{0};
};

}  // namespace

TEST(Collect, OracleScoresFullMarks) {
  auto cases = synthetic_cases(3, 25);
  ASSERT_GE(cases.size(), 50u);
  cases.resize(50);
  OraclePolicy oracle;
  const auto records = collect(oracle, cases);
  ASSERT_EQ(records.size(), 50u);
  for (const auto& r : records) {
    EXPECT_TRUE(r.parse_ok()) << r.rollout;
    EXPECT_EQ(r.reward.format, 0.5);
    EXPECT_EQ(r.reward.accuracy, 1.0) << r.query << "\n" << r.rollout;
    EXPECT_EQ(r.reward.total, 1.5);
    EXPECT_EQ(*r.j, 1.0);
    EXPECT_EQ(*r.f, 1.0);
    EXPECT_EQ(r.intersection, r.union_);
  }
}

TEST(Collect, OracleUsesToolsForSpatialAndTemporal) {
  const auto cases = synthetic_cases(5, 30);
  OraclePolicy oracle;
  int planned = 0;
  for (const auto& c : cases) {
    const auto r = run_rollout(oracle, c, 0, {});
    const auto out = parse_rollout(r.rollout);
    ASSERT_TRUE(out.ok());
    if (c.query.category == QueryCategory::semantic) {
      EXPECT_FALSE(out.rollout().plan.has_value());
    } else {
      ASSERT_TRUE(out.rollout().plan.has_value()) << c.query.text;
      ASSERT_EQ(r.execution.size(), out.rollout().plan->size());
      for (const auto& call : r.execution) EXPECT_TRUE(call.ok) << call.tool << " " << call.reason;
      ++planned;
    }
  }
  EXPECT_GT(planned, 10);
}

TEST(Collect, RandomPolicyHitsAtChanceRate) {
  const auto cases = synthetic_cases(11, 500);
  std::vector<EvalCase> single;
  for (const auto& c : cases) {
    if (c.query.gt_ids.size() == 1) single.push_back(c);
  }
  ASSERT_GE(single.size(), 1000u);
  single.resize(1000);
  RandomAnswerPolicy policy(9);
  const auto records = collect(policy, single, {.workers = 4});
  // Each case hits with probability 1/n (n instances, disjoint shapes).
  double expected = 0.0, var = 0.0, hits = 0.0;
  for (std::size_t i = 0; i < single.size(); ++i) {
    const double p = 1.0 / static_cast<double>(single[i].twin->instance_ids().size());
    expected += p;
    var += p * (1.0 - p);
    hits += records[i].reward.accuracy;
    EXPECT_EQ(records[i].reward.format, 0.5);
  }
  EXPECT_LE(std::abs(hits - expected), 3.0 * std::sqrt(var)) << hits << " vs " << expected;

  RandomAnswerPolicy again(9);
  const auto repeat = collect(again, single, {.workers = 2});
  for (std::size_t i = 0; i < records.size(); ++i) ASSERT_EQ(repeat[i].rollout, records[i].rollout);
}

TEST(Collect, GarbageScoresFloor) {
  const auto cases = synthetic_cases(2, 5);
  FixedTextPolicy garbage("I think it is the cup.");
  for (const auto& r : collect(garbage, cases)) {
    EXPECT_FALSE(r.parse_ok());
    EXPECT_EQ(r.reward.format, -0.5);
    EXPECT_EQ(r.reward.accuracy, 0.0);
    EXPECT_EQ(r.reward.total, -0.5);
    EXPECT_EQ(*r.j, 0.0);
  }
}

TEST(Collect, EmptyPolicyScoresZero) {
  const auto cases = synthetic_cases(2, 10);
  EmptyAnswerPolicy empty;
  const auto run = run_eval(empty, cases);
  EXPECT_EQ(run.report["J"], 0.0);
  EXPECT_EQ(run.report["parse_failures"], 0);
}

TEST(Collect, BackendFailureIsRecorded) {
  const auto cases = synthetic_cases(2, 2);
  ReplayPolicy none({});
  const auto records = collect(none, cases);
  for (const auto& r : records) {
    ASSERT_TRUE(r.failure.has_value());
    EXPECT_TRUE(r.rollout.empty());
    EXPECT_EQ(r.reward.total, -0.5);
  }
  EXPECT_EQ(eval_report(records, "replay", false)["backend_failures"], records.size());
}

TEST(Collect, StaticTwinAblation) {
  const auto all = synthetic_cases(13, 60);
  std::vector<EvalCase> spatial;
  for (const auto& c : all) {
    if (c.query.category == QueryCategory::spatial) spatial.push_back(c);
  }
  ASSERT_GE(spatial.size(), 20u);
  OraclePolicy oracle;
  const auto refined = run_eval(oracle, spatial);
  const auto frozen = run_eval(oracle, spatial, {.static_twin = true});
  EXPECT_EQ(refined.report["J"], 1.0);
  EXPECT_LT(frozen.report["J"].get<double>(), refined.report["J"].get<double>());
  EXPECT_TRUE(frozen.report["static_twin"].get<bool>());
  for (const auto& r : frozen.records) EXPECT_TRUE(r.execution.empty());
}

TEST(Records, JsonRoundTrip) {
  const auto cases = synthetic_cases(4, 6);
  OraclePolicy oracle;
  for (const auto& r : collect(oracle, cases, {.record_timing = true})) {
    const Json j = record_to_json(r);
    EXPECT_TRUE(j.contains("timing_ms"));
    const auto back = record_from_json(j);
    EXPECT_EQ(record_to_json(back).dump(), j.dump());
  }
  Json bad = record_to_json(collect(oracle, cases).front());
  bad["schema_version"] = 2;
  EXPECT_THROW(record_from_json(bad), SchemaVersionError);
  bad["schema_version"] = 1;
  bad["j"] = nullptr;
  EXPECT_FALSE(record_from_json(bad).j.has_value());
}

TEST(Distill, RejectSamplingThreshold) {
  std::vector<RolloutRecord> recs;
  for (std::optional<double> j : {std::optional<double>(0.9), std::optional<double>(0.7), std::optional<double>(0.71),
                                  std::optional<double>()}) {
    recs.push_back(record("q", static_cast<int>(recs.size()), kTeacherText));
    recs.back().j = j;
  }
  recs.push_back(record("q", 4, "<reason>x</reason>"));
  recs.back().j = 0.95;
  recs.push_back(record("q", 5, kTeacherText));
  recs.back().j = 0.95;
  recs.back().failure = "timeout";
  const auto kept = reject_sample(recs);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].rollout_id, 0);
  EXPECT_EQ(kept[1].rollout_id, 2);

  std::vector<RolloutRecord> edge;
  for (double j : {0.69, 0.70, 0.71}) {
    edge.push_back(record("e", static_cast<int>(edge.size()), kTeacherText));
    edge.back().j = j;
  }
  const auto edge_kept = reject_sample(edge, 0.7);
  ASSERT_EQ(edge_kept.size(), 1u);
  EXPECT_EQ(*edge_kept[0].j, 0.71);
}

TEST(Distill, SftLinesReparse) {
  const auto cases = synthetic_cases(6, 20);
  OraclePolicy oracle;
  const auto kept = reject_sample(collect(oracle, cases));
  ASSERT_EQ(kept.size(), cases.size());
  const auto lines = emit_sft(kept);
  ASSERT_EQ(lines.size(), kept.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Json j = Json::parse(lines[i]);
    EXPECT_TRUE(parse_rollout(j["completion"].get<std::string>()).ok());
    EXPECT_EQ(j["prompt"], kept[i].prompt);
    EXPECT_EQ(j["query_id"], kept[i].query_id);
  }
  auto broken = kept;
  broken[3].rollout = "<reason>oops";
  EXPECT_THROW(emit_sft(broken), ValidationError);
}

TEST(Distill, TeacherEchoGetsTopAdvantage) {
  const std::vector<RolloutRecord> teachers = {record("q1", 0, kTeacherText, 1.0)};
  std::vector<RolloutRecord> students = {record("q1", 0, "no tags at all"), record("q1", 1, kTeacherText, 1.0),
                                         record("q1", 2, "<reason>x</reason><answer>{}</answer>"),
                                         record("q1", 3, "<answer>{\"instances\":[2]}</answer><reason>late</reason>")};
  OverlapJudge judge;
  const auto batch = score_student_batch(students, teachers, judge, {});
  ASSERT_EQ(batch.records.size(), 4u);
  EXPECT_DOUBLE_EQ(batch.records[1].reward.total, 0.5 + 1.0 + 0.5 * 1.0);
  EXPECT_EQ(*batch.records[1].reward.reasoning, 1.0);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    if (*batch.records[i].advantage > *batch.records[best].advantage) best = i;
  }
  EXPECT_EQ(best, 1u);
  ASSERT_EQ(batch.groups.size(), 1u);
  EXPECT_EQ(*batch.records[0].group_id, "q1#0");
  const Json line = Json::parse(batch.training_lines[1]);
  EXPECT_EQ(line["completion"], kTeacherText);
  EXPECT_DOUBLE_EQ(line["reward"].get<double>(), 2.0);
  for (const char* key : {"prompt", "advantage", "group_id", "env_spans"}) EXPECT_TRUE(line.contains(key));
}

TEST(Distill, IdenticalRolloutsHaveZeroAdvantage) {
  const std::vector<RolloutRecord> teachers = {record("q", 0, kTeacherText, 1.0)};
  std::vector<RolloutRecord> students;
  for (int i = 0; i < 5; ++i) students.push_back(record("q", i, kTeacherText, 1.0));
  OverlapJudge judge;
  const auto batch = score_student_batch(students, teachers, judge, {});
  for (const auto& r : batch.records) EXPECT_EQ(*r.advantage, 0.0);
}

TEST(Distill, GammaAndToggles) {
  const std::vector<RolloutRecord> teachers = {record("q", 0, kTeacherText, 1.0)};
  const std::vector<RolloutRecord> students = {record("q", 0, "<reason>depth</reason><answer>{\"instances\":[2]}</answer>", 1.0),
                                               record("q", 1, kTeacherText, 1.0)};
  OverlapJudge judge;
  ScoreOptions zero;
  zero.gamma = 0.0;
  const auto flat = score_student_batch(students, teachers, judge, zero);
  EXPECT_EQ(flat.records[0].reward.total, 1.5);
  EXPECT_EQ(flat.records[1].reward.total, 1.5);
  EXPECT_EQ(*flat.records[0].advantage, 0.0);

  ScoreOptions no_reasoning;
  no_reasoning.toggles.reasoning = false;
  ScriptedJudge never({"!fail"});
  const auto skipped = score_student_batch(students, teachers, never, no_reasoning);
  EXPECT_EQ(never.calls(), 0);
  EXPECT_EQ(skipped.records[0].reward.total, 1.5);

  ScoreOptions with;
  const auto full = score_student_batch(students, teachers, judge, with);
  EXPECT_GT(full.records[1].reward.total, full.records[0].reward.total);
  EXPECT_THROW(score_student_batch(students, {}, judge, with), ValidationError);
  EXPECT_THROW(score_student_batch({students[0]}, teachers, judge, with), ValidationError);
}

TEST(Distill, GroupingChunksPerQuery) {
  const std::vector<RolloutRecord> teachers = {record("a", 0, kTeacherText, 1.0), record("b", 0, kTeacherText, 1.0)};
  std::vector<RolloutRecord> students;
  for (int i = 0; i < 9; ++i) students.push_back(record("a", i, i % 2 ? kTeacherText : "bad", i % 2 ? 1.0 : 0.0));
  for (int i = 0; i < 6; ++i) students.push_back(record("b", i, i % 3 ? kTeacherText : "bad", i % 3 ? 1.0 : 0.0));
  OverlapJudge judge;
  ScoreOptions opt;
  opt.group_size = 4;
  const auto batch = score_student_batch(students, teachers, judge, opt);
  std::map<std::string, int> sizes;
  for (const auto& r : batch.records) ++sizes[*r.group_id];
  // 9 = 4 + 5 (lone leftover merged); 6 = 4 + 2.
  EXPECT_EQ(sizes, (std::map<std::string, int>{{"a#0", 4}, {"a#1", 5}, {"b#0", 4}, {"b#1", 2}}));
  for (const auto& g : batch.groups) {
    double sum = 0.0;
    for (double a : g.advantages) sum += a;
    EXPECT_LT(std::abs(sum), 1e-9);
  }
}

TEST(Distill, ScoringIsIdempotent) {
  const auto cases = synthetic_cases(8, 6);
  OraclePolicy oracle;
  RandomAnswerPolicy random(1);
  const auto teachers = collect(oracle, cases);
  const auto students = collect(random, cases, {.role = RewardRole::student, .samples = 4});
  OverlapJudge judge;
  ScoreOptions opt;
  opt.workers = 3;
  const auto a = score_student_batch(students, teachers, judge, opt);
  const auto b = score_student_batch(students, teachers, judge, opt);
  EXPECT_EQ(a.training_lines, b.training_lines);
  // Rescoring scored records gives the same bytes again.
  const auto c = score_student_batch(a.records, teachers, judge, opt);
  EXPECT_EQ(a.training_lines, c.training_lines);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(record_to_json(a.records[i]).dump(), record_to_json(c.records[i]).dump());
  }
}

TEST(Distill, EnvSpansCoverResults) {
  const std::string text = kTeacherText.substr(0, 10) + "<results>{}</results>";
  const auto spans = env_spans(text);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0][0], 10);
  EXPECT_EQ(spans[0][1], text.size());
  EXPECT_TRUE(env_spans(kTeacherText).empty());
}

TEST(CollectToFile, ResumesFromPartialOutput) {
  const auto cases = synthetic_cases(9, 12);
  const auto dir = testing_support::temp_dir("resume");
  OraclePolicy oracle;
  const CollectOptions opt{.samples = 2};
  const auto full = collect_to_file(oracle, cases, opt, dir / "full.jsonl");
  EXPECT_EQ(full.resumed, 0u);
  const std::string expected = slurp(dir / "full.jsonl");
  const std::size_t total = cases.size() * 2;
  EXPECT_EQ(Json::parse(slurp(dir / "full.jsonl.ckpt")), (Json{{"schema_version", 1}, {"completed", total}, {"total", total}}));

  // Keep 7 complete lines plus half of the 8th, as after a crash.
  std::size_t cut = 0;
  for (int k = 0; k < 7; ++k) cut = expected.find('\n', cut) + 1;
  {
    std::ofstream out(dir / "partial.jsonl", std::ios::binary);
    out << expected.substr(0, cut) << expected.substr(cut, 40);
  }
  CountingPolicy counting;
  const auto resumed = collect_to_file(counting, cases, opt, dir / "partial.jsonl");
  EXPECT_EQ(resumed.resumed, 7u);
  EXPECT_EQ(counting.started.load(), static_cast<int>(total - 7));
  EXPECT_EQ(slurp(dir / "partial.jsonl"), expected);
  EXPECT_EQ(resumed.records.size(), total);

  // A finished file is left alone.
  CountingPolicy idle;
  EXPECT_EQ(collect_to_file(idle, cases, opt, dir / "full.jsonl").resumed, total);
  EXPECT_EQ(idle.started.load(), 0);
  EXPECT_EQ(slurp(dir / "full.jsonl"), expected);

  // Parallel workers write the same bytes in the same order.
  OraclePolicy again;
  collect_to_file(again, cases, {.samples = 2, .workers = 4}, dir / "parallel.jsonl");
  EXPECT_EQ(slurp(dir / "parallel.jsonl"), expected);
  std::filesystem::remove_all(dir);
}

TEST(Replay, ReproducesRecordedRollouts) {
  const auto cases = synthetic_cases(10, 15);
  OraclePolicy oracle;
  const auto original = collect(oracle, cases);
  const auto dir = testing_support::temp_dir("replay");
  {
    std::ofstream out(dir / "canned.jsonl");
    for (const auto& r : original) out << Json{{"query_id", r.query_id}, {"rollout_text", r.rollout}}.dump() << "\n";
  }
  auto replay = ReplayPolicy::from_jsonl(dir / "canned.jsonl");
  const auto again = collect(replay, cases);
  for (std::size_t i = 0; i < original.size(); ++i) {
    EXPECT_EQ(again[i].rollout, original[i].rollout);
    EXPECT_EQ(*again[i].j, 1.0);
  }
  std::filesystem::remove_all(dir);
}

TEST(LoadCases, ReadsWrittenScenes) {
  const auto dir = testing_support::temp_dir("cases");
  std::vector<std::string> lines;
  std::vector<SceneOutput> scenes;
  for (int i = 0; i < 4; ++i) {
    scenes.push_back(generate(random_scene(12, i)));
    for (auto& l : write_scene(dir, scenes.back())) lines.push_back(std::move(l));
  }
  write_lines(dir / "queries.jsonl", lines);
  const auto loaded = load_cases(dir);
  const auto direct = cases_from_scenes(scenes);
  ASSERT_EQ(loaded.size(), direct.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i].query.text, direct[i].query.text);
    EXPECT_EQ(loaded[i].query.kind, direct[i].query.kind);
    EXPECT_EQ(loaded[i].query.gt.t, direct[i].query.gt.t);
    EXPECT_EQ(loaded[i].query.gt.masks, direct[i].query.gt.masks);
    EXPECT_EQ(*loaded[i].twin, *direct[i].twin);
  }
  for (std::size_t i = 1; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i].twin_ref == loaded[i - 1].twin_ref, loaded[i].twin.get() == loaded[i - 1].twin.get());
  }
  std::filesystem::remove_all(dir);
}
