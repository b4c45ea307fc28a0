#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "twinseg/distill.hpp"

using namespace twinseg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run cli(const std::vector<std::string>& args) {
  static const fs::path err_dir = testing_support::temp_dir("cli_stderr");
  const fs::path err_file = err_dir / "stderr.txt";
  std::string cmd = quote(TWINSEG_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>" + quote(err_file.string());
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

const fs::path kData = TWINSEG_TEST_DATA;

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST(Cli, HelpMatchesGoldenFiles) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> pages = {
      {"main", {"--help"}},
      {"twin_validate", {"twin", "validate", "--help"}},
      {"synth_gen", {"synth", "gen", "--help"}},
      {"rollout_parse", {"rollout", "parse", "--help"}},
      {"tools_list", {"tools", "list", "--help"}},
      {"collect", {"collect", "--help"}},
      {"eval", {"eval", "--help"}},
      {"sft_emit", {"sft", "emit", "--help"}},
      {"score", {"score", "--help"}},
      {"render", {"render", "--help"}}};
  for (const auto& [name, args] : pages) {
    const auto r = cli(args);
    EXPECT_EQ(r.code, 0) << name;
    EXPECT_EQ(r.out, slurp(kData / ".." / "golden" / ("help_" + name + ".txt"))) << name;
  }
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({"--bogus"}).code, 4);
  EXPECT_EQ(cli({}).code, 4);
  EXPECT_EQ(cli({"collect", "--policy", "oracle"}).code, 4);
  EXPECT_EQ(cli({"collect", "--policy", "nonsense", "--cases", (kData / "scenes").string(), "--out", "/dev/null"}).code, 4);
  EXPECT_EQ(cli({"twin", "validate", (kData / "no_such_file.json").string()}).code, 1);
  const auto schema = cli({"twin", "validate", (kData / "twin_schema_v9.json").string()});
  EXPECT_EQ(schema.code, 2);
  EXPECT_NE(schema.err.find("schema"), std::string::npos) << schema.err;
  EXPECT_EQ(cli({"sft", "emit", "--records", (kData / "records_schema_v9.jsonl").string(), "--out", "/dev/null"}).code, 2);
  EXPECT_EQ(cli({"twin", "validate", (kData / "scenes" / "scene_0000" / "twin.json").string()}).code, 0);
}

TEST(Cli, BrokenRleNamesFrameAndInstance) {
  const auto r = cli({"twin", "validate", (kData / "twin_broken_rle.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("frames[1].instances[0]"), std::string::npos) << r.err;
}

TEST(Cli, SftEmitFiltersFixtureRecords) {
  const auto dir = testing_support::temp_dir("cli_sft");
  const auto r = cli({"sft", "emit", "--records", (kData / "records_j06_j08.jsonl").string(), "--min-iou", "0.7", "--out",
                      (dir / "sft.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(slurp(dir / "sft.jsonl"));
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_TRUE(parse_rollout(Json::parse(lines[0])["completion"].get<std::string>()).ok());

  const auto none = cli({"sft", "emit", "--records", (kData / "records_j06_j08.jsonl").string(), "--min-iou", "0.9",
                         "--out", (dir / "none.jsonl").string()});
  EXPECT_EQ(none.code, 0);
  EXPECT_NE(none.err.find("warning"), std::string::npos);
  EXPECT_TRUE(lines_of(slurp(dir / "none.jsonl")).empty());
  fs::remove_all(dir);
}

TEST(Cli, OracleEvalOnShippedScenes) {
  const auto dir = testing_support::temp_dir("cli_eval");
  const auto r = cli({"eval", "--policy", "oracle", "--cases", (kData / "scenes").string(), "--report", (dir / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json report = Json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(report["J"], 1.0);
  EXPECT_EQ(report["F"], 1.0);
  EXPECT_EQ(report["cIoU"], 1.0);
  for (const auto& [cat, b] : report["per_category"].items()) EXPECT_EQ(b["J"], 1.0) << cat;

  const auto empty = cli({"eval", "--policy", "empty", "--cases", (kData / "scenes").string(), "--report", (dir / "empty.json").string()});
  ASSERT_EQ(empty.code, 0);
  EXPECT_EQ(Json::parse(slurp(dir / "empty.json"))["J"], 0.0);
  fs::remove_all(dir);
}

TEST(Cli, RolloutParseJsonl) {
  const auto r = cli({"rollout", "parse", (kData / "rollouts.jsonl").string()});
  EXPECT_EQ(r.code, 2);
  const auto lines = lines_of(r.out);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(Json::parse(lines[0])["ok"], true);
  EXPECT_EQ(Json::parse(lines[1])["ok"], true);
  EXPECT_EQ(Json::parse(lines[2])["kind"], "wrong-order");
}

TEST(Cli, ToolsList) {
  const auto r = cli({"tools", "list", "--json"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(Json::parse(r.out), standard_tools().manifest());
}

TEST(Cli, SynthCollectScoreDeterministic) {
  const auto dir = testing_support::temp_dir("cli_det");
  for (const char* run : {"a", "b"}) {
    const fs::path d = dir / run;
    ASSERT_EQ(cli({"synth", "gen", "--seed", "5", "--n-scenes", "8", "--out", (d / "scenes").string()}).code, 0);
    ASSERT_EQ(cli({"collect", "--policy", "oracle", "--cases", (d / "scenes").string(), "--out", (d / "teacher.jsonl").string()}).code, 0);
    ASSERT_EQ(cli({"collect", "--policy", "random:3", "--role", "student", "--samples", "4", "--workers", "3", "--cases",
                   (d / "scenes").string(), "--out", (d / "student.jsonl").string()})
                  .code,
              0);
    ASSERT_EQ(cli({"score", "--records", (d / "student.jsonl").string(), "--teacher-records", (d / "teacher.jsonl").string(),
                   "--group-size", "4", "--out", (d / "train.jsonl").string()})
                  .code,
              0);
  }
  for (const char* f : {"scenes/queries.jsonl", "scenes/scene_0003/twin.json", "teacher.jsonl", "student.jsonl", "train.jsonl"}) {
    const auto a = slurp(dir / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir / "b" / f)) << f;
  }
  const auto train = lines_of(slurp(dir / "a" / "train.jsonl"));
  for (const auto& l : train) {
    const Json j = Json::parse(l);
    for (const char* key : {"prompt", "completion", "reward", "advantage", "group_id"}) EXPECT_TRUE(j.contains(key)) << key;
  }
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileAndOverrides) {
  const auto dir = testing_support::temp_dir("cli_cfg");
  write_text_file(dir / "cfg.json", R"({"gamma": -1})");
  EXPECT_EQ(cli({"--config", (dir / "cfg.json").string(), "tools", "list"}).code, 2);
  write_text_file(dir / "cfg.json", R"({"group_size": 1})");
  EXPECT_EQ(cli({"--config", (dir / "cfg.json").string(), "tools", "list"}).code, 2);
  write_text_file(dir / "cfg.json", R"({"seed": 5, "workers": 2, "boundary_tolerance": 2})");
  ASSERT_EQ(cli({"--config", (dir / "cfg.json").string(), "synth", "gen", "--n-scenes", "3", "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"synth", "gen", "--seed", "5", "--n-scenes", "3", "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "queries.jsonl"), slurp(dir / "b" / "queries.jsonl"));
  write_text_file(dir / "cfg.json", "[1, 2]");
  EXPECT_EQ(cli({"--config", (dir / "cfg.json").string(), "tools", "list"}).code, 2);
  EXPECT_EQ(cli({"collect", "--policy", "http", "--cases", (kData / "scenes").string(), "--out", (dir / "x.jsonl").string()}).code, 4);
  fs::remove_all(dir);
}

TEST(Cli, HttpPolicyUnreachableIsBackendFailure) {
  const auto dir = testing_support::temp_dir("cli_http");
  const auto r = cli({"eval", "--policy", "http", "--endpoint", "http://127.0.0.1:1/v1", "--model", "m", "--cases",
                      (kData / "scenes").string(), "--report", (dir / "r.json").string()});
  EXPECT_EQ(r.code, 3);
  fs::remove_all(dir);
}

TEST(Cli, RenderWritesOverlays) {
  const auto dir = testing_support::temp_dir("cli_render");
  const auto cases = load_cases(kData / "scenes");
  const auto& c = cases.front();
  Json ids = c.query.gt_ids;
  const auto r = cli({"render", "--twin", (kData / "scenes" / c.twin_ref).string(), "--answer", Json{{"instances", ids}}.dump(),
                      "--out", dir.string(), "--cases", (kData / "scenes").string(), "--query-id", c.query.query_id});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(dir)) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, c.twin->frames.size());
  EXPECT_EQ(cli({"render", "--twin", (kData / "scenes" / c.twin_ref).string(), "--answer", "{\"ids\":[1]}", "--out", dir.string()}).code, 2);
  fs::remove_all(dir);
}
