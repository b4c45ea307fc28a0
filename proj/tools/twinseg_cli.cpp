// twinseg command line: twin validation, synthetic data, rollout collection,
// SFT export, student scoring, evaluation and overlays.
//
// Exit codes: 0 ok, 1 operational error, 2 invalid input, 3 backend failure,
// 4 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "twinseg/distill.hpp"
#include "twinseg/render.hpp"

namespace fs = std::filesystem;
using namespace twinseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOperational = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitBackend = 3;
constexpr int kExitUsage = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Settings shared by several subcommands; a --config file fills these first
// and explicit flags override it.
struct Settings {
  Endpoint policy_endpoint{"", "", "TWINSEG_POLICY_TOKEN", 120};
  double policy_temperature = 0.7;
  int policy_max_tokens = 1024;
  JudgeConfig judge;
  double gamma = kDefaultGamma;
  int group_size = 8;
  int workers = 1;
  std::optional<int> boundary_tolerance;  // pixels; default scales with the image diagonal
  std::optional<std::uint64_t> seed;

  Settings() { judge.endpoint.token_env = "TWINSEG_JUDGE_TOKEN"; }

  void validate() const {
    if (boundary_tolerance && *boundary_tolerance < 0) throw ValidationError("boundary_tolerance", "must be >= 0");
    if (!(gamma >= 0.0)) throw ValidationError("gamma", "must be non-negative");
    if (group_size < 2) throw ValidationError("group_size", "must be >= 2");
    if (workers < 1) throw ValidationError("workers", "must be >= 1");
    judge.validate();
  }
};

Endpoint endpoint_from_json(const Json& j, Endpoint ep) {
  ep.base_url = j.value("base_url", ep.base_url);
  ep.model = j.value("model", ep.model);
  ep.token_env = j.value("token_env", ep.token_env);
  ep.timeout_s = j.value("timeout_s", ep.timeout_s);
  return ep;
}

void load_config(const fs::path& path, Settings& s) {
  const Json j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError(path.string(), "config must be a JSON object");
  try {
    if (auto p = j.find("policy"); p != j.end()) {
      s.policy_endpoint = endpoint_from_json(*p, s.policy_endpoint);
      s.policy_temperature = p->value("temperature", s.policy_temperature);
      s.policy_max_tokens = p->value("max_tokens", s.policy_max_tokens);
    }
    if (auto p = j.find("judge"); p != j.end()) {
      s.judge.endpoint = endpoint_from_json(*p, s.judge.endpoint);
      s.judge.temperature = p->value("temperature", s.judge.temperature);
      s.judge.max_tokens = p->value("max_tokens", s.judge.max_tokens);
      s.judge.max_attempts = p->value("max_attempts", s.judge.max_attempts);
      s.judge.backoff_ms = p->value("backoff_ms", s.judge.backoff_ms);
      if (auto t = p->find("template_file"); t != p->end()) {
        const fs::path tp = t->get<std::string>();
        s.judge.template_text = read_text_file(tp.is_absolute() ? tp : path.parent_path() / tp);
        s.judge.template_id = tp.stem().string();
      }
    }
    s.gamma = j.value("gamma", s.gamma);
    s.group_size = j.value("group_size", s.group_size);
    s.workers = j.value("workers", s.workers);
    if (auto t = j.find("boundary_tolerance"); t != j.end()) s.boundary_tolerance = t->get<int>();
    if (auto t = j.find("seed"); t != j.end()) s.seed = t->get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw ValidationError(path.string(), e.what());
  }
}

std::unique_ptr<PolicyBackend> make_policy(const std::string& spec, const Settings& s) {
  if (spec == "oracle") return std::make_unique<OraclePolicy>();
  if (spec == "empty") return std::make_unique<EmptyAnswerPolicy>();
  if (spec == "random") return std::make_unique<RandomAnswerPolicy>(s.seed.value_or(0));
  if (spec.starts_with("random:")) {
    const auto digits = spec.substr(7);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) throw UsageError("bad seed in '" + spec + "'");
    return std::make_unique<RandomAnswerPolicy>(std::stoull(digits));
  }
  if (spec.starts_with("replay:")) return std::make_unique<ReplayPolicy>(ReplayPolicy::from_jsonl(spec.substr(7)));
  if (spec == "http") {
    if (s.policy_endpoint.base_url.empty()) throw UsageError("--policy http needs policy.base_url in --config or --endpoint");
    return std::make_unique<HttpPolicy>(s.policy_endpoint, s.policy_temperature, s.policy_max_tokens);
  }
  throw UsageError("unknown policy '" + spec + "' (oracle, empty, random[:seed], replay:<file>, http)");
}

void print_summary(const Json& report) {
  std::printf("n=%zu J=%.4f F=%.4f JF=%.4f gIoU=%.4f cIoU=%.4f\n", report["n"].get<std::size_t>(), report["J"].get<double>(),
              report["F"].get<double>(), report["JF"].get<double>(), report["gIoU"].get<double>(),
              report["cIoU"].get<double>());
  for (const auto& [cat, b] : report["per_category"].items()) {
    std::printf("  %-9s n=%zu J=%.4f F=%.4f\n", cat.c_str(), b["n"].get<std::size_t>(), b["J"].get<double>(),
                b["F"].get<double>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digital-twin reasoning segmentation: data, rollouts, rewards and evaluation."};
  app.name("twinseg");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Settings settings;
  std::string config_path;
  app.add_option("--config", config_path, "JSON settings file (flags override it)");

  // twin validate
  auto* twin_cmd = app.add_subcommand("twin", "Digital-twin files")->require_subcommand(1);
  auto* validate_cmd = twin_cmd->add_subcommand("validate", "Check a twin JSON file against the schema");
  std::string twin_file;
  validate_cmd->add_option("file", twin_file, "Twin JSON file")->required();

  // synth gen
  auto* synth_cmd = app.add_subcommand("synth", "Synthetic scenes with exact ground truth")->require_subcommand(1);
  auto* gen_cmd = synth_cmd->add_subcommand("gen", "Generate scenes, twins, queries and ground-truth masks");
  std::uint64_t seed = 0;
  int n_scenes = 10;
  std::string synth_out;
  auto* seed_opt = gen_cmd->add_option("--seed", seed, "Generator seed (default 0, or seed from --config)");
  gen_cmd->add_option("--n-scenes", n_scenes, "Number of scenes")->default_val(10)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--out", synth_out, "Output directory")->required();

  // rollout parse
  auto* rollout_cmd = app.add_subcommand("rollout", "Rollout text")->require_subcommand(1);
  auto* parse_cmd = rollout_cmd->add_subcommand("parse", "Parse a rollout and print its structure as JSON");
  std::string rollout_file;
  parse_cmd->add_option("file", rollout_file, "Rollout text, a .jsonl of rollouts, or - for stdin")->required();

  // tools list
  auto* tools_cmd = app.add_subcommand("tools", "Tool registry")->require_subcommand(1);
  auto* list_cmd = tools_cmd->add_subcommand("list", "List registered tools");
  bool list_json = false;
  list_cmd->add_flag("--json", list_json, "Print the JSON manifest");

  // collect / eval share policy and case options
  std::string policy_spec, cases_dir, endpoint_url, model_name;
  bool static_twin = false, timing = false;
  int samples = 1;
  std::optional<int> workers_flag;
  std::string role = "teacher";
  auto* collect_cmd = app.add_subcommand("collect", "Generate rollouts for every case and write scored records");
  std::string collect_out;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy and write a metrics report");
  std::string report_out, eval_records_out;
  for (auto* cmd : {collect_cmd, eval_cmd}) {
    cmd->add_option("--policy", policy_spec, "oracle | empty | random[:seed] | replay:<file> | http")->required();
    cmd->add_option("--cases", cases_dir, "Case directory holding queries.jsonl")->required();
    cmd->add_flag("--static-twin", static_twin, "Splice the unrefined twin instead of running tools");
    cmd->add_option("--workers", workers_flag, "Concurrent rollouts")->check(CLI::PositiveNumber);
    cmd->add_option("--endpoint", endpoint_url, "Chat-completions base URL for --policy http");
    cmd->add_option("--model", model_name, "Model name for --policy http");
    cmd->add_flag("--timing", timing, "Record wall-clock timings in each record");
  }
  collect_cmd->add_option("--out", collect_out, "Output records JSONL (resumed when present)")->required();
  collect_cmd->add_option("--samples", samples, "Rollouts per case")->default_val(1)->check(CLI::PositiveNumber);
  collect_cmd->add_option("--role", role, "Reward role")->default_val("teacher")->check(CLI::IsMember({"teacher", "student"}));
  eval_cmd->add_option("--report", report_out, "Report JSON path")->required();
  eval_cmd->add_option("--records-out", eval_records_out, "Also write the per-case records");

  // sft emit
  auto* sft_cmd = app.add_subcommand("sft", "Supervised fine-tuning data")->require_subcommand(1);
  auto* emit_cmd = sft_cmd->add_subcommand("emit", "Keep teacher rollouts above an IoU threshold as SFT examples");
  std::string sft_records, sft_out;
  double min_iou = kSftMinIou;
  emit_cmd->add_option("--records", sft_records, "Teacher records JSONL")->required();
  emit_cmd->add_option("--min-iou", min_iou, "Keep rollouts whose J strictly exceeds this")->default_val(kSftMinIou);
  emit_cmd->add_option("--out", sft_out, "SFT JSONL output")->required();

  // score
  auto* score_cmd = app.add_subcommand("score", "Score student rollouts and compute group-relative advantages");
  std::string score_records, teacher_records, judge_kind = "overlap", score_out, scored_records_out;
  std::optional<double> gamma_flag;
  std::optional<int> group_flag;
  bool no_format = false, no_accuracy = false, no_reasoning = false;
  score_cmd->add_option("--records", score_records, "Student records JSONL")->required();
  score_cmd->add_option("--teacher-records", teacher_records, "Teacher records JSONL")->required();
  score_cmd->add_option("--judge", judge_kind, "overlap | http")->default_val("overlap")->check(CLI::IsMember({"overlap", "http"}));
  score_cmd->add_option("--gamma", gamma_flag, "Weight of the reasoning reward (default 0.5)");
  score_cmd->add_option("--group-size", group_flag, "Rollouts per advantage group (default 8)");
  score_cmd->add_option("--workers", workers_flag, "Concurrent judge calls")->check(CLI::PositiveNumber);
  score_cmd->add_flag("--no-format", no_format, "Drop the format term");
  score_cmd->add_flag("--no-accuracy", no_accuracy, "Drop the accuracy term");
  score_cmd->add_flag("--no-reasoning", no_reasoning, "Drop the reasoning term");
  score_cmd->add_option("--out", score_out, "Training JSONL output")->required();
  score_cmd->add_option("--records-out", scored_records_out, "Also write the scored records");

  // render
  auto* render_cmd = app.add_subcommand("render", "Write per-frame overlay PNGs for an answer");
  std::string render_twin, answer_text, render_out, render_cases, render_query;
  render_cmd->add_option("--twin", render_twin, "Twin JSON file")->required();
  render_cmd->add_option("--answer", answer_text, "Answer JSON, e.g. {\"instances\":[2]}")->required();
  render_cmd->add_option("--out", render_out, "Output directory")->required();
  render_cmd->add_option("--cases", render_cases, "Case directory, to draw ground truth");
  render_cmd->add_option("--query-id", render_query, "Query whose ground truth is drawn")->needs("--cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (!config_path.empty()) load_config(config_path, settings);
    if (workers_flag) settings.workers = *workers_flag;
    if (gamma_flag) settings.gamma = *gamma_flag;
    if (group_flag) settings.group_size = *group_flag;
    if (!endpoint_url.empty()) settings.policy_endpoint.base_url = endpoint_url;
    if (!model_name.empty()) settings.policy_endpoint.model = model_name;
    settings.validate();

    if (validate_cmd->parsed()) {
      const auto twin = load_twin_file(twin_file);
      std::size_t n = 0;
      for (const auto& f : twin.frames) n += f.instances.size();
      std::printf("ok: %zu frames, %zu instance records, %zu ids\n", twin.frames.size(), n, twin.instance_ids().size());
      return kExitOk;
    }

    if (gen_cmd->parsed()) {
      if (seed_opt->count() == 0) seed = settings.seed.value_or(0);
      fs::create_directories(synth_out);
      std::vector<std::string> lines;
      std::size_t n_queries = 0;
      for (int i = 0; i < n_scenes; ++i) {
        const auto scene = generate(random_scene(seed, i));
        for (auto& l : write_scene(synth_out, scene)) lines.push_back(std::move(l));
        n_queries += scene.queries.size();
      }
      write_lines(fs::path(synth_out) / "queries.jsonl", lines);
      std::printf("wrote %d scenes, %zu queries to %s\n", n_scenes, n_queries, synth_out.c_str());
      return kExitOk;
    }

    if (parse_cmd->parsed()) {
      // A .jsonl input holds one rollout per line, either as a JSON string or
      // an object with "rollout" or "rollout_text"; anything else is one rollout.
      const std::string text = rollout_file == "-"
                                   ? std::string(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>())
                                   : read_text_file(rollout_file);
      std::vector<std::string> rollouts;
      if (rollout_file.ends_with(".jsonl")) {
        std::istringstream lines(text);
        std::string line;
        int n = 0;
        while (std::getline(lines, line)) {
          ++n;
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          const Json j = Json::parse(line, nullptr, false);
          if (j.is_string()) {
            rollouts.push_back(j.get<std::string>());
          } else if (j.is_object() && j.contains("rollout") && j["rollout"].is_string()) {
            rollouts.push_back(j["rollout"].get<std::string>());
          } else if (j.is_object() && j.contains("rollout_text") && j["rollout_text"].is_string()) {
            rollouts.push_back(j["rollout_text"].get<std::string>());
          } else {
            throw ValidationError(rollout_file + ":" + std::to_string(n), "expected a JSON string or an object with \"rollout\"");
          }
        }
      } else {
        rollouts.push_back(text);
      }
      bool all_ok = true;
      for (const auto& r : rollouts) {
        const auto outcome = parse_rollout(r);
        Json out{{"ok", outcome.ok()}};
        if (outcome.ok()) {
          const auto& seq = outcome.rollout();
          out["reason"] = seq.reason;
          out["plan"] = seq.plan ? plan_to_json(*seq.plan) : Json(nullptr);
          out["results_bytes"] = seq.results ? Json(seq.results->size()) : Json(nullptr);
          out["answer"] = answer_to_json(seq.answer);
        } else {
          all_ok = false;
          const auto& e = outcome.error();
          out["kind"] = std::string(to_string(e.kind));
          out["offset"] = e.offset;
          out["message"] = e.message;
        }
        std::cout << out.dump() << "\n";
      }
      return all_ok ? kExitOk : kExitInvalid;
    }

    if (list_cmd->parsed()) {
      const auto manifest = standard_tools().manifest();
      if (list_json) {
        std::cout << manifest.dump(2) << "\n";
      } else {
        for (const auto& t : manifest["tools"]) {
          std::string args;
          for (const auto& a : t["args"]) args += (args.empty() ? "" : ", ") + a["name"].get<std::string>();
          std::printf("%-17s (%s)  %s\n", t["name"].get<std::string>().c_str(), args.c_str(),
                      t["description"].get<std::string>().c_str());
        }
      }
      return kExitOk;
    }

    if (collect_cmd->parsed() || eval_cmd->parsed()) {
      auto policy = make_policy(policy_spec, settings);
      const auto cases = load_cases(cases_dir);
      CollectOptions opt;
      opt.static_twin = static_twin;
      opt.workers = settings.workers;
      opt.record_timing = timing;
      opt.gamma = settings.gamma;
      opt.boundary_tolerance = settings.boundary_tolerance;
      if (collect_cmd->parsed()) {
        opt.samples = samples;
        opt.role = role == "student" ? RewardRole::student : RewardRole::teacher;
        const auto run = collect_to_file(*policy, cases, opt, collect_out);
        std::printf("%zu records (%zu resumed, %zu backend failures) -> %s\n", run.records.size(), run.resumed, run.failed,
                    collect_out.c_str());
        return run.failed ? kExitBackend : kExitOk;
      }
      const auto run = run_eval(*policy, cases, opt);
      if (fs::path(report_out).has_parent_path()) fs::create_directories(fs::path(report_out).parent_path());
      write_text_file(report_out, run.report.dump(2) + "\n");
      if (!eval_records_out.empty()) {
        std::vector<std::string> lines;
        for (const auto& r : run.records) lines.push_back(record_to_json(r).dump());
        write_lines(eval_records_out, lines);
      }
      print_summary(run.report);
      return run.report["backend_failures"].get<std::size_t>() ? kExitBackend : kExitOk;
    }

    if (emit_cmd->parsed()) {
      const auto records = read_records(sft_records);
      const auto kept = reject_sample(records, min_iou);
      write_lines(sft_out, emit_sft(kept));
      if (kept.empty()) std::fprintf(stderr, "warning: no rollout has J above %.3f; %s is empty\n", min_iou, sft_out.c_str());
      std::printf("kept %zu of %zu rollouts -> %s\n", kept.size(), records.size(), sft_out.c_str());
      return kExitOk;
    }

    if (score_cmd->parsed()) {
      const auto students = read_records(score_records);
      const auto teachers = read_records(teacher_records);
      std::unique_ptr<JudgeBackend> judge;
      if (judge_kind == "http") {
        if (settings.judge.endpoint.base_url.empty()) throw UsageError("--judge http needs judge.base_url in --config");
        judge = std::make_unique<HttpJudge>(settings.judge.endpoint);
      } else {
        judge = std::make_unique<OverlapJudge>();
      }
      ScoreOptions opt;
      opt.gamma = settings.gamma;
      opt.group_size = settings.group_size;
      opt.workers = settings.workers;
      opt.judge = settings.judge;
      opt.toggles = {!no_format, !no_accuracy, !no_reasoning};
      const auto batch = score_student_batch(students, teachers, *judge, opt);
      write_lines(score_out, batch.training_lines);
      if (!scored_records_out.empty()) {
        std::vector<std::string> lines;
        for (const auto& r : batch.records) lines.push_back(record_to_json(r).dump());
        write_lines(scored_records_out, lines);
      }
      std::printf("scored %zu rollouts in %zu groups -> %s\n", batch.records.size(), batch.groups.size(), score_out.c_str());
      return kExitOk;
    }

    if (render_cmd->parsed()) {
      const auto twin = load_twin_file(render_twin);
      const Json aj = Json::parse(answer_text, nullptr, false);
      if (aj.is_discarded()) throw ValidationError("--answer", "malformed JSON");
      std::string why;
      const auto answer = answer_from_json(aj, &why);
      if (!answer) throw ValidationError("--answer", why);
      std::optional<FrameMasks> gt;
      std::string stem = "overlay";
      if (!render_cases.empty()) {
        for (const auto& c : load_cases(render_cases)) {
          if (c.query.query_id == render_query) gt = c.query.gt;
        }
        if (!gt) throw ValidationError("--query-id", "no case named '" + render_query + "'");
        stem = render_query;
      }
      const auto paths = render_overlays(render_out, stem, twin, *answer, gt ? &*gt : nullptr);
      std::printf("wrote %zu overlays to %s\n", paths.size(), render_out.c_str());
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitInvalid;
  } catch (const BackendError& e) {
    std::fprintf(stderr, "backend failure: %s\n", e.what());
    return kExitBackend;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOperational;
  }
  return kExitUsage;
}
