#pragma once

// Teacher rollout collection, rejection sampling, SFT export, student scoring
// and evaluation over a case set.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/judge.hpp"
#include "twinseg/metrics.hpp"
#include "twinseg/parallel.hpp"
#include "twinseg/policy.hpp"
#include "twinseg/png_io.hpp"
#include "twinseg/prompt.hpp"
#include "twinseg/rewards.hpp"
#include "twinseg/rollout.hpp"
#include "twinseg/synth.hpp"
#include "twinseg/tools.hpp"
#include "twinseg/twin_json.hpp"

namespace twinseg {

inline constexpr int kRecordSchemaVersion = 1;
inline constexpr double kSftMinIou = 0.7;

struct EvalCase {
  QueryCase query;
  std::string twin_ref;
  std::shared_ptr<const TwinSequence> twin;
};

inline std::optional<QueryKind> kind_from_string(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(QueryKind::moves_left); ++k) {
    if (to_string(static_cast<QueryKind>(k)) == s) return static_cast<QueryKind>(k);
  }
  return std::nullopt;
}

// Reads <dir>/queries.jsonl (or the given .jsonl file); twin and mask paths
// are relative to the file's directory. Twins shared by several queries are
// loaded once.
inline std::vector<EvalCase> load_cases(const std::filesystem::path& where) {
  const auto file = std::filesystem::is_directory(where) ? where / "queries.jsonl" : where;
  const auto base = file.parent_path();
  std::ifstream in(file);
  if (!in) throw OperationalError("cannot open " + file.string());
  std::map<std::string, std::shared_ptr<const TwinSequence>> twins;
  std::vector<EvalCase> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where_line = file.filename().string() + ":" + std::to_string(n);
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ValidationError(where_line, "malformed JSON");
    try {
      EvalCase c;
      c.query.query_id = j.at("query_id").get<std::string>();
      c.query.scene_id = j.value("scene", std::string{});
      c.query.text = j.at("query").get<std::string>();
      const auto kind = kind_from_string(j.value("template", std::string{}));
      c.query.kind = kind.value_or(QueryKind::label);
      const auto cat = category_from_string(j.at("category").get<std::string>());
      if (!cat) throw ValidationError(where_line + ".category", "unknown category");
      c.query.category = *cat;
      c.query.level = j.value("level", 1);
      c.query.gt_ids = j.value("gt_ids", std::vector<InstanceId>{});
      c.twin_ref = j.at("twin").get<std::string>();
      auto& twin = twins[c.twin_ref];
      if (!twin) twin = std::make_shared<const TwinSequence>(load_twin_file(base / c.twin_ref));
      c.twin = twin;
      for (const auto& g : j.at("gt_masks")) {
        c.query.gt.t.push_back(g.at("t").get<int>());
        c.query.gt.masks.push_back(read_mask_png(base / g.at("path").get<std::string>()));
      }
      if (c.query.gt.t.empty()) throw ValidationError(where_line + ".gt_masks", "no ground-truth frames");
      out.push_back(std::move(c));
    } catch (const Json::exception& e) {
      throw ValidationError(where_line, e.what());
    }
  }
  return out;
}

inline std::vector<EvalCase> cases_from_scenes(const std::vector<SceneOutput>& scenes) {
  std::vector<EvalCase> out;
  for (const auto& s : scenes) {
    auto twin = std::make_shared<const TwinSequence>(s.twin);
    for (const auto& q : s.queries) out.push_back({q, s.twin.source.video_id + "/twin.json", twin});
  }
  return out;
}

struct RolloutRecord {
  std::string query_id;
  int rollout_id = 0;
  std::string query;
  std::string twin_ref;
  std::string category;
  int level = 1;
  std::string policy;
  bool static_twin = false;
  std::string prompt;
  std::string rollout;
  std::optional<ParseError> parse_error;  // absent when the rollout parsed
  std::vector<CallStatus> execution;
  RewardBreakdown reward;
  // Over the evaluated frames; a failed parse scores as an empty prediction.
  // Absent only in records written by other tools.
  std::optional<double> j;
  std::optional<double> f;
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  std::optional<std::string> failure;  // backend error text
  std::optional<double> generate_ms;
  std::optional<double> tools_ms;
  std::optional<double> advantage;
  std::optional<std::string> group_id;

  bool parse_ok() const { return !parse_error.has_value(); }
};

inline Json record_to_json(const RolloutRecord& r) {
  Json parse{{"ok", r.parse_ok()}};
  if (r.parse_error) {
    parse["kind"] = std::string(to_string(r.parse_error->kind));
    parse["offset"] = r.parse_error->offset;
    parse["message"] = r.parse_error->message;
  }
  Json exec = Json::array();
  for (const auto& c : r.execution) {
    Json call{{"tool", c.tool}, {"ok", c.ok}, {"keys_written", c.keys_written}};
    if (!c.ok) call["reason"] = c.reason;
    if (!c.frame_failures.empty()) {
      Json ff = Json::array();
      for (const auto& f : c.frame_failures) ff.push_back(Json{{"t", f.t}, {"reason", f.reason}});
      call["frame_failures"] = ff;
    }
    exec.push_back(call);
  }
  Json reward{{"format", r.reward.format},
              {"accuracy", r.reward.accuracy},
              {"reasoning", r.reward.reasoning ? Json(*r.reward.reasoning) : Json(nullptr)},
              {"gamma", r.reward.gamma},
              {"role", std::string(to_string(r.reward.role))},
              {"total", r.reward.total}};
  Json j{{"schema_version", kRecordSchemaVersion},
         {"query_id", r.query_id},
         {"rollout_id", r.rollout_id},
         {"query", r.query},
         {"twin", r.twin_ref},
         {"category", r.category},
         {"level", r.level},
         {"policy", r.policy},
         {"static_twin", r.static_twin},
         {"prompt", r.prompt},
         {"rollout", r.rollout},
         {"parse", parse},
         {"execution", exec},
         {"reward", reward},
         {"j", r.j ? Json(*r.j) : Json(nullptr)},
         {"f", r.f ? Json(*r.f) : Json(nullptr)},
         {"intersection", r.intersection},
         {"union", r.union_}};
  if (r.failure) j["failure"] = *r.failure;
  if (r.generate_ms || r.tools_ms) j["timing_ms"] = Json{{"generate", r.generate_ms.value_or(0.0)}, {"tools", r.tools_ms.value_or(0.0)}};
  if (r.advantage) j["advantage"] = *r.advantage;
  if (r.group_id) j["group_id"] = *r.group_id;
  return j;
}

inline std::optional<ParseErrorKind> parse_error_kind(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(ParseErrorKind::malformed_answer); ++k) {
    const auto kind = static_cast<ParseErrorKind>(k);
    if (to_string(kind) == s) return kind;
  }
  return std::nullopt;
}

inline RolloutRecord record_from_json(const Json& j) {
  try {
    if (j.at("schema_version").get<int>() != kRecordSchemaVersion) {
      throw SchemaVersionError("schema_version", "unsupported record schema " + j.at("schema_version").dump());
    }
    RolloutRecord r;
    r.query_id = j.at("query_id").get<std::string>();
    r.rollout_id = j.at("rollout_id").get<int>();
    r.query = j.value("query", std::string{});
    r.twin_ref = j.value("twin", std::string{});
    r.category = j.value("category", std::string{});
    r.level = j.value("level", 1);
    r.policy = j.value("policy", std::string{});
    r.static_twin = j.value("static_twin", false);
    r.prompt = j.value("prompt", std::string{});
    r.rollout = j.at("rollout").get<std::string>();
    if (auto p = j.find("parse"); p != j.end() && !p->value("ok", true)) {
      const auto kind = parse_error_kind(p->value("kind", std::string{}));
      r.parse_error = ParseError{kind.value_or(ParseErrorKind{}), p->value("offset", std::size_t{0}), p->value("message", std::string{})};
    }
    if (auto e = j.find("execution"); e != j.end()) {
      for (const auto& c : *e) {
        CallStatus s;
        s.tool = c.value("tool", std::string{});
        s.ok = c.value("ok", true);
        s.reason = c.value("reason", std::string{});
        s.keys_written = c.value("keys_written", std::vector<std::string>{});
        if (auto ff = c.find("frame_failures"); ff != c.end()) {
          for (const auto& f : *ff) s.frame_failures.push_back({f.at("t").get<int>(), f.at("reason").get<std::string>()});
        }
        r.execution.push_back(std::move(s));
      }
    }
    if (auto rw = j.find("reward"); rw != j.end()) {
      r.reward.format = rw->value("format", kFormatBad);
      r.reward.accuracy = rw->value("accuracy", 0.0);
      if (auto rs = rw->find("reasoning"); rs != rw->end() && rs->is_number()) r.reward.reasoning = rs->get<double>();
      r.reward.gamma = rw->value("gamma", kDefaultGamma);
      r.reward.role = rw->value("role", std::string("teacher")) == "student" ? RewardRole::student : RewardRole::teacher;
      r.reward.total = rw->value("total", 0.0);
    }
    if (auto v = j.find("j"); v != j.end() && !v->is_null()) r.j = v->get<double>();
    if (auto v = j.find("f"); v != j.end() && !v->is_null()) r.f = v->get<double>();
    r.intersection = j.value("intersection", std::uint64_t{0});
    r.union_ = j.value("union", std::uint64_t{0});
    if (auto fl = j.find("failure"); fl != j.end()) r.failure = fl->get<std::string>();
    if (auto t = j.find("timing_ms"); t != j.end()) {
      r.generate_ms = t->value("generate", 0.0);
      r.tools_ms = t->value("tools", 0.0);
    }
    if (auto a = j.find("advantage"); a != j.end()) r.advantage = a->get<double>();
    if (auto g = j.find("group_id"); g != j.end()) r.group_id = g->get<std::string>();
    return r;
  } catch (const Json::exception& e) {
    throw ValidationError("record", e.what());
  }
}

inline std::vector<RolloutRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw OperationalError("cannot open " + path.string());
  std::vector<RolloutRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ValidationError(path.filename().string() + ":" + std::to_string(n), "malformed JSON");
    try {
      out.push_back(record_from_json(j));
    } catch (const SchemaVersionError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ValidationError(path.filename().string() + ":" + std::to_string(n), e.what());
    }
  }
  return out;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text_file(path, text);
}

struct CollectOptions {
  RewardRole role = RewardRole::teacher;
  bool static_twin = false;  // splice the unrefined twin instead of running tools
  int samples = 1;
  int workers = 1;
  RewardToggles toggles;
  double gamma = kDefaultGamma;
  bool record_timing = false;
  std::optional<int> boundary_tolerance;  // F-measure tolerance in pixels; default from the image diagonal
};

// Scores an already generated rollout against a case. Students get no
// reasoning term here; it is added by score_student_batch.
inline void score_record(RolloutRecord& r, const EvalCase& c, const CollectOptions& opt) {
  const auto outcome = parse_rollout(r.rollout);
  r.parse_error = outcome.ok() ? std::nullopt : std::optional<ParseError>(outcome.error());
  const auto dims = c.twin->raster_size();
  const int w = dims ? dims->first : c.query.gt.masks.front().width();
  const int h = dims ? dims->second : c.query.gt.masks.front().height();
  std::vector<Mask> pred;
  double accuracy = 0.0;
  if (outcome.ok()) {
    const auto acc = accuracy_reward(outcome.rollout().answer, *c.twin, c.query.gt);
    accuracy = acc.reward;
    const auto resolved = resolve_answer(outcome.rollout().answer, *c.twin, w, h);
    if (resolved.unresolved.empty()) pred = select_frames(resolved.frames, c.query.gt);
  }
  if (pred.empty()) pred.assign(c.query.gt.masks.size(), Mask::empty(w, h));
  const auto ev = evaluate_sequence(pred, c.query.gt.masks, opt.boundary_tolerance.value_or(diagonal_tolerance(w, h)));
  r.j = ev.j;
  r.f = ev.f;
  r.intersection = r.union_ = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto sc = sample_counts(pred[k], c.query.gt.masks[k]);
    r.intersection += sc.intersection;
    r.union_ += sc.union_;
  }
  RewardToggles toggles = opt.toggles;
  if (opt.role == RewardRole::student) toggles.reasoning = false;
  r.reward = combined_reward({format_reward(outcome), accuracy, std::nullopt}, opt.role, opt.gamma, toggles);
}

// One rollout: generate until the plan pause, run the plan (or splice the
// static twin), then let the policy finish. At most one pause per rollout.
inline RolloutRecord run_rollout(PolicyBackend& policy, const EvalCase& c, int sample, const CollectOptions& opt) {
  using Clock = std::chrono::steady_clock;
  RolloutRecord r;
  r.query_id = c.query.query_id;
  r.rollout_id = sample;
  r.query = c.query.text;
  r.twin_ref = c.twin_ref;
  r.category = std::string(to_string(c.query.category));
  r.level = c.query.level;
  r.policy = policy.name();
  r.static_twin = opt.static_twin;
  r.prompt = build_prompt(*c.twin, c.query.text);
  double gen_ms = 0.0, tool_ms = 0.0;
  try {
    auto t0 = Clock::now();
    std::string text = policy.generate({r.prompt, std::string(close_tag(BlockKind::plan)), r.query_id, sample});
    gen_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    const auto pause = scan_for_pause(text);
    if (pause.paused_at) {
      text.resize(*pause.paused_at + 1);
      const auto t1 = Clock::now();
      TwinSequence refined = *c.twin;
      if (!opt.static_twin) {
        if (const auto plan = extract_plan(text)) {
          auto [twin, report] = execute_plan(*plan, *c.twin);
          refined = std::move(twin);
          r.execution = std::move(report.calls);
        }
      }
      text = splice_results(text, refined);
      tool_ms += std::chrono::duration<double, std::milli>(Clock::now() - t1).count();
      t0 = Clock::now();
      text += policy.generate({r.prompt + text, std::string{}, r.query_id, sample});
      gen_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    }
    r.rollout = std::move(text);
  } catch (const BackendError& e) {
    r.failure = e.what();
    r.rollout.clear();
  }
  if (opt.record_timing) {
    r.generate_ms = gen_ms;
    r.tools_ms = tool_ms;
  }
  score_record(r, c, opt);
  return r;
}

struct WorkItem {
  std::size_t case_index;
  int sample;
};

inline std::vector<WorkItem> work_items(const std::vector<EvalCase>& cases, int samples) {
  if (samples < 1) throw ValidationError("samples", "must be >= 1");
  std::vector<WorkItem> items;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (int s = 0; s < samples; ++s) items.push_back({i, s});
  }
  return items;
}

inline std::vector<RolloutRecord> collect(PolicyBackend& policy, const std::vector<EvalCase>& cases,
                                          const CollectOptions& opt = {}) {
  if (opt.workers < 1) throw ValidationError("workers", "must be >= 1");
  const auto items = work_items(cases, opt.samples);
  std::vector<RolloutRecord> out(items.size());
  parallel_for(items.size(), opt.workers, [&](std::size_t i) {
    out[i] = run_rollout(policy, cases[items[i].case_index], items[i].sample, opt);
  });
  return out;
}

struct CollectRun {
  std::vector<RolloutRecord> records;
  std::size_t resumed = 0;  // records kept from an earlier run
  std::size_t failed = 0;   // records whose backend call failed
};

// Collects into a JSONL file in work order, flushing each record and
// updating <out>.ckpt. An existing output is resumed: its longest prefix of
// intact records matching the work order is kept, anything after is dropped.
inline CollectRun collect_to_file(PolicyBackend& policy, const std::vector<EvalCase>& cases, const CollectOptions& opt,
                                  const std::filesystem::path& out_path) {
  if (opt.workers < 1) throw ValidationError("workers", "must be >= 1");
  const auto items = work_items(cases, opt.samples);
  CollectRun run;
  std::vector<std::string> kept;
  if (std::filesystem::exists(out_path)) {
    std::ifstream in(out_path);
    std::string line;
    while (kept.size() < items.size() && std::getline(in, line)) {
      if (in.eof() && !line.empty()) break;  // last line lacks its newline: partial write
      Json j = Json::parse(line, nullptr, false);
      if (j.is_discarded()) break;
      RolloutRecord r;
      try {
        r = record_from_json(j);
      } catch (const ValidationError&) {
        break;
      }
      const auto& item = items[kept.size()];
      if (r.query_id != cases[item.case_index].query.query_id || r.rollout_id != item.sample) break;
      run.records.push_back(std::move(r));
      kept.push_back(line);
    }
  }
  run.resumed = kept.size();
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  write_lines(out_path, kept);

  auto ckpt_path = out_path;
  ckpt_path += ".ckpt";
  std::ofstream out(out_path, std::ios::binary | std::ios::app);
  if (!out) throw OperationalError("cannot write " + out_path.string());
  auto checkpoint = [&](std::size_t done) {
    write_text_file(ckpt_path, Json{{"schema_version", 1}, {"completed", done}, {"total", items.size()}}.dump() + "\n");
  };
  checkpoint(kept.size());

  std::mutex mu;
  std::map<std::size_t, RolloutRecord> pending;
  std::size_t next_write = kept.size();
  const std::size_t todo = items.size() - kept.size();
  run.records.resize(items.size());
  parallel_for(todo, opt.workers, [&](std::size_t k) {
    const std::size_t i = kept.size() + k;
    auto rec = run_rollout(policy, cases[items[i].case_index], items[i].sample, opt);
    std::lock_guard lock(mu);
    pending.emplace(i, std::move(rec));
    while (!pending.empty() && pending.begin()->first == next_write) {
      auto node = pending.extract(pending.begin());
      out << record_to_json(node.mapped()).dump() << '\n';
      out.flush();
      if (!out) throw OperationalError("write failed: " + out_path.string());
      run.records[next_write] = std::move(node.mapped());
      ++next_write;
      checkpoint(next_write);
    }
  });
  for (const auto& r : run.records) run.failed += r.failure.has_value();
  return run;
}

// Teacher rollouts kept for SFT: parsed and J strictly above the threshold.
inline std::vector<RolloutRecord> reject_sample(const std::vector<RolloutRecord>& records, double min_iou = kSftMinIou) {
  std::vector<RolloutRecord> out;
  for (const auto& r : records) {
    if (r.parse_ok() && !r.failure && r.j && *r.j > min_iou) out.push_back(r);
  }
  return out;
}

// SFT lines {prompt, completion, query_id, rollout_id}. Every completion is
// re-parsed; a failure is a hard error naming the record.
inline std::vector<std::string> emit_sft(const std::vector<RolloutRecord>& kept) {
  std::vector<std::string> lines;
  for (const auto& r : kept) {
    const auto outcome = parse_rollout(r.rollout);
    if (!outcome.ok()) {
      throw ValidationError(r.query_id + "#" + std::to_string(r.rollout_id),
                            "completion does not parse: " + std::string(to_string(outcome.error().kind)));
    }
    lines.push_back(Json{{"prompt", r.prompt}, {"completion", r.rollout}, {"query_id", r.query_id}, {"rollout_id", r.rollout_id}}.dump());
  }
  return lines;
}

struct ScoreOptions {
  double gamma = kDefaultGamma;
  int group_size = 8;
  RewardToggles toggles;
  JudgeConfig judge;
  int workers = 1;

  void validate() const {
    if (!(gamma >= 0.0)) throw ValidationError("gamma", "must be non-negative");
    if (group_size < 2) throw ValidationError("group_size", "must be >= 2");
    if (workers < 1) throw ValidationError("workers", "must be >= 1");
    judge.validate();
  }
};

struct ScoredBatch {
  std::vector<RolloutRecord> records;
  std::vector<std::string> training_lines;  // {prompt, completion, reward, advantage, group_id, env_spans}
  std::vector<GroupScores> groups;
};

// Byte ranges [begin, end) of spliced <results> blocks, for loss masking.
inline Json env_spans(std::string_view rollout) {
  Json spans = Json::array();
  const auto open = open_tag(BlockKind::results), close = close_tag(BlockKind::results);
  for (auto b = rollout.find(open); b != std::string_view::npos; b = rollout.find(open, b + 1)) {
    const auto e = rollout.find(close, b);
    if (e == std::string_view::npos) break;
    spans.push_back(Json::array({b, e + close.size()}));
    b = e;
  }
  return spans;
}

// Student rewards with the judged reasoning term and group-relative
// advantages. Rollouts of one query form groups of `group_size` in record
// order; a lone trailing rollout joins the previous group.
inline ScoredBatch score_student_batch(const std::vector<RolloutRecord>& students,
                                       const std::vector<RolloutRecord>& teachers, JudgeBackend& judge,
                                       const ScoreOptions& opt) {
  opt.validate();
  std::map<std::string, const RolloutRecord*> teacher_for;
  for (const auto& t : teachers) {
    auto& slot = teacher_for[t.query_id];
    if (!slot || (!slot->parse_ok() && t.parse_ok())) slot = &t;
  }

  ScoredBatch batch;
  batch.records = students;
  std::vector<std::optional<double>> reasoning(students.size());
  if (opt.toggles.reasoning) {
    parallel_for(students.size(), opt.workers, [&](std::size_t i) {
      const auto& s = students[i];
      auto it = teacher_for.find(s.query_id);
      if (it == teacher_for.end()) throw ValidationError(s.query_id, "no teacher record for query");
      const auto student_reason = extract_reason(s.rollout);
      if (!student_reason) {
        reasoning[i] = 0.0;
        return;
      }
      const auto teacher_reason = extract_reason(it->second->rollout).value_or(std::string{});
      reasoning[i] = reasoning_reward(*student_reason, teacher_reason, judge, opt.judge);
    });
  }
  for (std::size_t i = 0; i < batch.records.size(); ++i) {
    auto& r = batch.records[i];
    const RewardParts parts{format_reward(parse_rollout(r.rollout)), r.reward.accuracy, reasoning[i]};
    r.reward = combined_reward(parts, RewardRole::student, opt.gamma, opt.toggles);
  }

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_query;
  for (std::size_t i = 0; i < batch.records.size(); ++i) {
    auto [it, fresh] = by_query.try_emplace(batch.records[i].query_id);
    if (fresh) order.push_back(batch.records[i].query_id);
    it->second.push_back(i);
  }
  const auto g = static_cast<std::size_t>(opt.group_size);
  for (const auto& qid : order) {
    const auto& idx = by_query[qid];
    if (idx.size() < 2) throw ValidationError(qid, "a group needs at least 2 student rollouts");
    std::vector<std::vector<std::size_t>> chunks;
    for (std::size_t b = 0; b < idx.size(); b += g) {
      chunks.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                          idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + g)));
    }
    if (chunks.size() > 1 && chunks.back().size() == 1) {
      chunks[chunks.size() - 2].push_back(chunks.back().front());
      chunks.pop_back();
    }
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      std::vector<double> rewards;
      for (auto i : chunks[k]) rewards.push_back(batch.records[i].reward.total);
      auto scores = grpo_advantages(rewards);
      const std::string gid = qid + "#" + std::to_string(k);
      for (std::size_t m = 0; m < chunks[k].size(); ++m) {
        auto& r = batch.records[chunks[k][m]];
        r.advantage = scores.advantages[m];
        r.group_id = gid;
      }
      batch.groups.push_back(std::move(scores));
    }
  }
  for (const auto& r : batch.records) {
    batch.training_lines.push_back(Json{{"prompt", r.prompt},
                                        {"completion", r.rollout},
                                        {"reward", r.reward.total},
                                        {"advantage", *r.advantage},
                                        {"group_id", *r.group_id},
                                        {"env_spans", env_spans(r.rollout)}}
                                       .dump());
  }
  return batch;
}

struct MetricBucket {
  std::size_t n = 0;
  double sum_j = 0.0;
  double sum_f = 0.0;
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;

  void add(const RolloutRecord& r) {
    ++n;
    sum_j += r.j.value_or(0.0);
    sum_f += r.f.value_or(0.0);
    intersection += r.intersection;
    union_ += r.union_;
  }
  double j() const { return n ? sum_j / static_cast<double>(n) : 0.0; }
  double f() const { return n ? sum_f / static_cast<double>(n) : 0.0; }
  Json to_json() const {
    const double ciou = union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_);
    return Json{{"n", n}, {"J", j()}, {"F", f()}, {"JF", (j() + f()) / 2.0}, {"gIoU", j()}, {"cIoU", ciou}};
  }
};

// Aggregate report: overall, per category, per level and per level x category.
// gIoU averages per-sample J; cIoU pools intersections and unions.
inline Json eval_report(const std::vector<RolloutRecord>& records, std::string_view policy, bool static_twin) {
  MetricBucket all;
  std::map<std::string, MetricBucket> per_cat, per_level;
  std::map<std::string, std::map<std::string, MetricBucket>> per_level_cat;
  std::size_t parse_failures = 0, backend_failures = 0;
  for (const auto& r : records) {
    all.add(r);
    per_cat[r.category].add(r);
    per_level[std::to_string(r.level)].add(r);
    per_level_cat[std::to_string(r.level)][r.category].add(r);
    parse_failures += !r.parse_ok();
    backend_failures += r.failure.has_value();
  }
  Json report = all.to_json();
  report["schema_version"] = 1;
  report["policy"] = std::string(policy);
  report["static_twin"] = static_twin;
  report["parse_failures"] = parse_failures;
  report["backend_failures"] = backend_failures;
  report["per_category"] = Json::object();
  for (const auto& [k, b] : per_cat) report["per_category"][k] = b.to_json();
  report["per_level"] = Json::object();
  for (const auto& [k, b] : per_level) report["per_level"][k] = b.to_json();
  report["per_level_category"] = Json::object();
  for (const auto& [lvl, cats] : per_level_cat) {
    for (const auto& [cat, b] : cats) report["per_level_category"][lvl][cat] = b.to_json();
  }
  return report;
}

struct EvalRun {
  std::vector<RolloutRecord> records;
  Json report;
};

inline EvalRun run_eval(PolicyBackend& policy, const std::vector<EvalCase>& cases, CollectOptions opt = {}) {
  if (cases.empty()) throw ValidationError("cases", "no cases to evaluate");
  opt.samples = 1;
  EvalRun run;
  run.records = collect(policy, cases, opt);
  run.report = eval_report(run.records, policy.name(), opt.static_twin);
  return run;
}

}  // namespace twinseg
