#pragma once

// Structured rollout text:
//
//   <reason>R</reason><answer>S</answer>                                   (no plan)
//   <reason>R</reason><plan>P</plan><results>D'</results><answer>S</answer> (with plan)
//
// Whitespace may separate blocks. Block bodies are taken verbatim up to the
// first occurrence of the block's closing token. P is a JSON array of
// {"tool": name, "args": {...}}, D' is the refined twin JSON, and S is
// {"instances": [ids], "frames": {"t": [ids]}, "no_target": bool}.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/twin.hpp"
#include "twinseg/twin_json.hpp"

namespace twinseg {

struct ToolCall {
  std::string name;
  Json args = Json::object();

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct AnswerBlock {
  std::vector<InstanceId> instances;
  // Frame-specific selections; a frame listed here ignores `instances`.
  std::map<int, std::vector<InstanceId>> frames;
  bool no_target = false;

  static AnswerBlock none() {
    AnswerBlock a;
    a.no_target = true;
    return a;
  }

  friend bool operator==(const AnswerBlock&, const AnswerBlock&) = default;
};

// Equality ignores `raw`.
struct RolloutSequence {
  std::string reason;
  std::optional<std::vector<ToolCall>> plan;
  std::optional<std::string> results;
  AnswerBlock answer;
  std::string raw;

  friend bool operator==(const RolloutSequence& a, const RolloutSequence& b) {
    return a.reason == b.reason && a.plan == b.plan && a.results == b.results && a.answer == b.answer;
  }
};

enum class ParseErrorKind {
  missing_block,
  wrong_order,
  unbalanced_tokens,
  duplicate_block,
  incomplete_execution,
  stray_text,
  malformed_plan,
  malformed_results,
  malformed_answer,
};

inline std::string_view to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::missing_block: return "missing-block";
    case ParseErrorKind::wrong_order: return "wrong-order";
    case ParseErrorKind::unbalanced_tokens: return "unbalanced-tokens";
    case ParseErrorKind::duplicate_block: return "duplicate-block";
    case ParseErrorKind::incomplete_execution: return "incomplete-execution";
    case ParseErrorKind::stray_text: return "stray-text";
    case ParseErrorKind::malformed_plan: return "malformed-plan";
    case ParseErrorKind::malformed_results: return "malformed-results";
    case ParseErrorKind::malformed_answer: return "malformed-answer";
  }
  return "unknown";
}

struct ParseError {
  ParseErrorKind kind;
  std::size_t offset = 0;
  std::string message;
};

class ParseOutcome {
 public:
  ParseOutcome(RolloutSequence r) : value_(std::move(r)) {}  // NOLINT(google-explicit-constructor)
  ParseOutcome(ParseError e) : value_(std::move(e)) {}       // NOLINT(google-explicit-constructor)

  bool ok() const noexcept { return std::holds_alternative<RolloutSequence>(value_); }
  const RolloutSequence& rollout() const { return std::get<RolloutSequence>(value_); }
  const ParseError& error() const { return std::get<ParseError>(value_); }

 private:
  std::variant<RolloutSequence, ParseError> value_;
};

enum class BlockKind { reason = 0, plan = 1, results = 2, answer = 3 };

inline constexpr std::array<std::string_view, 4> kOpenTags = {"<reason>", "<plan>", "<results>", "<answer>"};
inline constexpr std::array<std::string_view, 4> kCloseTags = {"</reason>", "</plan>", "</results>", "</answer>"};

inline std::string_view open_tag(BlockKind b) { return kOpenTags[static_cast<int>(b)]; }
inline std::string_view close_tag(BlockKind b) { return kCloseTags[static_cast<int>(b)]; }

inline bool is_rollout_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// A delimited block located in rollout text. `body_*` exclude the tags.
struct Block {
  BlockKind kind;
  std::size_t begin = 0;
  std::size_t body_begin = 0;
  std::size_t body_end = 0;
  std::size_t end = 0;  // one past the closing tag
};

namespace detail {

inline std::optional<BlockKind> open_tag_at(std::string_view text, std::size_t pos) {
  for (int k = 0; k < 4; ++k) {
    if (text.substr(pos).starts_with(kOpenTags[k])) return static_cast<BlockKind>(k);
  }
  return std::nullopt;
}

inline std::optional<BlockKind> close_tag_at(std::string_view text, std::size_t pos) {
  for (int k = 0; k < 4; ++k) {
    if (text.substr(pos).starts_with(kCloseTags[k])) return static_cast<BlockKind>(k);
  }
  return std::nullopt;
}

struct BlockScan {
  std::vector<Block> blocks;
  std::optional<ParseError> error;
};

// Splits text into top-level blocks without judging their order.
inline BlockScan scan_blocks(std::string_view text) {
  BlockScan out;
  std::size_t pos = 0;
  while (true) {
    while (pos < text.size() && is_rollout_space(text[pos])) ++pos;
    if (pos >= text.size()) break;
    auto kind = open_tag_at(text, pos);
    if (!kind) {
      if (auto closer = close_tag_at(text, pos)) {
        out.error = ParseError{ParseErrorKind::unbalanced_tokens, pos,
                               "closing token " + std::string(close_tag(*closer)) + " without an opening token"};
      } else {
        out.error = ParseError{ParseErrorKind::stray_text, pos, "text outside any block"};
      }
      return out;
    }
    Block b{*kind, pos, pos + open_tag(*kind).size(), 0, 0};
    const auto close = text.find(close_tag(*kind), b.body_begin);
    if (close == std::string_view::npos) {
      out.error = ParseError{ParseErrorKind::unbalanced_tokens, pos,
                             std::string(open_tag(*kind)) + " is never closed"};
      return out;
    }
    b.body_end = close;
    b.end = close + close_tag(*kind).size();
    out.blocks.push_back(b);
    pos = b.end;
  }
  return out;
}

// Checks the block sequence against the two accepted shapes.
inline std::optional<ParseError> check_order(const std::vector<Block>& blocks) {
  std::array<int, 4> count{};
  for (const auto& b : blocks) {
    if (++count[static_cast<int>(b.kind)] > 1) {
      return ParseError{ParseErrorKind::duplicate_block, b.begin,
                        "duplicate " + std::string(open_tag(b.kind)) + " block"};
    }
  }
  const bool has_reason = count[0] != 0, has_plan = count[1] != 0, has_results = count[2] != 0,
             has_answer = count[3] != 0;
  auto sequence_is = [&](std::initializer_list<BlockKind> want) {
    if (blocks.size() != want.size()) return false;
    std::size_t i = 0;
    for (auto k : want) {
      if (blocks[i++].kind != k) return false;
    }
    return true;
  };
  if (sequence_is({BlockKind::reason, BlockKind::answer}) ||
      sequence_is({BlockKind::reason, BlockKind::plan, BlockKind::results, BlockKind::answer})) {
    return std::nullopt;
  }
  const std::size_t at = blocks.empty() ? 0 : blocks.front().begin;
  if (has_reason && has_answer && (has_plan == has_results)) {
    return ParseError{ParseErrorKind::wrong_order, at, "blocks are present but out of order"};
  }
  if (has_plan && !has_results) {
    return ParseError{ParseErrorKind::incomplete_execution, at, "<plan> without <results>"};
  }
  std::string missing;
  if (!has_reason) missing += " <reason>";
  if (!has_answer) missing += " <answer>";
  if (has_results && !has_plan) missing += " <plan>";
  return ParseError{ParseErrorKind::missing_block, at, "missing block(s):" + missing};
}

}  // namespace detail

inline std::optional<std::vector<ToolCall>> plan_from_json(const Json& j, std::string* why = nullptr) {
  auto fail = [&](std::string msg) -> std::optional<std::vector<ToolCall>> {
    if (why) *why = std::move(msg);
    return std::nullopt;
  };
  if (!j.is_array()) return fail("plan must be a JSON array");
  if (j.empty()) return fail("plan block must contain at least one call");
  std::vector<ToolCall> calls;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Json& c = j[i];
    const std::string where = "plan[" + std::to_string(i) + "]";
    if (!c.is_object()) return fail(where + " must be an object");
    for (auto it = c.begin(); it != c.end(); ++it) {
      if (it.key() != "tool" && it.key() != "args") return fail(where + " has unknown key \"" + it.key() + "\"");
    }
    auto tool = c.find("tool");
    if (tool == c.end() || !tool->is_string() || tool->get<std::string>().empty()) {
      return fail(where + ".tool must be a non-empty string");
    }
    auto args = c.find("args");
    if (args == c.end() || !args->is_object()) return fail(where + ".args must be an object");
    calls.push_back(ToolCall{tool->get<std::string>(), *args});
  }
  return calls;
}

inline Json plan_to_json(const std::vector<ToolCall>& plan) {
  Json arr = Json::array();
  for (const auto& c : plan) arr.push_back(Json{{"tool", c.name}, {"args", c.args}});
  return arr;
}

inline std::optional<AnswerBlock> answer_from_json(const Json& j, std::string* why = nullptr) {
  auto fail = [&](std::string msg) -> std::optional<AnswerBlock> {
    if (why) *why = std::move(msg);
    return std::nullopt;
  };
  auto read_ids = [](const Json& arr, std::vector<InstanceId>& out) {
    if (!arr.is_array()) return false;
    for (const auto& v : arr) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0 || v.get<std::int64_t>() > 0xFFFFFFFFll) return false;
      out.push_back(v.get<InstanceId>());
    }
    return true;
  };
  if (!j.is_object()) return fail("answer must be a JSON object");
  AnswerBlock a;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    if (key == "instances") {
      if (!read_ids(*it, a.instances)) return fail("answer.instances must be an array of ids");
    } else if (key == "frames") {
      if (!it->is_object()) return fail("answer.frames must be an object");
      for (auto f = it->begin(); f != it->end(); ++f) {
        const auto& k = f.key();
        if (k.empty() || k.size() > 9 || !std::all_of(k.begin(), k.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
            k[0] == '0') {
          return fail("answer.frames keys must be positive frame indices");
        }
        std::vector<InstanceId> ids;
        if (!read_ids(f.value(), ids)) return fail("answer.frames[" + k + "] must be an array of ids");
        a.frames[std::stoi(k)] = std::move(ids);
      }
    } else if (key == "no_target") {
      if (!it->is_boolean()) return fail("answer.no_target must be a boolean");
      a.no_target = it->get<bool>();
    } else {
      return fail("answer has unknown key \"" + key + "\"");
    }
  }
  if (!j.contains("instances")) return fail("answer.instances is required");
  if (a.no_target) {
    if (!a.instances.empty() || !a.frames.empty()) return fail("a no_target answer must not list instances");
  } else {
    const bool any = !a.instances.empty() ||
                     std::any_of(a.frames.begin(), a.frames.end(), [](const auto& kv) { return !kv.second.empty(); });
    if (!any) return fail("answer lists no instances (use no_target for an empty answer)");
  }
  return a;
}

inline Json answer_to_json(const AnswerBlock& a) {
  Json j{{"instances", a.instances}};
  if (!a.frames.empty()) {
    Json f = Json::object();
    for (const auto& [t, ids] : a.frames) f[std::to_string(t)] = ids;
    j["frames"] = std::move(f);
  }
  if (a.no_target) j["no_target"] = true;
  return j;
}

// Total: every input yields a rollout or a classified error.
inline ParseOutcome parse_rollout(std::string_view text) {
  auto scan = detail::scan_blocks(text);
  if (scan.error) return *scan.error;
  if (scan.blocks.empty()) return ParseError{ParseErrorKind::missing_block, 0, "no blocks found"};
  if (auto err = detail::check_order(scan.blocks)) return *err;

  RolloutSequence r;
  r.raw = std::string(text);
  auto body = [&](const Block& b) { return text.substr(b.body_begin, b.body_end - b.body_begin); };
  for (const auto& b : scan.blocks) {
    const auto content = body(b);
    switch (b.kind) {
      case BlockKind::reason:
        r.reason = std::string(content);
        break;
      case BlockKind::plan: {
        Json j = Json::parse(content.begin(), content.end(), nullptr, false);
        if (j.is_discarded()) return ParseError{ParseErrorKind::malformed_plan, b.body_begin, "plan is not valid JSON"};
        std::string why;
        auto plan = plan_from_json(j, &why);
        if (!plan) return ParseError{ParseErrorKind::malformed_plan, b.body_begin, why};
        r.plan = std::move(*plan);
        break;
      }
      case BlockKind::results: {
        Json j = Json::parse(content.begin(), content.end(), nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
          return ParseError{ParseErrorKind::malformed_results, b.body_begin, "results must be a JSON object"};
        }
        r.results = std::string(content);
        break;
      }
      case BlockKind::answer: {
        Json j = Json::parse(content.begin(), content.end(), nullptr, false);
        if (j.is_discarded()) return ParseError{ParseErrorKind::malformed_answer, b.body_begin, "answer is not valid JSON"};
        std::string why;
        auto ans = answer_from_json(j, &why);
        if (!ans) return ParseError{ParseErrorKind::malformed_answer, b.body_begin, why};
        r.answer = std::move(*ans);
        break;
      }
    }
  }
  return r;
}

// Throws ValidationError when the rollout could not round-trip through parse.
inline std::string serialize_rollout(const RolloutSequence& r) {
  if (r.plan.has_value() != r.results.has_value()) {
    throw ValidationError("rollout", "plan and results must be both present or both absent");
  }
  if (r.reason.find(close_tag(BlockKind::reason)) != std::string::npos) {
    throw ValidationError("rollout.reason", "reason text contains </reason>");
  }
  if (r.plan && r.plan->empty()) throw ValidationError("rollout.plan", "a present plan must be non-empty");
  if (r.results && r.results->find(close_tag(BlockKind::results)) != std::string::npos) {
    throw ValidationError("rollout.results", "results text contains </results>");
  }
  const std::string plan_text = r.plan ? plan_to_json(*r.plan).dump() : std::string();
  if (plan_text.find(close_tag(BlockKind::plan)) != std::string::npos) {
    throw ValidationError("rollout.plan", "plan arguments contain </plan>");
  }
  std::string out;
  out += open_tag(BlockKind::reason);
  out += r.reason;
  out += close_tag(BlockKind::reason);
  if (r.plan) {
    out += open_tag(BlockKind::plan);
    out += plan_text;
    out += close_tag(BlockKind::plan);
    out += open_tag(BlockKind::results);
    out += *r.results;
    out += close_tag(BlockKind::results);
  }
  out += open_tag(BlockKind::answer);
  out += answer_to_json(r.answer).dump();
  out += close_tag(BlockKind::answer);
  return out;
}

struct PauseScan {
  // Offset of the final byte of the pausing "</plan>".
  std::optional<std::size_t> paused_at;
  std::vector<std::string> anomalies;
};

// Looks for a completed plan block awaiting execution at the end of a
// generation prefix. Stateless: the caller passes the whole prefix.
inline PauseScan scan_for_pause(std::string_view prefix) {
  PauseScan out;
  std::size_t pos = 0;
  while (true) {
    while (pos < prefix.size() && is_rollout_space(prefix[pos])) ++pos;
    if (pos >= prefix.size()) return out;
    auto kind = detail::open_tag_at(prefix, pos);
    if (!kind) {
      if (detail::close_tag_at(prefix, pos) == BlockKind::plan) {
        out.anomalies.push_back("</plan> at byte " + std::to_string(pos) + " without an open <plan>");
      }
      return out;
    }
    const std::size_t body = pos + open_tag(*kind).size();
    const auto close = prefix.find(close_tag(*kind), body);
    if (close == std::string_view::npos) {
      if (*kind != BlockKind::plan) {
        const auto stray = prefix.find(close_tag(BlockKind::plan), body);
        if (stray != std::string_view::npos) {
          out.anomalies.push_back("</plan> at byte " + std::to_string(stray) + " inside an open " +
                                  std::string(open_tag(*kind)) + " block");
        }
      }
      return out;
    }
    if (*kind != BlockKind::plan) {
      const auto stray = prefix.substr(body, close - body).find(close_tag(BlockKind::plan));
      if (stray != std::string_view::npos) {
        out.anomalies.push_back("</plan> at byte " + std::to_string(body + stray) + " inside " +
                                std::string(open_tag(*kind)) + " block");
      }
    }
    pos = close + close_tag(*kind).size();
    if (*kind == BlockKind::plan) {
      // Paused only when nothing but whitespace follows; anything after the
      // plan means results were already spliced or generation moved on.
      std::size_t rest = pos;
      while (rest < prefix.size() && is_rollout_space(prefix[rest])) ++rest;
      if (rest == prefix.size()) out.paused_at = pos - 1;
      return out;
    }
  }
}

inline std::string results_block(const TwinSequence& refined) {
  std::string out;
  out += open_tag(BlockKind::results);
  out += serialize_twin(refined);
  out += close_tag(BlockKind::results);
  return out;
}

// Appends the refined twin after a paused prefix. Throws ValidationError when
// the prefix does not end at a pause point (including an already-spliced one).
inline std::string splice_results(std::string_view prefix, const TwinSequence& refined) {
  const auto scan = scan_for_pause(prefix);
  if (!scan.paused_at || *scan.paused_at + 1 != prefix.size()) {
    throw ValidationError("prefix", "prefix does not end at a plan pause point");
  }
  std::string out(prefix);
  out += results_block(refined);
  return out;
}

// Body of the first <reason> block, even in otherwise malformed text.
inline std::optional<std::string> extract_reason(std::string_view text) {
  const auto open = text.find(open_tag(BlockKind::reason));
  if (open == std::string_view::npos) return std::nullopt;
  const auto body = open + open_tag(BlockKind::reason).size();
  const auto close = text.find(close_tag(BlockKind::reason), body);
  if (close == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(body, close - body));
}

// Plan calls of a paused prefix; nullopt when the plan body is malformed.
inline std::optional<std::vector<ToolCall>> extract_plan(std::string_view prefix) {
  auto scan = detail::scan_blocks(prefix);
  for (const auto& b : scan.blocks) {
    if (b.kind != BlockKind::plan) continue;
    const auto content = prefix.substr(b.body_begin, b.body_end - b.body_begin);
    Json j = Json::parse(content.begin(), content.end(), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return plan_from_json(j);
  }
  return std::nullopt;
}

}  // namespace twinseg
