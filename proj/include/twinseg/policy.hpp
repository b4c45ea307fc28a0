#pragma once

// Generation backends. A backend continues a context (prompt plus rollout
// so far) and honours the stop sequence, returning only the new text.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/http_client.hpp"
#include "twinseg/prompt.hpp"
#include "twinseg/rollout.hpp"
#include "twinseg/synth.hpp"
#include "twinseg/twin_json.hpp"

namespace twinseg {

struct GenerationRequest {
  std::string context;
  std::string stop;  // empty: no stop sequence
  std::string query_id;
  int sample = 0;
};

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  // Throws BackendError when generation fails.
  virtual std::string generate(const GenerationRequest& req) = 0;
  virtual std::string name() const = 0;
};

// Truncates just after the first occurrence of `stop`.
inline std::string apply_stop(std::string text, std::string_view stop) {
  if (stop.empty()) return text;
  const auto pos = text.find(stop);
  if (pos != std::string::npos) text.resize(pos + stop.size());
  return text;
}

inline std::string answer_tag(const AnswerBlock& a) {
  return std::string(open_tag(BlockKind::answer)) + answer_to_json(a).dump() + std::string(close_tag(BlockKind::answer));
}

inline std::string reason_tag(std::string_view text) {
  return std::string(open_tag(BlockKind::reason)) + std::string(text) + std::string(close_tag(BlockKind::reason));
}

inline std::string plan_tag(const std::vector<ToolCall>& plan) {
  return std::string(open_tag(BlockKind::plan)) + plan_to_json(plan).dump() + std::string(close_tag(BlockKind::plan));
}

namespace policy_detail {

inline std::optional<InstanceId> unique(const std::set<InstanceId>& ids) {
  if (ids.size() != 1) return std::nullopt;
  return *ids.begin();
}

inline const Json* derived(const InstanceRecord& inst, const std::string& key) {
  auto it = inst.derived.find(key);
  return it == inst.derived.end() ? nullptr : &it->second;
}

inline std::optional<InstanceId> id_with_label(const TwinSequence& twin, std::string_view label) {
  std::set<InstanceId> ids;
  for (const auto& f : twin.frames) {
    for (const auto& i : f.instances) {
      if (i.semantic_label == label) ids.insert(i.id);
    }
  }
  return unique(ids);
}

// Frame-consistent extreme by an integer derived key; nullopt when a frame
// lacks the key, the extreme is shared, or frames disagree.
template <typename Better>
std::optional<InstanceId> consistent_extreme(const TwinSequence& twin, const std::string& key, Better better) {
  std::optional<InstanceId> winner;
  for (const auto& f : twin.frames) {
    std::optional<double> best;
    std::set<InstanceId> at_best;
    for (const auto& i : f.instances) {
      const Json* v = derived(i, key);
      if (!v || !v->is_number()) return std::nullopt;
      const double x = v->get<double>();
      if (!best || better(x, *best)) {
        best = x;
        at_best = {i.id};
      } else if (x == *best) {
        at_best.insert(i.id);
      }
    }
    if (at_best.empty()) continue;
    const auto id = unique(at_best);
    if (!id || (winner && *winner != *id)) return std::nullopt;
    winner = id;
  }
  return winner;
}

}  // namespace policy_detail

// Scripted teacher for the synthetic query grammar. Label queries are
// answered from the twin directly; everything else is planned as tool calls
// and answered only from the derived keys found in <results>.
class OraclePolicy : public PolicyBackend {
 public:
  std::string generate(const GenerationRequest& req) override {
    const auto parts = split_prompt(req.context);
    if (!parts) throw BackendError("oracle policy: context lacks the prompt sections");
    const auto query = parse_query(parts->query);
    const TwinSequence twin = parse_twin(parts->twin_json, TwinParseOptions{".", false});
    std::string text;
    if (!parts->rollout.empty()) {
      const bool has_results = parts->rollout.find(close_tag(BlockKind::results)) != std::string_view::npos;
      text = answer_tag(query && has_results ? answer_from_results(*query, parts->rollout) : AnswerBlock::none());
    } else if (!query) {
      text = reason_tag("The query does not match any pattern I know, so nothing is selected.") +
             answer_tag(AnswerBlock::none());
    } else {
      text = opening(*query, twin);
    }
    return apply_stop(std::move(text), req.stop);
  }

  std::string name() const override { return "oracle"; }

  static std::vector<ToolCall> plan_for(const ParsedQuery& q, const TwinSequence& twin) {
    std::vector<ToolCall> plan;
    const auto ids = twin.instance_ids();
    switch (q.kind) {
      case QueryKind::label:
      case QueryKind::kind_all: break;
      case QueryKind::nearest:
      case QueryKind::farthest: plan.push_back({"depth_rank", Json::object()}); break;
      case QueryKind::largest:
        for (auto id : ids) plan.push_back({"size", Json{{"id", id}}});
        break;
      case QueryKind::left_of:
      case QueryKind::right_of:
        if (auto anchor = policy_detail::id_with_label(twin, q.argument)) {
          for (auto id : ids) {
            if (id == *anchor) continue;
            const bool together = std::any_of(twin.frames.begin(), twin.frames.end(),
                                              [&](const TwinFrame& f) { return f.find(id) && f.find(*anchor); });
            if (together) plan.push_back({"spatial_relation", Json{{"a", id}, {"b", *anchor}}});
          }
        }
        break;
      case QueryKind::appears_last:
      case QueryKind::appears_first:
        for (auto id : ids) plan.push_back({"temporal_span", Json{{"id", id}}});
        break;
      case QueryKind::moves_right:
      case QueryKind::moves_left:
        for (auto id : ids) plan.push_back({"motion", Json{{"id", id}}});
        break;
    }
    return plan;
  }

 private:
  static std::string explain(QueryKind k) {
    switch (k) {
      case QueryKind::label: return "The query names one object by its label, so I select the instance carrying that label.";
      case QueryKind::kind_all: return "The query asks for every object of one kind; all instances whose label contains that noun qualify.";
      case QueryKind::nearest: return "Closest to the camera means the smallest mean depth, so I rank instances by depth in each frame and keep rank 1.";
      case QueryKind::farthest: return "Farthest from the camera means the largest mean depth, so I rank instances by depth and keep the last rank.";
      case QueryKind::largest: return "Largest means the most foreground pixels, so I measure every instance and keep the one that wins in each frame.";
      case QueryKind::left_of: return "I need the object whose centroid lies left of the named anchor, so I compare every other instance with it.";
      case QueryKind::right_of: return "I need the object whose centroid lies right of the named anchor, so I compare every other instance with it.";
      case QueryKind::appears_last: return "I find the first frame of each instance and keep the one that enters latest.";
      case QueryKind::appears_first: return "I find the first frame of each instance and keep the one that enters earliest.";
      case QueryKind::moves_right: return "I measure each instance's displacement over the clip and keep the one moving right.";
      case QueryKind::moves_left: return "I measure each instance's displacement over the clip and keep the one moving left.";
    }
    return {};
  }

  static std::string opening(const ParsedQuery& q, const TwinSequence& twin) {
    if (q.kind == QueryKind::label || q.kind == QueryKind::kind_all) {
      std::set<InstanceId> ids;
      for (const auto& f : twin.frames) {
        for (const auto& i : f.instances) {
          const bool hit = q.kind == QueryKind::label ? i.semantic_label == q.argument
                                                      : i.semantic_label.find(q.argument) != std::string::npos;
          if (hit) ids.insert(i.id);
        }
      }
      AnswerBlock a;
      a.instances.assign(ids.begin(), ids.end());
      a.no_target = ids.empty();
      return reason_tag(explain(q.kind)) + answer_tag(a);
    }
    const auto plan = plan_for(q, twin);
    if (plan.empty()) {
      return reason_tag(explain(q.kind) + " The twin offers nothing to compare, so there is no target.") +
             answer_tag(AnswerBlock::none());
    }
    return reason_tag(explain(q.kind)) + plan_tag(plan);
  }

  static AnswerBlock answer_from_results(const ParsedQuery& q, std::string_view rollout) {
    using namespace policy_detail;
    const auto open = rollout.find(open_tag(BlockKind::results));
    const auto close = rollout.find(close_tag(BlockKind::results));
    if (open == std::string_view::npos || close < open) return AnswerBlock::none();
    const auto body = rollout.substr(open + open_tag(BlockKind::results).size(),
                                     close - open - open_tag(BlockKind::results).size());
    TwinSequence refined;
    try {
      refined = parse_twin(body, TwinParseOptions{".", false});
    } catch (const ValidationError&) {
      return AnswerBlock::none();
    }
    std::optional<InstanceId> pick;
    switch (q.kind) {
      case QueryKind::nearest:
        pick = consistent_extreme(refined, "depth_rank", [](double a, double b) { return a < b; });
        break;
      case QueryKind::farthest:
        pick = consistent_extreme(refined, "depth_rank", [](double a, double b) { return a > b; });
        break;
      case QueryKind::largest:
        pick = consistent_extreme(refined, "size_px", [](double a, double b) { return a > b; });
        break;
      case QueryKind::left_of:
      case QueryKind::right_of: {
        const auto anchor = id_with_label(refined, q.argument);
        if (!anchor) break;
        const std::string key = "spatial_relation:" + std::to_string(*anchor);
        const std::string want = q.kind == QueryKind::left_of ? "left_of" : "right_of";
        std::set<InstanceId> hits;
        for (const auto& f : refined.frames) {
          for (const auto& i : f.instances) {
            if (const Json* v = derived(i, key); v && v->is_string() && v->get<std::string>() == want) hits.insert(i.id);
          }
        }
        pick = unique(hits);
        break;
      }
      case QueryKind::appears_last:
      case QueryKind::appears_first: {
        std::map<InstanceId, int> first;
        for (const auto& f : refined.frames) {
          for (const auto& i : f.instances) {
            const Json* v = derived(i, "temporal_span");
            if (!v || !v->contains("first_frame")) return AnswerBlock::none();
            first[i.id] = v->at("first_frame").get<int>();
          }
        }
        if (first.empty()) break;
        const bool last = q.kind == QueryKind::appears_last;
        int best = first.begin()->second;
        for (const auto& [id, t] : first) best = last ? std::max(best, t) : std::min(best, t);
        std::set<InstanceId> hits;
        for (const auto& [id, t] : first) {
          if (t == best) hits.insert(id);
        }
        pick = unique(hits);
        break;
      }
      case QueryKind::moves_right:
      case QueryKind::moves_left: {
        std::set<InstanceId> hits;
        for (const auto& f : refined.frames) {
          for (const auto& i : f.instances) {
            const Json* v = derived(i, "motion");
            if (!v || !v->contains("dx")) return AnswerBlock::none();
            const double dx = v->at("dx").get<double>();
            if (q.kind == QueryKind::moves_right ? dx > 0 : dx < 0) hits.insert(i.id);
          }
        }
        pick = unique(hits);
        break;
      }
      default: break;
    }
    if (!pick) return AnswerBlock::none();
    AnswerBlock a;
    a.instances = {*pick};
    return a;
  }
};

// Serves canned rollouts from JSONL lines {"query_id", "rollout_text"};
// sample k of a query uses its k-th line (cycling). After a pause it resumes
// from the canned text's own </results>.
class ReplayPolicy : public PolicyBackend {
 public:
  explicit ReplayPolicy(std::map<std::string, std::vector<std::string>> texts) : texts_(std::move(texts)) {}

  static ReplayPolicy from_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw OperationalError("cannot open " + path.string());
    std::map<std::string, std::vector<std::string>> texts;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      Json j = Json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("query_id") || !j.contains("rollout_text")) {
        throw ValidationError(path.string() + ":" + std::to_string(n), "expected {\"query_id\", \"rollout_text\"}");
      }
      texts[j["query_id"].get<std::string>()].push_back(j["rollout_text"].get<std::string>());
    }
    return ReplayPolicy(std::move(texts));
  }

  std::string generate(const GenerationRequest& req) override {
    auto it = texts_.find(req.query_id);
    if (it == texts_.end() || it->second.empty()) throw BackendError("replay policy has no rollout for " + req.query_id);
    const std::string& canned = it->second[static_cast<std::size_t>(req.sample) % it->second.size()];
    const auto parts = split_prompt(req.context);
    const std::string_view so_far = parts ? parts->rollout : std::string_view{};
    std::string rest;
    const auto results_close = close_tag(BlockKind::results);
    if (so_far.empty()) {
      rest = canned;
    } else if (std::string_view(canned).starts_with(so_far)) {
      rest = canned.substr(so_far.size());
    } else if (so_far.find(results_close) != std::string_view::npos) {
      const auto pos = canned.find(results_close);
      if (pos != std::string::npos) rest = canned.substr(pos + results_close.size());
    }
    return apply_stop(std::move(rest), req.stop);
  }

  std::string name() const override { return "replay"; }

 private:
  std::map<std::string, std::vector<std::string>> texts_;
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Picks one twin instance uniformly; deterministic per (seed, query, sample).
class RandomAnswerPolicy : public PolicyBackend {
 public:
  explicit RandomAnswerPolicy(std::uint64_t seed = 0) : seed_(seed) {}

  std::string generate(const GenerationRequest& req) override {
    const auto parts = split_prompt(req.context);
    if (!parts) throw BackendError("random policy: context lacks the prompt sections");
    const auto ids = parse_twin(parts->twin_json, TwinParseOptions{".", false}).instance_ids();
    SceneRng rng(fnv1a(req.query_id, seed_ ^ 0x9E3779B97F4A7C15ull) + static_cast<std::uint64_t>(req.sample));
    AnswerBlock a = AnswerBlock::none();
    if (!ids.empty()) {
      a.no_target = false;
      a.instances = {ids[rng.next() % ids.size()]};
    }
    return apply_stop(reason_tag("I pick an instance at random.") + answer_tag(a), req.stop);
  }

  std::string name() const override { return "random"; }

 private:
  std::uint64_t seed_;
};

// Always answers that nothing matches.
class EmptyAnswerPolicy : public PolicyBackend {
 public:
  std::string generate(const GenerationRequest& req) override {
    return apply_stop(reason_tag("Nothing in the twin matches the query.") + answer_tag(AnswerBlock::none()), req.stop);
  }
  std::string name() const override { return "empty"; }
};

// Returns a fixed string for every request. For tests.
class FixedTextPolicy : public PolicyBackend {
 public:
  explicit FixedTextPolicy(std::string text) : text_(std::move(text)) {}
  std::string generate(const GenerationRequest& req) override { return apply_stop(text_, req.stop); }
  std::string name() const override { return "fixed"; }

 private:
  std::string text_;
};

// OpenAI-compatible chat endpoint. The prompt is the user turn; a rollout in
// progress is sent as a trailing assistant turn to be continued.
class HttpPolicy : public PolicyBackend {
 public:
  HttpPolicy(Endpoint ep, double temperature = 0.7, int max_tokens = 1024)
      : client_(std::move(ep)), temperature_(temperature), max_tokens_(max_tokens) {}

  std::string generate(const GenerationRequest& req) override {
    std::string_view prompt = req.context;
    std::string_view so_far;
    if (const auto parts = split_prompt(req.context)) {
      so_far = parts->rollout;
      prompt = std::string_view(req.context).substr(0, req.context.size() - so_far.size());
    }
    ChatRequest chat;
    chat.messages.push_back({"user", std::string(prompt)});
    if (!so_far.empty()) {
      chat.messages.push_back({"assistant", std::string(so_far)});
      chat.extra = Json{{"continue_final_message", true}, {"add_generation_prompt", false}};
    }
    if (!req.stop.empty()) chat.stop.push_back(req.stop);
    chat.temperature = temperature_;
    chat.max_tokens = max_tokens_;
    const ChatReply reply = client_.complete(chat);
    std::string text = reply.content;
    // Servers drop the matched stop string; restore it when a plan was left open.
    if (!req.stop.empty() && reply.finish_reason == "stop" && !text.ends_with(req.stop)) {
      const std::string all = std::string(so_far) + text;
      const auto opens = count(all, open_tag(BlockKind::plan));
      const auto closes = count(all, close_tag(BlockKind::plan));
      if (opens > closes) text += req.stop;
    }
    return apply_stop(std::move(text), req.stop);
  }

  std::string name() const override { return "http:" + client_.endpoint().model; }

 private:
  static std::size_t count(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + needle.size())) ++n;
    return n;
  }

  ChatClient client_;
  double temperature_;
  int max_tokens_;
};

}  // namespace twinseg
