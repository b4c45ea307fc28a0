#pragma once

// Tool vocabulary used by plans to refine a twin. Every tool writes derived
// keys that start with its own name:
//
//   size(id)                   "size_px"                   foreground pixel count
//   relative_depth(a, b)       "relative_depth:<other>"    "nearer" | "farther" | "tie"
//   spatial_relation(a, b)     "spatial_relation:<other>"  "left_of" | "right_of" | "above" | "below" | "coincident"
//   distance_2d(a, b)          "distance_2d:<other>"       centroid distance in pixels
//   depth_rank()               "depth_rank"                1 = nearest, ties share the smaller rank
//   temporal_span(id)          "temporal_span"             {first_frame, last_frame, n_frames}
//   motion(id)                 "motion"                    {dx, dy, speed}
//   filter_label(pattern)      "filter_label:<pattern>"    case-insensitive substring match
//
// Pair tools write on both instances, each naming the other.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "twinseg/rollout.hpp"
#include "twinseg/twin.hpp"

namespace twinseg {

struct ArgSpec {
  std::string name;
  std::string type;  // "integer" or "string"
  bool required = true;
};

struct ToolSpec {
  std::string name;
  std::vector<ArgSpec> args;
  std::string description;
  std::vector<std::string> writes;
};

struct FrameFailure {
  int t = 0;
  std::string reason;
};

struct CallStatus {
  std::string tool;
  bool ok = true;
  std::string reason;  // set when !ok: unknown-tool, bad-args, missing-instance, no-common-frame
  std::vector<FrameFailure> frame_failures;
  std::vector<std::string> keys_written;
  double wall_ms = 0.0;
};

struct ExecutionReport {
  std::vector<CallStatus> calls;  // one per plan item, in plan order
  double wall_ms = 0.0;
};

namespace tool_detail {

// Accumulates writes for one call; applied to the twin only on success.
struct Writes {
  struct Entry {
    std::size_t frame;
    InstanceId id;
    std::string key;
    Json value;
  };
  std::vector<Entry> entries;

  void put(std::size_t frame, InstanceId id, std::string key, Json value) {
    entries.push_back({frame, id, std::move(key), std::move(value)});
  }
};

struct Context {
  const Json& args;
  const TwinSequence& twin;
  Writes& writes;
  CallStatus& status;

  void fail(std::string reason) {
    status.ok = false;
    status.reason = std::move(reason);
  }
  void frame_fail(std::size_t f, std::string reason) {
    status.frame_failures.push_back({twin.frames[f].t, std::move(reason)});
  }
  InstanceId id_arg(const char* name) const { return args.at(name).get<InstanceId>(); }
};

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline void tool_size(Context& c) {
  const InstanceId id = c.id_arg("id");
  if (!c.twin.contains(id)) return c.fail("missing-instance");
  for (std::size_t f = 0; f < c.twin.frames.size(); ++f) {
    if (const auto* inst = c.twin.frames[f].find(id)) c.writes.put(f, id, "size_px", inst->mask.area());
  }
}

// Runs fn(frame, a, b) on frames where both exist; records per-frame gaps.
template <typename Fn>
void for_pair(Context& c, Fn&& fn) {
  const InstanceId a = c.id_arg("a"), b = c.id_arg("b");
  if (a == b) return c.fail("bad-args");
  if (!c.twin.contains(a) || !c.twin.contains(b)) return c.fail("missing-instance");
  bool any = false;
  for (std::size_t f = 0; f < c.twin.frames.size(); ++f) {
    const auto* ia = c.twin.frames[f].find(a);
    const auto* ib = c.twin.frames[f].find(b);
    if (ia && ib) {
      fn(f, *ia, *ib);
      any = true;
    } else if (ia || ib) {
      c.frame_fail(f, "missing-instance");
    }
  }
  if (!any) c.fail("no-common-frame");
}

inline void tool_relative_depth(Context& c) {
  for_pair(c, [&](std::size_t f, const InstanceRecord& a, const InstanceRecord& b) {
    std::string ra = "tie", rb = "tie";
    if (a.mean_depth < b.mean_depth) {
      ra = "nearer";
      rb = "farther";
    } else if (a.mean_depth > b.mean_depth) {
      ra = "farther";
      rb = "nearer";
    }
    c.writes.put(f, a.id, "relative_depth:" + std::to_string(b.id), ra);
    c.writes.put(f, b.id, "relative_depth:" + std::to_string(a.id), rb);
  });
}

// Relation of a to b from centroids: horizontal when |dx| >= |dy|.
inline std::string spatial_relation(Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  if (dx == 0.0 && dy == 0.0) return "coincident";
  if (std::abs(dx) >= std::abs(dy)) return a.x < b.x ? "left_of" : "right_of";
  return a.y < b.y ? "above" : "below";
}

inline void tool_spatial_relation(Context& c) {
  for_pair(c, [&](std::size_t f, const InstanceRecord& a, const InstanceRecord& b) {
    const Point2 ca = *centroid(a.mask), cb = *centroid(b.mask);
    c.writes.put(f, a.id, "spatial_relation:" + std::to_string(b.id), spatial_relation(ca, cb));
    c.writes.put(f, b.id, "spatial_relation:" + std::to_string(a.id), spatial_relation(cb, ca));
  });
}

inline void tool_distance_2d(Context& c) {
  for_pair(c, [&](std::size_t f, const InstanceRecord& a, const InstanceRecord& b) {
    const Point2 ca = *centroid(a.mask), cb = *centroid(b.mask);
    const double d = std::hypot(cb.x - ca.x, cb.y - ca.y);
    c.writes.put(f, a.id, "distance_2d:" + std::to_string(b.id), d);
    c.writes.put(f, b.id, "distance_2d:" + std::to_string(a.id), d);
  });
}

inline void tool_depth_rank(Context& c) {
  for (std::size_t f = 0; f < c.twin.frames.size(); ++f) {
    const auto& inst = c.twin.frames[f].instances;
    for (const auto& i : inst) {
      const auto nearer = std::count_if(inst.begin(), inst.end(),
                                        [&](const InstanceRecord& o) { return o.mean_depth < i.mean_depth; });
      c.writes.put(f, i.id, "depth_rank", 1 + nearer);
    }
  }
}

inline std::vector<std::size_t> presence(const TwinSequence& twin, InstanceId id) {
  std::vector<std::size_t> frames;
  for (std::size_t f = 0; f < twin.frames.size(); ++f) {
    if (twin.frames[f].find(id)) frames.push_back(f);
  }
  return frames;
}

inline void tool_temporal_span(Context& c) {
  const InstanceId id = c.id_arg("id");
  const auto present = presence(c.twin, id);
  if (present.empty()) return c.fail("missing-instance");
  const Json span{{"first_frame", c.twin.frames[present.front()].t},
                  {"last_frame", c.twin.frames[present.back()].t},
                  {"n_frames", present.size()}};
  for (auto f : present) c.writes.put(f, id, "temporal_span", span);
}

inline void tool_motion(Context& c) {
  const InstanceId id = c.id_arg("id");
  const auto present = presence(c.twin, id);
  if (present.empty()) return c.fail("missing-instance");
  std::vector<Point2> centers;
  for (auto f : present) centers.push_back(*centroid(c.twin.frames[f].find(id)->mask));
  double path = 0.0;
  for (std::size_t k = 1; k < centers.size(); ++k) {
    path += std::hypot(centers[k].x - centers[k - 1].x, centers[k].y - centers[k - 1].y);
  }
  const int elapsed = c.twin.frames[present.back()].t - c.twin.frames[present.front()].t;
  const double speed = elapsed > 0 ? path / elapsed : 0.0;
  const Json m{{"dx", centers.back().x - centers.front().x}, {"dy", centers.back().y - centers.front().y}, {"speed", speed}};
  for (auto f : present) c.writes.put(f, id, "motion", m);
}

inline void tool_filter_label(Context& c) {
  const std::string pattern = c.args.at("pattern").get<std::string>();
  const std::string needle = lower(pattern);
  for (std::size_t f = 0; f < c.twin.frames.size(); ++f) {
    for (const auto& i : c.twin.frames[f].instances) {
      const bool hit = lower(i.semantic_label).find(needle) != std::string::npos;
      c.writes.put(f, i.id, "filter_label:" + pattern, hit);
    }
  }
}

inline bool args_match(const ToolSpec& spec, const Json& args) {
  if (!args.is_object()) return false;
  for (auto it = args.begin(); it != args.end(); ++it) {
    const bool known = std::any_of(spec.args.begin(), spec.args.end(), [&](const ArgSpec& a) { return a.name == it.key(); });
    if (!known) return false;
  }
  for (const auto& a : spec.args) {
    auto it = args.find(a.name);
    if (it == args.end()) {
      if (a.required) return false;
      continue;
    }
    if (a.type == "integer") {
      if (!it->is_number_integer() || it->get<std::int64_t>() < 0 || it->get<std::int64_t>() > 0xFFFFFFFFll) return false;
    } else if (a.type == "string") {
      if (!it->is_string()) return false;
    }
  }
  return true;
}

}  // namespace tool_detail

using ToolFn = std::function<void(tool_detail::Context&)>;

class ToolRegistry {
 public:
  // Registry holding the built-in tools.
  static ToolRegistry standard() {
    using namespace tool_detail;
    ToolRegistry r;
    const ArgSpec id{"id", "integer"}, a{"a", "integer"}, b{"b", "integer"};
    r.add({"size", {id}, "Foreground pixel count of an instance in every frame where it appears.", {"size_px"}}, tool_size);
    r.add({"relative_depth", {a, b}, "Which of two instances is nearer the camera, by mean depth, per frame.",
           {"relative_depth:<other>"}},
          tool_relative_depth);
    r.add({"spatial_relation", {a, b},
           "Image-plane relation between mask centroids (x right, y down); horizontal wins when |dx| >= |dy|.",
           {"spatial_relation:<other>"}},
          tool_spatial_relation);
    r.add({"distance_2d", {a, b}, "Euclidean distance between mask centroids in pixels, per frame.",
           {"distance_2d:<other>"}},
          tool_distance_2d);
    r.add({"depth_rank", {}, "Rank of every instance by mean depth within each frame; 1 is nearest, ties share a rank.",
           {"depth_rank"}},
          tool_depth_rank);
    r.add({"temporal_span", {id}, "First frame, last frame and number of frames in which an instance appears.",
           {"temporal_span"}},
          tool_temporal_span);
    r.add({"motion", {id}, "Centroid displacement from first to last appearance and mean speed in pixels per frame.",
           {"motion"}},
          tool_motion);
    r.add({"filter_label", {{"pattern", "string"}}, "Case-insensitive substring match of the pattern against every label.",
           {"filter_label:<pattern>"}},
          tool_filter_label);
    return r;
  }

  // Throws OperationalError on a duplicate name or a key outside the tool's namespace.
  void add(ToolSpec spec, ToolFn fn) {
    if (spec.name.empty() || tools_.count(spec.name)) throw OperationalError("duplicate or empty tool name: " + spec.name);
    for (const auto& w : spec.writes) {
      if (!w.starts_with(spec.name)) throw OperationalError("tool " + spec.name + " writes key outside its namespace: " + w);
    }
    const std::string name = spec.name;
    tools_.emplace(name, Entry{std::move(spec), std::move(fn)});
  }

  const ToolSpec* find(const std::string& name) const {
    auto it = tools_.find(name);
    return it == tools_.end() ? nullptr : &it->second.spec;
  }

  // True when some tool lists `key` in its writes; "<...>" matches any suffix.
  bool declares_key(const std::string& key) const {
    for (const auto& [name, e] : tools_) {
      for (const auto& w : e.spec.writes) {
        const auto hole = w.find('<');
        if (hole == std::string::npos ? key == w : key.starts_with(w.substr(0, hole))) return true;
      }
    }
    return false;
  }

  // JSON manifest of every tool, sorted by name.
  Json manifest() const {
    Json tools = Json::array();
    for (const auto& [name, e] : tools_) {
      Json args = Json::array();
      for (const auto& a : e.spec.args) args.push_back(Json{{"name", a.name}, {"type", a.type}, {"required", a.required}});
      tools.push_back(Json{{"name", name}, {"args", args}, {"description", e.spec.description}, {"writes", e.spec.writes}});
    }
    return Json{{"manifest_version", 1}, {"tools", tools}};
  }

  // Applies the plan in order to a copy of `twin`. Failed calls leave the
  // copy untouched and do not stop later calls.
  std::pair<TwinSequence, ExecutionReport> execute(const std::vector<ToolCall>& plan, const TwinSequence& twin) const {
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    TwinSequence refined = twin;
    ExecutionReport report;
    for (const auto& call : plan) {
      const auto call_start = Clock::now();
      CallStatus status;
      status.tool = call.name;
      auto it = tools_.find(call.name);
      if (it == tools_.end()) {
        status.ok = false;
        status.reason = "unknown-tool";
      } else if (!tool_detail::args_match(it->second.spec, call.args)) {
        status.ok = false;
        status.reason = "bad-args";
      } else {
        tool_detail::Writes writes;
        tool_detail::Context ctx{call.args, refined, writes, status};
        it->second.fn(ctx);
        if (status.ok) {
          for (auto& w : writes.entries) {
            refined.frames[w.frame].find(w.id)->derived[w.key] = std::move(w.value);
            if (std::find(status.keys_written.begin(), status.keys_written.end(), w.key) == status.keys_written.end()) {
              status.keys_written.push_back(w.key);
            }
          }
        }
      }
      status.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - call_start).count();
      report.calls.push_back(std::move(status));
    }
    report.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    return {std::move(refined), std::move(report)};
  }

 private:
  struct Entry {
    ToolSpec spec;
    ToolFn fn;
  };
  std::map<std::string, Entry> tools_;
};

inline const ToolRegistry& standard_tools() {
  static const ToolRegistry registry = ToolRegistry::standard();
  return registry;
}

inline std::pair<TwinSequence, ExecutionReport> execute_plan(const std::vector<ToolCall>& plan, const TwinSequence& twin) {
  return standard_tools().execute(plan, twin);
}

}  // namespace twinseg
