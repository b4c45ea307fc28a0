#pragma once

// Deterministic synthetic scenes with exact ground truth. Shapes are
// rasterized without noise onto a layered depth map (nearer shape wins), so
// every mask, depth statistic and query answer has an exact value.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "twinseg/depth.hpp"
#include "twinseg/error.hpp"
#include "twinseg/mask.hpp"
#include "twinseg/rewards.hpp"
#include "twinseg/rollout.hpp"
#include "twinseg/twin.hpp"
#include "twinseg/twin_json.hpp"

namespace twinseg {

enum class ShapeKind { rect, disc };

inline std::string_view shape_noun(ShapeKind k) { return k == ShapeKind::rect ? "rectangle" : "disc"; }

struct ShapeTrack {
  InstanceId id = 1;
  ShapeKind kind = ShapeKind::rect;
  int width = 8;   // rect extent; discs use radius
  int height = 8;
  int radius = 4;
  std::string color = "red";
  double depth = 1.0;
  int x = 0;  // center at frame 1
  int y = 0;
  int vx = 0;  // pixels per frame
  int vy = 0;
  int first_frame = 1;
  int last_frame = 1;

  std::string label() const { return color + " " + std::string(shape_noun(kind)); }
};

struct SceneSpec {
  std::string scene_id = "scene";
  std::uint64_t seed = 0;
  int frames = 1;
  int width = 96;
  int height = 72;
  double background_depth = 100.0;
  std::vector<ShapeTrack> shapes;
  // Permit equal shape depths (otherwise rejected).
  bool allow_depth_ties = false;
};

enum class QueryCategory { semantic, spatial, temporal };

inline std::string_view to_string(QueryCategory c) {
  switch (c) {
    case QueryCategory::semantic: return "semantic";
    case QueryCategory::spatial: return "spatial";
    case QueryCategory::temporal: return "temporal";
  }
  return "semantic";
}

inline std::optional<QueryCategory> category_from_string(std::string_view s) {
  if (s == "semantic") return QueryCategory::semantic;
  if (s == "spatial") return QueryCategory::spatial;
  if (s == "temporal") return QueryCategory::temporal;
  return std::nullopt;
}

// Query templates. The text grammar is fixed so that scripted policies can
// read it back with parse_query.
enum class QueryKind {
  label,          // "Segment the {label}."
  kind_all,       // "Segment every {noun}."
  nearest,        // "Segment the object closest to the camera."
  farthest,       // "Segment the object farthest from the camera."
  largest,        // "Segment the largest object."
  left_of,        // "Segment the object left of the {label}."
  right_of,       // "Segment the object right of the {label}."
  appears_last,   // "Segment the object that appears last."
  appears_first,  // "Segment the object that appears first."
  moves_right,    // "Segment the object that moves right."
  moves_left,     // "Segment the object that moves left."
};

inline std::string_view to_string(QueryKind k) {
  switch (k) {
    case QueryKind::label: return "label";
    case QueryKind::kind_all: return "kind_all";
    case QueryKind::nearest: return "nearest";
    case QueryKind::farthest: return "farthest";
    case QueryKind::largest: return "largest";
    case QueryKind::left_of: return "left_of";
    case QueryKind::right_of: return "right_of";
    case QueryKind::appears_last: return "appears_last";
    case QueryKind::appears_first: return "appears_first";
    case QueryKind::moves_right: return "moves_right";
    case QueryKind::moves_left: return "moves_left";
  }
  return "label";
}

inline QueryCategory category_of(QueryKind k) {
  switch (k) {
    case QueryKind::label:
    case QueryKind::kind_all: return QueryCategory::semantic;
    case QueryKind::nearest:
    case QueryKind::farthest:
    case QueryKind::largest:
    case QueryKind::left_of:
    case QueryKind::right_of: return QueryCategory::spatial;
    default: return QueryCategory::temporal;
  }
}

struct ParsedQuery {
  QueryKind kind;
  std::string argument;  // label or noun when the template takes one
};

inline std::string render_query(const ParsedQuery& q) {
  switch (q.kind) {
    case QueryKind::label: return "Segment the " + q.argument + ".";
    case QueryKind::kind_all: return "Segment every " + q.argument + ".";
    case QueryKind::nearest: return "Segment the object closest to the camera.";
    case QueryKind::farthest: return "Segment the object farthest from the camera.";
    case QueryKind::largest: return "Segment the largest object.";
    case QueryKind::left_of: return "Segment the object left of the " + q.argument + ".";
    case QueryKind::right_of: return "Segment the object right of the " + q.argument + ".";
    case QueryKind::appears_last: return "Segment the object that appears last.";
    case QueryKind::appears_first: return "Segment the object that appears first.";
    case QueryKind::moves_right: return "Segment the object that moves right.";
    case QueryKind::moves_left: return "Segment the object that moves left.";
  }
  return {};
}

inline std::optional<ParsedQuery> parse_query(std::string_view text) {
  static const std::array<QueryKind, 7> fixed = {QueryKind::nearest,       QueryKind::farthest,    QueryKind::largest,
                                                 QueryKind::appears_last,  QueryKind::appears_first,
                                                 QueryKind::moves_right,   QueryKind::moves_left};
  for (auto k : fixed) {
    if (text == render_query({k, {}})) return ParsedQuery{k, {}};
  }
  auto with_arg = [&](std::string_view prefix, QueryKind k) -> std::optional<ParsedQuery> {
    if (text.starts_with(prefix) && text.ends_with(".") && text.size() > prefix.size() + 1) {
      return ParsedQuery{k, std::string(text.substr(prefix.size(), text.size() - prefix.size() - 1))};
    }
    return std::nullopt;
  };
  if (auto q = with_arg("Segment the object left of the ", QueryKind::left_of)) return q;
  if (auto q = with_arg("Segment the object right of the ", QueryKind::right_of)) return q;
  if (auto q = with_arg("Segment every ", QueryKind::kind_all)) return q;
  if (auto q = with_arg("Segment the ", QueryKind::label)) return q;
  return std::nullopt;
}

struct QueryCase {
  std::string query_id;
  std::string scene_id;
  std::string text;
  QueryKind kind = QueryKind::label;
  QueryCategory category = QueryCategory::semantic;
  int level = 1;
  std::vector<InstanceId> gt_ids;
  FrameMasks gt;
};

struct SceneOutput {
  TwinSequence twin;
  std::vector<DepthMap> depth;  // one per frame
  std::vector<QueryCase> queries;
};

// SplitMix64; the generator never touches std distributions, whose output
// differs between standard libraries.
class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  // Uniform integer in [lo, hi].
  int uniform(int lo, int hi) { return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double unit() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }
  bool chance(double p) { return unit() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(next() % i)]);
  }

 private:
  std::uint64_t state_;
};

inline int difficulty_level(std::size_t n_shapes) {
  if (n_shapes <= 3) return 1;
  if (n_shapes == 4) return 2;
  return 3;
}

inline void validate_scene(const SceneSpec& spec) {
  if (spec.frames < 1) throw ValidationError("frames", "scene needs at least one frame");
  if (spec.width < 1 || spec.height < 1) throw ValidationError("raster", "raster dimensions must be positive");
  std::set<InstanceId> ids;
  std::set<double> depths;
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto& s = spec.shapes[i];
    const std::string path = "shapes[" + std::to_string(i) + "]";
    if (!ids.insert(s.id).second) throw ValidationError(path + ".id", "duplicate shape id");
    if (!spec.allow_depth_ties && !depths.insert(s.depth).second) {
      throw ValidationError(path + ".depth", "depth values must be distinct");
    }
    if (s.first_frame < 1 || s.last_frame > spec.frames || s.first_frame > s.last_frame) {
      throw ValidationError(path, "presence window outside 1.." + std::to_string(spec.frames));
    }
    if (s.kind == ShapeKind::rect ? (s.width < 1 || s.height < 1) : s.radius < 0) {
      throw ValidationError(path, "shape extent must be positive");
    }
    if (!(s.depth > 0.0) || s.depth >= spec.background_depth) {
      throw ValidationError(path + ".depth", "depth must lie in (0, background_depth)");
    }
  }
}

// Pixels covered by a shape at frame t (1-based), clipped to the raster.
inline Bitmap rasterize_shape(const ShapeTrack& s, int t, int width, int height) {
  Bitmap out(width, height);
  const int cx = s.x + s.vx * (t - 1);
  const int cy = s.y + s.vy * (t - 1);
  if (s.kind == ShapeKind::rect) {
    const int x0 = cx - s.width / 2, y0 = cy - s.height / 2;
    for (int y = std::max(0, y0); y < std::min(height, y0 + s.height); ++y) {
      for (int x = std::max(0, x0); x < std::min(width, x0 + s.width); ++x) out.set(x, y);
    }
  } else {
    const int r = s.radius;
    for (int y = std::max(0, cy - r); y <= std::min(height - 1, cy + r); ++y) {
      for (int x = std::max(0, cx - r); x <= std::min(width - 1, cx + r); ++x) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) out.set(x, y);
      }
    }
  }
  return out;
}

namespace synth_detail {

struct Visible {
  std::vector<std::map<InstanceId, Bitmap>> masks;  // per frame, only nonempty
  std::vector<DepthMap> depth;
};

inline Visible composite(const SceneSpec& spec) {
  Visible v;
  std::vector<const ShapeTrack*> order;
  for (const auto& s : spec.shapes) order.push_back(&s);
  // Far to near, so nearer shapes overwrite.
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->depth > b->depth; });
  for (int t = 1; t <= spec.frames; ++t) {
    DepthMap depth(spec.width, spec.height, spec.background_depth);
    std::vector<InstanceId> owner(static_cast<std::size_t>(spec.width) * spec.height, 0);
    std::vector<std::uint8_t> owned(owner.size(), 0);
    for (const auto* s : order) {
      if (t < s->first_frame || t > s->last_frame) continue;
      const Bitmap px = rasterize_shape(*s, t, spec.width, spec.height);
      for (std::size_t i = 0; i < px.pixels.size(); ++i) {
        if (px.pixels[i]) {
          owner[i] = s->id;
          owned[i] = 1;
          depth.values[i] = s->depth;
        }
      }
    }
    std::map<InstanceId, Bitmap> frame;
    for (std::size_t i = 0; i < owner.size(); ++i) {
      if (!owned[i]) continue;
      auto [it, inserted] = frame.try_emplace(owner[i], spec.width, spec.height);
      it->second.pixels[i] = 1;
    }
    v.masks.push_back(std::move(frame));
    v.depth.push_back(std::move(depth));
  }
  return v;
}

// Pixel-enumeration centroid.
inline Point2 bitmap_centroid(const Bitmap& b) {
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < b.height; ++y) {
    for (int x = 0; x < b.width; ++x) {
      if (b.at(x, y)) {
        sx += x;
        sy += y;
        n += 1;
      }
    }
  }
  return {sx / n, sy / n};
}

inline std::size_t bitmap_area(const Bitmap& b) {
  return static_cast<std::size_t>(std::count_if(b.pixels.begin(), b.pixels.end(), [](auto p) { return p != 0; }));
}

}  // namespace synth_detail

// Exact answers for every template that has a unique, frame-consistent
// answer in this scene. Computed from the rasterized shapes, not from tools.
inline std::vector<std::pair<ParsedQuery, std::vector<InstanceId>>> feasible_queries(const SceneSpec& spec,
                                                                                     const synth_detail::Visible& vis) {
  using namespace synth_detail;
  std::vector<std::pair<ParsedQuery, std::vector<InstanceId>>> out;
  const int T = spec.frames;
  std::map<InstanceId, const ShapeTrack*> shapes;
  for (const auto& s : spec.shapes) shapes[s.id] = &s;

  std::map<InstanceId, std::vector<int>> present;  // frames where visible
  for (int t = 1; t <= T; ++t) {
    for (const auto& [id, bm] : vis.masks[t - 1]) present[id].push_back(t);
  }
  auto everywhere = [&](InstanceId id) { return present.count(id) && static_cast<int>(present[id].size()) == T; };

  // Semantic: unique labels; every noun present at least once.
  std::map<std::string, std::vector<InstanceId>> by_label, by_noun;
  for (const auto& [id, s] : shapes) {
    if (!present.count(id)) continue;
    by_label[s->label()].push_back(id);
    by_noun[std::string(shape_noun(s->kind))].push_back(id);
  }
  for (const auto& [label, ids] : by_label) {
    if (ids.size() == 1) out.push_back({{QueryKind::label, label}, ids});
  }
  for (const auto& [noun, ids] : by_noun) out.push_back({{QueryKind::kind_all, noun}, ids});

  // Depth extremes: the extreme shape must be visible in every frame.
  std::vector<std::pair<double, InstanceId>> by_depth;
  for (const auto& [id, frames] : present) by_depth.push_back({shapes[id]->depth, id});
  std::sort(by_depth.begin(), by_depth.end());
  if (by_depth.size() >= 2) {
    if (by_depth[0].first < by_depth[1].first && everywhere(by_depth[0].second)) {
      out.push_back({{QueryKind::nearest, {}}, {by_depth[0].second}});
    }
    const auto n = by_depth.size();
    if (by_depth[n - 1].first > by_depth[n - 2].first && everywhere(by_depth[n - 1].second)) {
      out.push_back({{QueryKind::farthest, {}}, {by_depth[n - 1].second}});
    }
  }

  // Largest: same strict winner by visible area in every frame (a lone shape
  // wins trivially).
  {
    std::optional<InstanceId> winner;
    bool consistent = true;
    for (int t = 1; t <= T && consistent; ++t) {
      std::vector<std::pair<std::size_t, InstanceId>> areas;
      for (const auto& [id, bm] : vis.masks[t - 1]) areas.push_back({bitmap_area(bm), id});
      std::sort(areas.rbegin(), areas.rend());
      if (areas.empty() || (areas.size() >= 2 && areas[0].first == areas[1].first)) {
        consistent = false;
      } else if (winner && *winner != areas[0].second) {
        consistent = false;
      } else {
        winner = areas[0].second;
      }
    }
    if (consistent && winner && everywhere(*winner)) out.push_back({{QueryKind::largest, {}}, {*winner}});
  }

  // Lateral relation to an anchor: exactly one other shape ever holds the
  // relation, and it holds in every frame where the pair is co-visible.
  auto relation = [](Point2 a, Point2 b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    if (dx == 0.0 && dy == 0.0) return std::string("coincident");
    if (std::abs(dx) >= std::abs(dy)) return std::string(a.x < b.x ? "left_of" : "right_of");
    return std::string(a.y < b.y ? "above" : "below");
  };
  for (const auto& [label, anchors] : by_label) {
    if (anchors.size() != 1) continue;
    const InstanceId anchor = anchors.front();
    for (const auto& [kind, rel] : {std::pair{QueryKind::left_of, "left_of"}, std::pair{QueryKind::right_of, "right_of"}}) {
      std::set<InstanceId> ever, always;
      for (const auto& [id, frames] : present) {
        if (id == anchor) continue;
        bool seen = false, all = true;
        for (int t = 1; t <= T; ++t) {
          const auto& fm = vis.masks[t - 1];
          if (!fm.count(id) || !fm.count(anchor)) continue;
          const bool holds = relation(bitmap_centroid(fm.at(id)), bitmap_centroid(fm.at(anchor))) == rel;
          seen = seen || holds;
          all = all && holds;
        }
        if (seen) ever.insert(id);
        if (seen && all) always.insert(id);
      }
      if (ever.size() == 1 && always.size() == 1) out.push_back({{kind, label}, {*always.begin()}});
    }
  }

  // Temporal order of first appearance.
  if (T >= 2 && present.size() >= 2) {
    std::vector<std::pair<int, InstanceId>> firsts;
    for (const auto& [id, frames] : present) firsts.push_back({frames.front(), id});
    std::sort(firsts.begin(), firsts.end());
    if (firsts[0].first < firsts[1].first) out.push_back({{QueryKind::appears_first, {}}, {firsts[0].second}});
    const auto n = firsts.size();
    if (firsts[n - 1].first > firsts[n - 2].first) out.push_back({{QueryKind::appears_last, {}}, {firsts[n - 1].second}});
  }

  // Net horizontal motion between first and last visible frame.
  if (T >= 2) {
    std::vector<InstanceId> right, left;
    for (const auto& [id, frames] : present) {
      if (frames.size() < 2) continue;
      const double dx = bitmap_centroid(vis.masks[frames.back() - 1].at(id)).x -
                        bitmap_centroid(vis.masks[frames.front() - 1].at(id)).x;
      if (dx > 0) right.push_back(id);
      if (dx < 0) left.push_back(id);
    }
    if (right.size() == 1) out.push_back({{QueryKind::moves_right, {}}, right});
    if (left.size() == 1) out.push_back({{QueryKind::moves_left, {}}, left});
  }
  return out;
}

inline FrameMasks ground_truth_masks(const SceneSpec& spec, const synth_detail::Visible& vis,
                                     const std::vector<InstanceId>& ids) {
  FrameMasks gt;
  for (int t = 1; t <= spec.frames; ++t) {
    Bitmap acc(spec.width, spec.height);
    bool any = false;
    for (auto id : ids) {
      auto it = vis.masks[t - 1].find(id);
      if (it == vis.masks[t - 1].end()) continue;
      any = true;
      for (std::size_t i = 0; i < acc.pixels.size(); ++i) acc.pixels[i] |= it->second.pixels[i];
    }
    if (any) {
      gt.t.push_back(t);
      gt.masks.push_back(encode_mask(acc));
    }
  }
  return gt;
}

// Builds the twin and one query per category that has a feasible template.
inline SceneOutput generate(const SceneSpec& spec) {
  validate_scene(spec);
  const auto vis = synth_detail::composite(spec);
  SceneOutput out;
  out.depth = vis.depth;
  out.twin.source = TwinSource{spec.scene_id, "twinseg-synth/1"};
  std::map<InstanceId, const ShapeTrack*> shapes;
  for (const auto& s : spec.shapes) shapes[s.id] = &s;
  for (int t = 1; t <= spec.frames; ++t) {
    TwinFrame frame;
    frame.t = t;
    for (const auto& [id, bm] : vis.masks[t - 1]) {
      frame.instances.push_back(make_instance(id, encode_mask(bm), vis.depth[t - 1], shapes[id]->label()));
    }
    out.twin.frames.push_back(std::move(frame));
  }

  SceneRng rng(spec.seed ^ 0x5EEDF00Dull);
  const auto feasible = feasible_queries(spec, vis);
  int q = 0;
  for (auto cat : {QueryCategory::semantic, QueryCategory::spatial, QueryCategory::temporal}) {
    std::vector<std::size_t> options;
    for (std::size_t i = 0; i < feasible.size(); ++i) {
      if (category_of(feasible[i].first.kind) == cat) options.push_back(i);
    }
    if (options.empty()) continue;
    const auto& [parsed, ids] = feasible[options[rng.next() % options.size()]];
    QueryCase c;
    c.query_id = spec.scene_id + "-q" + std::to_string(q++);
    c.scene_id = spec.scene_id;
    c.text = render_query(parsed);
    c.kind = parsed.kind;
    c.category = cat;
    c.level = difficulty_level(spec.shapes.size());
    c.gt_ids = ids;
    c.gt = ground_truth_masks(spec, vis, ids);
    out.queries.push_back(std::move(c));
  }
  return out;
}

// Random scene on a 3x3 grid of 32x24 cells, one shape per cell, so shapes
// never overlap and always stay inside the raster.
inline SceneSpec random_scene(std::uint64_t seed, int index) {
  SceneRng rng(seed * 0x100000001B3ull + static_cast<std::uint64_t>(index) * 0x9E3779B97F4A7C15ull + 1);
  SceneSpec spec;
  char name[32];
  std::snprintf(name, sizeof name, "scene_%04d", index);
  spec.scene_id = name;
  spec.seed = rng.next();
  spec.width = 96;
  spec.height = 72;
  spec.frames = rng.chance(0.15) ? 1 : rng.uniform(2, 8);
  const int n = rng.uniform(2, 6);
  std::vector<int> cells = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  rng.shuffle(cells);
  std::vector<std::string> colors = {"red", "green", "blue", "yellow", "purple", "orange", "cyan", "white"};
  rng.shuffle(colors);
  std::vector<int> depth_steps;
  for (int i = 0; i < 15; ++i) depth_steps.push_back(i);
  rng.shuffle(depth_steps);
  const int T = spec.frames;
  for (int i = 0; i < n; ++i) {
    ShapeTrack s;
    s.id = static_cast<InstanceId>(i + 1);
    s.kind = rng.chance(0.5) ? ShapeKind::rect : ShapeKind::disc;
    s.width = rng.uniform(6, 12);
    s.height = rng.uniform(6, 12);
    s.radius = rng.uniform(3, 5);
    s.color = colors[static_cast<std::size_t>(i)];
    s.depth = 1.0 + 0.5 * depth_steps[static_cast<std::size_t>(i)];
    s.vx = T > 1 ? rng.uniform(-1, 1) : 0;
    s.vy = T > 1 && rng.chance(0.3) ? rng.uniform(-1, 1) : 0;
    const int cell_x = cells[static_cast<std::size_t>(i)] % 3, cell_y = cells[static_cast<std::size_t>(i)] / 3;
    // Centered on the cell over the whole clip, plus a small jitter.
    s.x = cell_x * 32 + 16 - (s.vx * (T - 1)) / 2 + rng.uniform(-1, 1);
    s.y = cell_y * 24 + 12 - (s.vy * (T - 1)) / 2 + rng.uniform(-1, 1);
    if (T > 1 && rng.chance(0.4)) {
      s.first_frame = rng.uniform(1, T);
      s.last_frame = rng.uniform(s.first_frame, T);
    } else {
      s.first_frame = 1;
      s.last_frame = T;
    }
    spec.shapes.push_back(s);
  }
  return spec;
}

// Answer perturbations with an enumeration-computed expected J.
enum class PerturbMode { identity, wrong_id, dilate, erode };

struct PerturbedAnswer {
  AnswerBlock answer;
  TwinSequence twin;  // input twin, plus a synthetic instance for dilate/erode
  double expected_j = 0.0;
};

namespace synth_detail {

inline double enumerated_iou(const Bitmap& a, const Bitmap& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool pa = a.pixels[i] != 0, pb = b.pixels[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Mean IoU over the case's evaluated frames, by pixel enumeration.
inline double enumerated_j(const QueryCase& c, const std::vector<Bitmap>& pred_by_frame) {
  double sum = 0.0;
  for (std::size_t k = 0; k < c.gt.t.size(); ++k) {
    sum += enumerated_iou(pred_by_frame[static_cast<std::size_t>(c.gt.t[k] - 1)], decode_mask(c.gt.masks[k]));
  }
  return sum / static_cast<double>(c.gt.t.size());
}

}  // namespace synth_detail

inline PerturbedAnswer perturb_answer(const QueryCase& c, const TwinSequence& twin, PerturbMode mode, int k = 1) {
  const auto dims = twin.raster_size();
  if (!dims || c.gt.t.empty()) throw ValidationError("case", "case has no ground truth");
  const auto [w, h] = *dims;
  PerturbedAnswer out;
  out.twin = twin;
  std::vector<Bitmap> pred(twin.frames.size(), Bitmap(w, h));
  auto paint_ids = [&](const std::vector<InstanceId>& ids) {
    for (std::size_t f = 0; f < twin.frames.size(); ++f) {
      for (auto id : ids) {
        if (const auto* inst = twin.frames[f].find(id)) {
          const Bitmap bm = decode_mask(inst->mask);
          for (std::size_t i = 0; i < bm.pixels.size(); ++i) pred[f].pixels[i] |= bm.pixels[i];
        }
      }
    }
  };
  switch (mode) {
    case PerturbMode::identity:
      out.answer.instances = c.gt_ids;
      paint_ids(c.gt_ids);
      break;
    case PerturbMode::wrong_id: {
      std::optional<InstanceId> wrong;
      for (auto id : twin.instance_ids()) {
        if (std::find(c.gt_ids.begin(), c.gt_ids.end(), id) == c.gt_ids.end()) {
          wrong = id;
          break;
        }
      }
      if (!wrong) throw ValidationError("case", "scene has no instance outside the ground truth");
      out.answer.instances = {*wrong};
      paint_ids({*wrong});
      break;
    }
    case PerturbMode::dilate:
    case PerturbMode::erode: {
      const auto ids = twin.instance_ids();
      const InstanceId fresh = ids.empty() ? 1 : ids.back() + 1;
      for (std::size_t k_frame = 0; k_frame < c.gt.t.size(); ++k_frame) {
        const int t = c.gt.t[k_frame];
        const Mask changed = mode == PerturbMode::dilate ? dilate(c.gt.masks[k_frame], k) : erode(c.gt.masks[k_frame], k);
        if (changed.is_empty()) {
          throw ValidationError("case", "erosion by " + std::to_string(k) + " empties the mask in frame " + std::to_string(t));
        }
        InstanceRecord rec;
        rec.id = fresh;
        rec.mask = changed;
        rec.depth_stats = DepthStats{0.0, 0.0, 0.0, 0.0, changed.area()};
        rec.mean_depth = 0.0;
        rec.semantic_label = "perturbed";
        rec.bbox = *bounding_box(changed);
        out.twin.frames[static_cast<std::size_t>(t - 1)].instances.push_back(std::move(rec));
        pred[static_cast<std::size_t>(t - 1)] = decode_mask(changed);
      }
      out.answer.instances = {fresh};
      break;
    }
  }
  out.expected_j = synth_detail::enumerated_j(c, pred);
  return out;
}

// Writes <dir>/<scene>/twin.json and <dir>/<scene>/gt/<query>_t<t>.png, and
// returns one queries.jsonl line per case.
inline std::vector<std::string> write_scene(const std::filesystem::path& dir, const SceneOutput& scene) {
  const std::string scene_id = scene.twin.source.video_id;
  const auto scene_dir = dir / scene_id;
  std::filesystem::create_directories(scene_dir / "gt");
  write_text_file(scene_dir / "twin.json", serialize_twin(scene.twin) + "\n");
  std::vector<std::string> lines;
  for (const auto& c : scene.queries) {
    Json gt_masks = Json::array();
    for (std::size_t k = 0; k < c.gt.t.size(); ++k) {
      const std::string rel = scene_id + "/gt/" + c.query_id + "_t" + std::to_string(c.gt.t[k]) + ".png";
      write_mask_png(dir / rel, c.gt.masks[k]);
      gt_masks.push_back(Json{{"t", c.gt.t[k]}, {"path", rel}});
    }
    Json line{{"schema_version", 1},
              {"query_id", c.query_id},
              {"scene", scene_id},
              {"twin", scene_id + "/twin.json"},
              {"query", c.text},
              {"template", std::string(to_string(c.kind))},
              {"category", std::string(to_string(c.category))},
              {"level", c.level},
              {"gt_ids", c.gt_ids},
              {"gt_masks", std::move(gt_masks)}};
    lines.push_back(line.dump());
  }
  return lines;
}

}  // namespace twinseg
