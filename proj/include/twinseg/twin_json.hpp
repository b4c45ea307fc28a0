#pragma once

// Twin JSON format, schema_version 1.
//
//   {
//     "frames": [
//       {"t": 1, "instances": [
//         {"id": 3,
//          "mask": {"width": W, "height": H, "runs": [...]}   (or a relative PNG path)
//          "depth_stats": {"mean", "min", "max", "variance", "pixel_count"},
//          "mean_depth": number,
//          "semantic_label": string,
//          "x_bbox": [x_min, y_min, x_max, y_max],            (optional, derived from mask)
//          "x_confidence": number in [0,1],                   (optional, default 1)
//          "x_derived": {key: any}}                           (optional)
//       ]}
//     ],
//     "schema_version": 1,
//     "source": {"video_id": string, "extractor": string}
//   }
//
// Serialization sorts object keys, instances by id and frames by t, and
// always writes masks inline.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "twinseg/error.hpp"
#include "twinseg/png_io.hpp"
#include "twinseg/twin.hpp"

namespace twinseg {

inline constexpr int kTwinSchemaVersion = 1;

inline Json mask_to_json(const Mask& m) {
  return Json{{"width", m.width()}, {"height", m.height()}, {"runs", m.runs()}};
}

inline Json depth_stats_to_json(const DepthStats& s) {
  return Json{{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"variance", s.variance}, {"pixel_count", s.pixel_count}};
}

inline Json instance_to_json(const InstanceRecord& r) {
  Json j;
  j["id"] = r.id;
  j["mask"] = mask_to_json(r.mask);
  j["depth_stats"] = depth_stats_to_json(r.depth_stats);
  j["mean_depth"] = r.mean_depth;
  j["semantic_label"] = r.semantic_label;
  j["x_bbox"] = Json::array({r.bbox.x_min, r.bbox.y_min, r.bbox.x_max, r.bbox.y_max});
  j["x_confidence"] = r.confidence;
  Json derived = Json::object();
  for (const auto& [k, v] : r.derived) derived[k] = v;
  j["x_derived"] = std::move(derived);
  return j;
}

inline Json twin_to_json(const TwinSequence& seq) {
  std::vector<const TwinFrame*> frames;
  for (const auto& f : seq.frames) frames.push_back(&f);
  std::stable_sort(frames.begin(), frames.end(), [](auto* a, auto* b) { return a->t < b->t; });
  Json jframes = Json::array();
  for (const auto* f : frames) {
    std::vector<const InstanceRecord*> inst;
    for (const auto& i : f->instances) inst.push_back(&i);
    std::stable_sort(inst.begin(), inst.end(), [](auto* a, auto* b) { return a->id < b->id; });
    Json jinst = Json::array();
    for (const auto* i : inst) jinst.push_back(instance_to_json(*i));
    jframes.push_back(Json{{"t", f->t}, {"instances", std::move(jinst)}});
  }
  return Json{{"schema_version", kTwinSchemaVersion},
              {"source", Json{{"video_id", seq.source.video_id}, {"extractor", seq.source.extractor}}},
              {"frames", std::move(jframes)}};
}

// Compact single-line JSON when indent < 0.
inline std::string serialize_twin(const TwinSequence& seq, int indent = -1) {
  return twin_to_json(seq).dump(indent);
}

struct TwinParseOptions {
  // Directory that relative mask paths resolve against.
  std::filesystem::path base_dir = ".";
  // Run validate_twin after decoding.
  bool validate = true;
};

namespace detail {

inline const Json& require_key(const Json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path, std::string("missing key \"") + key + "\"");
  return *it;
}

inline double require_number(const Json& obj, const char* key, const std::string& path) {
  const Json& v = require_key(obj, key, path);
  if (!v.is_number()) throw ValidationError(path + "." + key, "expected a number");
  return v.get<double>();
}

inline std::uint64_t require_count(const Json& obj, const char* key, const std::string& path) {
  const Json& v = require_key(obj, key, path);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ValidationError(path + "." + key, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline Mask mask_from_json(const Json& j, const std::string& path, const TwinParseOptions& opt) {
  if (j.is_string()) {
    const std::filesystem::path rel = j.get<std::string>();
    const auto full = rel.is_absolute() ? rel : opt.base_dir / rel;
    try {
      return read_mask_png(full);
    } catch (const OperationalError& e) {
      throw ValidationError(path, e.what());
    }
  }
  if (!j.is_object()) throw ValidationError(path, "mask must be an object or a path string");
  const auto w = require_count(j, "width", path);
  const auto h = require_count(j, "height", path);
  const Json& runs = require_key(j, "runs", path);
  if (!runs.is_array()) throw ValidationError(path + ".runs", "expected an array");
  std::vector<std::uint32_t> r;
  r.reserve(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const Json& v = runs[i];
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0 || v.get<std::int64_t>() > 0xFFFFFFFFll) {
      throw ValidationError(path + ".runs[" + std::to_string(i) + "]", "run counts must be non-negative integers");
    }
    r.push_back(v.get<std::uint32_t>());
  }
  if (w > 1u << 20 || h > 1u << 20) throw ValidationError(path, "mask dimensions out of range");
  if (auto problem = Mask::check(static_cast<int>(w), static_cast<int>(h), r)) throw ValidationError(path, *problem);
  return Mask(static_cast<int>(w), static_cast<int>(h), std::move(r));
}

inline InstanceRecord instance_from_json(const Json& j, const std::string& path, const TwinParseOptions& opt) {
  if (!j.is_object()) throw ValidationError(path, "instance must be an object");
  InstanceRecord r;
  const auto id = require_count(j, "id", path);
  if (id > 0xFFFFFFFFull) throw ValidationError(path + ".id", "id out of range");
  r.id = static_cast<InstanceId>(id);
  r.mask = mask_from_json(require_key(j, "mask", path), path + ".mask", opt);
  const Json& ds = require_key(j, "depth_stats", path);
  const std::string dpath = path + ".depth_stats";
  if (!ds.is_object()) throw ValidationError(dpath, "expected an object");
  r.depth_stats.mean = require_number(ds, "mean", dpath);
  r.depth_stats.min = require_number(ds, "min", dpath);
  r.depth_stats.max = require_number(ds, "max", dpath);
  r.depth_stats.variance = require_number(ds, "variance", dpath);
  r.depth_stats.pixel_count = require_count(ds, "pixel_count", dpath);
  r.mean_depth = require_number(j, "mean_depth", path);
  const Json& label = require_key(j, "semantic_label", path);
  if (!label.is_string()) throw ValidationError(path + ".semantic_label", "expected a string");
  r.semantic_label = label.get<std::string>();
  if (auto it = j.find("x_confidence"); it != j.end()) {
    if (!it->is_number()) throw ValidationError(path + ".x_confidence", "expected a number");
    r.confidence = it->get<double>();
  }
  if (auto it = j.find("x_bbox"); it != j.end()) {
    if (!it->is_array() || it->size() != 4 || !std::all_of(it->begin(), it->end(), [](const Json& v) { return v.is_number_integer(); })) {
      throw ValidationError(path + ".x_bbox", "expected [x_min, y_min, x_max, y_max] integers");
    }
    r.bbox = BoundingBox{(*it)[0].get<int>(), (*it)[1].get<int>(), (*it)[2].get<int>(), (*it)[3].get<int>()};
  } else if (auto box = bounding_box(r.mask)) {
    r.bbox = *box;
  }
  if (auto it = j.find("x_derived"); it != j.end()) {
    if (!it->is_object()) throw ValidationError(path + ".x_derived", "expected an object");
    for (auto d = it->begin(); d != it->end(); ++d) r.derived.emplace(d.key(), d.value());
  }
  return r;
}

}  // namespace detail

inline TwinSequence twin_from_json(const Json& doc, const TwinParseOptions& opt = {}) {
  if (!doc.is_object()) throw ValidationError("", "twin document must be a JSON object");
  const Json& version = detail::require_key(doc, "schema_version", "");
  if (!version.is_number_integer() || version.get<int>() != kTwinSchemaVersion) {
    throw SchemaVersionError("schema_version", "unsupported schema_version " + version.dump() + " (expected " +
                                                   std::to_string(kTwinSchemaVersion) + ")");
  }
  TwinSequence seq;
  if (auto src = doc.find("source"); src != doc.end()) {
    if (!src->is_object()) throw ValidationError("source", "expected an object");
    seq.source.video_id = src->value("video_id", "");
    seq.source.extractor = src->value("extractor", "");
  }
  const Json& frames = detail::require_key(doc, "frames", "");
  if (!frames.is_array()) throw ValidationError("frames", "expected an array");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Json& jf = frames[f];
    const std::string fpath = frame_path(f);
    if (!jf.is_object()) throw ValidationError(fpath, "frame must be an object");
    TwinFrame frame;
    const Json& t = detail::require_key(jf, "t", fpath);
    if (!t.is_number_integer()) throw ValidationError(fpath + ".t", "expected an integer");
    frame.t = t.get<int>();
    const Json& inst = detail::require_key(jf, "instances", fpath);
    if (!inst.is_array()) throw ValidationError(fpath + ".instances", "expected an array");
    for (std::size_t i = 0; i < inst.size(); ++i) {
      frame.instances.push_back(detail::instance_from_json(inst[i], instance_path(f, i), opt));
    }
    seq.frames.push_back(std::move(frame));
  }
  if (opt.validate) validate_twin(seq);
  return seq;
}

// Malformed JSON, missing keys and invariant violations all raise
// ValidationError with a frame/instance path.
inline TwinSequence parse_twin(std::string_view text, const TwinParseOptions& opt = {}) {
  Json doc = Json::parse(text.begin(), text.end(), nullptr, false);
  if (doc.is_discarded()) throw ValidationError("", "malformed JSON");
  return twin_from_json(doc, opt);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OperationalError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw OperationalError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw OperationalError("write failed for " + path.string());
}

inline TwinSequence load_twin_file(const std::filesystem::path& path) {
  TwinParseOptions opt;
  opt.base_dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  return parse_twin(read_text_file(path), opt);
}

}  // namespace twinseg
