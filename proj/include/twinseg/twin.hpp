#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "twinseg/depth.hpp"
#include "twinseg/error.hpp"
#include "twinseg/mask.hpp"

namespace twinseg {

using InstanceId = std::uint32_t;
using Json = nlohmann::json;

// One object instance in one frame. `id` is a track id, stable across frames.
struct InstanceRecord {
  InstanceId id = 0;
  Mask mask;
  DepthStats depth_stats;
  double mean_depth = 0.0;
  std::string semantic_label;
  double confidence = 1.0;
  BoundingBox bbox;
  // Tool-written annotations; std::map keeps serialization order fixed.
  std::map<std::string, Json> derived;

  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct TwinFrame {
  int t = 1;  // 1-based
  std::vector<InstanceRecord> instances;

  const InstanceRecord* find(InstanceId id) const {
    for (const auto& inst : instances) {
      if (inst.id == id) return &inst;
    }
    return nullptr;
  }
  InstanceRecord* find(InstanceId id) {
    for (auto& inst : instances) {
      if (inst.id == id) return &inst;
    }
    return nullptr;
  }

  friend bool operator==(const TwinFrame&, const TwinFrame&) = default;
};

struct TwinSource {
  std::string video_id;
  std::string extractor;

  friend bool operator==(const TwinSource&, const TwinSource&) = default;
};

// A static image is a sequence with exactly one frame.
struct TwinSequence {
  std::vector<TwinFrame> frames;
  TwinSource source;

  std::size_t frame_count() const noexcept { return frames.size(); }

  bool contains(InstanceId id) const {
    return std::any_of(frames.begin(), frames.end(), [id](const TwinFrame& f) { return f.find(id) != nullptr; });
  }

  // Raster size shared by all masks; nullopt for a twin with no instances.
  std::optional<std::pair<int, int>> raster_size() const {
    for (const auto& f : frames) {
      if (!f.instances.empty()) return std::make_pair(f.instances.front().mask.width(), f.instances.front().mask.height());
    }
    return std::nullopt;
  }

  std::vector<InstanceId> instance_ids() const {
    std::set<InstanceId> ids;
    for (const auto& f : frames) {
      for (const auto& i : f.instances) ids.insert(i.id);
    }
    return {ids.begin(), ids.end()};
  }

  friend bool operator==(const TwinSequence&, const TwinSequence&) = default;
};

// Builds a record whose depth statistics and bbox are derived from the mask.
inline InstanceRecord make_instance(InstanceId id, Mask mask, const DepthMap& depth, std::string label,
                                    double confidence = 1.0) {
  InstanceRecord r;
  r.id = id;
  r.depth_stats = compute_depth_stats(mask, depth);
  r.mean_depth = r.depth_stats.mean;
  r.semantic_label = std::move(label);
  r.confidence = confidence;
  auto box = bounding_box(mask);
  if (!box) throw ValidationError("", "instance " + std::to_string(id) + " has an empty mask");
  r.bbox = *box;
  r.mask = std::move(mask);
  return r;
}

inline std::string frame_path(std::size_t f) { return "frames[" + std::to_string(f) + "]"; }

inline std::string instance_path(std::size_t f, std::size_t i) {
  return frame_path(f) + ".instances[" + std::to_string(i) + "]";
}

// Throws ValidationError naming the first offending frame/instance.
inline void validate_twin(const TwinSequence& seq) {
  if (seq.frames.empty()) throw ValidationError("frames", "twin has no frames");
  std::optional<std::pair<int, int>> dims;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    if (frame.t != static_cast<int>(f) + 1) {
      throw ValidationError(frame_path(f) + ".t", "expected t=" + std::to_string(f + 1) + ", found " + std::to_string(frame.t));
    }
    std::set<InstanceId> seen;
    for (std::size_t i = 0; i < frame.instances.size(); ++i) {
      const auto& inst = frame.instances[i];
      const std::string path = instance_path(f, i);
      if (!seen.insert(inst.id).second) {
        throw ValidationError(path + ".id", "duplicate instance id " + std::to_string(inst.id));
      }
      if (auto problem = Mask::check(inst.mask.width(), inst.mask.height(), inst.mask.runs())) {
        throw ValidationError(path + ".mask", *problem);
      }
      const auto here = std::make_pair(inst.mask.width(), inst.mask.height());
      if (!dims) {
        dims = here;
      } else if (*dims != here) {
        throw ValidationError(path + ".mask", "mask is " + std::to_string(here.first) + "x" + std::to_string(here.second) +
                                                  " but earlier masks are " + std::to_string(dims->first) + "x" +
                                                  std::to_string(dims->second));
      }
      const auto& ds = inst.depth_stats;
      const bool finite = std::isfinite(ds.mean) && std::isfinite(ds.min) && std::isfinite(ds.max) &&
                          std::isfinite(ds.variance) && std::isfinite(inst.mean_depth);
      if (!finite) throw ValidationError(path + ".depth_stats", "non-finite depth statistic");
      if (ds.pixel_count < 1) throw ValidationError(path + ".depth_stats.pixel_count", "pixel_count must be >= 1");
      if (ds.pixel_count != inst.mask.area()) {
        throw ValidationError(path + ".depth_stats.pixel_count", "pixel_count " + std::to_string(ds.pixel_count) +
                                                                     " differs from mask area " +
                                                                     std::to_string(inst.mask.area()));
      }
      if (!(ds.min <= ds.mean && ds.mean <= ds.max)) {
        throw ValidationError(path + ".depth_stats", "requires min <= mean <= max");
      }
      if (ds.variance < 0.0) throw ValidationError(path + ".depth_stats.variance", "variance is negative");
      if (inst.mean_depth != ds.mean) {
        throw ValidationError(path + ".mean_depth", "instance " + std::to_string(inst.id) + " mean_depth " +
                                                        std::to_string(inst.mean_depth) +
                                                        " differs from depth_stats.mean " + std::to_string(ds.mean));
      }
      if (!(inst.confidence >= 0.0 && inst.confidence <= 1.0)) {
        throw ValidationError(path + ".x_confidence", "confidence outside [0,1]");
      }
      const auto box = bounding_box(inst.mask);
      if (!box || *box != inst.bbox) {
        throw ValidationError(path + ".x_bbox", "bbox is not the tight bounding box of the mask");
      }
    }
  }
}

}  // namespace twinseg
