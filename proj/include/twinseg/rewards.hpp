#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/mask.hpp"
#include "twinseg/metrics.hpp"
#include "twinseg/rollout.hpp"
#include "twinseg/twin.hpp"

namespace twinseg {

inline constexpr double kFormatOk = 0.5;
inline constexpr double kFormatBad = -0.5;
inline constexpr double kAccuracyIouThreshold = 0.5;
inline constexpr double kDefaultGamma = 0.5;
inline constexpr double kAdvantageStdFloor = 1e-8;

enum class RewardRole { teacher, student };

inline std::string_view to_string(RewardRole r) { return r == RewardRole::teacher ? "teacher" : "student"; }

// Which terms enter the total. Disabling one reproduces a reward ablation.
struct RewardToggles {
  bool format = true;
  bool accuracy = true;
  bool reasoning = true;
};

struct RewardBreakdown {
  double format = kFormatBad;
  double accuracy = 0.0;
  std::optional<double> reasoning;
  double gamma = kDefaultGamma;
  RewardRole role = RewardRole::teacher;
  double total = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

inline double format_reward(const ParseOutcome& outcome) { return outcome.ok() ? kFormatOk : kFormatBad; }

// Per-frame predicted masks for an answer: union of the selected ids' masks
// in each frame. Fails when an id appears in no frame of the twin.
struct ResolvedAnswer {
  std::vector<Mask> frames;
  std::vector<InstanceId> unresolved;
};

inline ResolvedAnswer resolve_answer(const AnswerBlock& answer, const TwinSequence& twin, int width, int height) {
  ResolvedAnswer out;
  auto check = [&](InstanceId id) {
    if (!twin.contains(id) && std::find(out.unresolved.begin(), out.unresolved.end(), id) == out.unresolved.end()) {
      out.unresolved.push_back(id);
    }
  };
  for (auto id : answer.instances) check(id);
  for (const auto& [t, ids] : answer.frames) {
    for (auto id : ids) check(id);
  }
  for (const auto& frame : twin.frames) {
    const auto override_it = answer.frames.find(frame.t);
    const auto& ids = override_it != answer.frames.end() ? override_it->second : answer.instances;
    std::vector<Mask> selected;
    if (!answer.no_target) {
      for (const auto& inst : frame.instances) {
        if (std::find(ids.begin(), ids.end(), inst.id) != ids.end()) selected.push_back(inst.mask);
      }
    }
    out.frames.push_back(mask_union(selected, width, height));
  }
  return out;
}

struct AccuracyResult {
  double reward = 0.0;
  std::optional<double> j;  // absent when the answer could not be resolved
  std::string note;
};

// 1 when the sequence IoU (mean over frames) strictly exceeds 0.5.
inline AccuracyResult accuracy_reward(const AnswerBlock& answer, const TwinSequence& twin, std::span<const Mask> gt) {
  AccuracyResult out;
  if (gt.size() != twin.frames.size()) {
    throw ValidationError("ground_truth", "ground truth has " + std::to_string(gt.size()) + " frames, twin has " +
                                              std::to_string(twin.frames.size()));
  }
  if (gt.empty()) throw ValidationError("ground_truth", "no frames to evaluate");
  const auto resolved = resolve_answer(answer, twin, gt.front().width(), gt.front().height());
  if (!resolved.unresolved.empty()) {
    out.note = "unresolvable id " + std::to_string(resolved.unresolved.front());
    return out;
  }
  out.j = j_measure(resolved.frames, gt);
  out.reward = *out.j > kAccuracyIouThreshold ? 1.0 : 0.0;
  return out;
}

// Ground truth restricted to the frames a query is evaluated on (for the
// synthetic suite: frames in which at least one target is visible).
struct FrameMasks {
  std::vector<int> t;  // 1-based frame indices, ascending
  std::vector<Mask> masks;
};

// Predicted masks on the frames listed in `gt`.
inline std::vector<Mask> select_frames(const std::vector<Mask>& all_frames, const FrameMasks& gt) {
  std::vector<Mask> out;
  for (int t : gt.t) {
    if (t < 1 || static_cast<std::size_t>(t) > all_frames.size()) {
      throw ValidationError("ground_truth", "frame " + std::to_string(t) + " is outside the twin");
    }
    out.push_back(all_frames[static_cast<std::size_t>(t - 1)]);
  }
  return out;
}

// Accuracy over the ground truth's evaluated frames only.
inline AccuracyResult accuracy_reward(const AnswerBlock& answer, const TwinSequence& twin, const FrameMasks& gt) {
  AccuracyResult out;
  if (gt.t.size() != gt.masks.size() || gt.t.empty()) {
    throw ValidationError("ground_truth", "ground truth must list at least one frame with one mask per frame");
  }
  const auto resolved = resolve_answer(answer, twin, gt.masks.front().width(), gt.masks.front().height());
  if (!resolved.unresolved.empty()) {
    out.note = "unresolvable id " + std::to_string(resolved.unresolved.front());
    return out;
  }
  out.j = j_measure(select_frames(resolved.frames, gt), gt.masks);
  out.reward = *out.j > kAccuracyIouThreshold ? 1.0 : 0.0;
  return out;
}

struct RewardParts {
  double format = kFormatBad;
  double accuracy = 0.0;
  std::optional<double> reasoning;
};

// Teacher: format + accuracy. Student: format + accuracy + gamma * reasoning.
inline RewardBreakdown combined_reward(const RewardParts& parts, RewardRole role, double gamma = kDefaultGamma,
                                       const RewardToggles& toggles = {}) {
  if (parts.format != kFormatOk && parts.format != kFormatBad) throw ValidationError("format", "must be +0.5 or -0.5");
  if (parts.accuracy != 0.0 && parts.accuracy != 1.0) throw ValidationError("accuracy", "must be 0 or 1");
  if (!(gamma >= 0.0)) throw ValidationError("gamma", "must be non-negative");
  RewardBreakdown b;
  b.format = parts.format;
  b.accuracy = parts.accuracy;
  b.gamma = gamma;
  b.role = role;
  b.total = (toggles.format ? parts.format : 0.0) + (toggles.accuracy ? parts.accuracy : 0.0);
  if (role == RewardRole::teacher) {
    if (parts.reasoning) throw ValidationError("reasoning", "teacher reward has no reasoning term");
    return b;
  }
  if (toggles.reasoning) {
    if (!parts.reasoning) throw ValidationError("reasoning", "student reward requires a reasoning score");
    if (!(*parts.reasoning >= 0.0 && *parts.reasoning <= 1.0)) throw ValidationError("reasoning", "must lie in [0,1]");
    b.reasoning = parts.reasoning;
    b.total += gamma * *parts.reasoning;
  } else {
    b.reasoning = parts.reasoning;
  }
  return b;
}

struct GroupScores {
  std::vector<double> rewards;
  std::vector<double> advantages;
  double mean = 0.0;
  double stddev = 0.0;
};

// Group-relative advantages: (r - mean) / population std, or all zero when
// the group has no spread.
inline GroupScores grpo_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ValidationError("group", "GRPO groups need at least 2 rollouts");
  GroupScores g;
  g.rewards.assign(rewards.begin(), rewards.end());
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  g.mean = sum / n;
  double sq = 0.0;
  for (double r : rewards) sq += (r - g.mean) * (r - g.mean);
  g.stddev = std::sqrt(sq / n);
  g.advantages.resize(rewards.size(), 0.0);
  if (g.stddev > kAdvantageStdFloor) {
    for (std::size_t i = 0; i < rewards.size(); ++i) g.advantages[i] = (rewards[i] - g.mean) / g.stddev;
  }
  return g;
}

}  // namespace twinseg
