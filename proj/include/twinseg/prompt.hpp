#pragma once

// Prompt assembly, template version 1. The sections are fixed so scripted
// policies can locate the twin, the query and the rollout written so far.

#include <optional>
#include <string>
#include <string_view>

#include "twinseg/tools.hpp"
#include "twinseg/twin.hpp"
#include "twinseg/twin_json.hpp"

namespace twinseg {

inline constexpr std::string_view kPromptVersion = "twinseg-prompt/1";
inline constexpr std::string_view kToolsHeader = "### Tools\n";
inline constexpr std::string_view kTwinHeader = "\n### Digital twin\n";
inline constexpr std::string_view kQueryHeader = "\n### Query\n";
inline constexpr std::string_view kRolloutHeader = "\n### Rollout\n";

inline constexpr std::string_view kSystemPreamble =
    "You answer segmentation queries over a digital twin: per-frame object instances with masks,\n"
    "depth statistics and semantic labels. Think inside <reason></reason>. If the twin lacks what you\n"
    "need, write a JSON array of tool calls inside <plan></plan>, for example\n"
    "[{\"tool\": \"size\", \"args\": {\"id\": 3}}]. Generation stops after </plan>; the tools run and the\n"
    "refined twin is returned inside <results></results>. End with <answer>{\"instances\": [ids]}</answer>,\n"
    "or <answer>{\"instances\": [], \"no_target\": true}</answer> when nothing matches.\n";

// Twin as shown to a policy: derived keys not declared by a registered tool are dropped.
inline TwinSequence prompt_twin_view(const TwinSequence& twin, const ToolRegistry& tools = standard_tools()) {
  TwinSequence view = twin;
  for (auto& f : view.frames) {
    for (auto& inst : f.instances) {
      std::erase_if(inst.derived, [&](const auto& kv) { return !tools.declares_key(kv.first); });
    }
  }
  return view;
}

inline std::string build_prompt(const TwinSequence& twin, std::string_view query,
                                const ToolRegistry& tools = standard_tools()) {
  std::string p;
  p += "[";
  p += kPromptVersion;
  p += "]\n";
  p += kSystemPreamble;
  p += "\n";
  p += kToolsHeader;
  p += tools.manifest().dump();
  p += "\n";
  p += kTwinHeader;
  p += serialize_twin(prompt_twin_view(twin, tools));
  p += "\n";
  p += kQueryHeader;
  p += query;
  p += "\n";
  p += kRolloutHeader;
  return p;
}

struct PromptParts {
  std::string_view twin_json;
  std::string_view query;
  std::string_view rollout;  // text generated so far
};

inline std::optional<PromptParts> split_prompt(std::string_view context) {
  const auto twin = context.find(kTwinHeader);
  const auto query = context.find(kQueryHeader, twin == std::string_view::npos ? 0 : twin);
  const auto rollout = context.find(kRolloutHeader, query == std::string_view::npos ? 0 : query);
  if (twin == std::string_view::npos || query == std::string_view::npos || rollout == std::string_view::npos) {
    return std::nullopt;
  }
  auto trim_nl = [](std::string_view s) {
    while (!s.empty() && s.back() == '\n') s.remove_suffix(1);
    return s;
  };
  PromptParts parts;
  parts.twin_json = trim_nl(context.substr(twin + kTwinHeader.size(), query - twin - kTwinHeader.size()));
  parts.query = trim_nl(context.substr(query + kQueryHeader.size(), rollout - query - kQueryHeader.size()));
  parts.rollout = context.substr(rollout + kRolloutHeader.size());
  return parts;
}

}  // namespace twinseg
