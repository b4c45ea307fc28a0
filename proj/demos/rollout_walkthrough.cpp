// Walks one synthetic query through the rollout loop with the scripted
// oracle: prompt, pause at </plan>, tool execution, splice, answer, reward.

#include <cstdio>

#include "twinseg/distill.hpp"

using namespace twinseg;

int main() {
  SceneOutput scene;
  for (int i = 0;; ++i) {
    scene = generate(random_scene(7, i));
    if (scene.queries.size() >= 2) break;
  }
  const auto cases = cases_from_scenes({scene});
  const EvalCase& c = cases[1];
  std::printf("query: %s\n", c.query.text.c_str());

  OraclePolicy oracle;
  const auto record = run_rollout(oracle, c, 0, {});
  std::printf("rollout (%zu bytes):\n", record.rollout.size());
  const auto rs = record.rollout.find("<results>");
  const auto re = record.rollout.find("</results>");
  if (rs != std::string::npos && re != std::string::npos) {
    std::printf("%s<results>...%zu bytes of refined twin...</results>%s\n", record.rollout.substr(0, rs).c_str(),
                re - rs - 9, record.rollout.substr(re + 10).c_str());
  } else {
    std::printf("%s\n", record.rollout.c_str());
  }
  for (const auto& call : record.execution) {
    std::printf("  tool %-16s %s\n", call.tool.c_str(), call.ok ? "ok" : call.reason.c_str());
  }
  std::printf("format %+.1f  accuracy %.0f  total %.2f  J %.3f  F %.3f\n", record.reward.format, record.reward.accuracy,
              record.reward.total, *record.j, *record.f);
  return 0;
}
