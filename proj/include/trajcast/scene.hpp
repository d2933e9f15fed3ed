#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "trajcast/errors.hpp"

namespace trajcast {

struct HistoryPoint {
  double x = 0.0;
  double y = 0.0;
  int valid = 1;  // 0/1 observation flag
};

struct FuturePoint {
  double x = 0.0;
  double y = 0.0;
};

struct AgentTrack {
  std::string agent_id;
  std::vector<HistoryPoint> history;            // exactly T_h entries
  std::optional<std::vector<FuturePoint>> future;  // exactly T_f entries when present

  bool observed_at_t0() const {
    return !history.empty() && history.back().valid != 0;
  }
};

// Raw multi-agent scene. Index T_h-1 of history is the last observed step
// ("t = 0"); future index 0 is the first prediction step.
struct Scene {
  std::string scene_id;
  double dt = 0.1;
  int target_index = 0;
  std::vector<AgentTrack> agents;

  int t_h() const { return agents.empty() ? 0 : static_cast<int>(agents[0].history.size()); }
  int t_f() const {
    for (const auto& a : agents)
      if (a.future) return static_cast<int>(a.future->size());
    return 0;
  }
};

struct ParseOptions {
  int expect_t_h = 20;
  int expect_t_f = 30;
};

// JSON Lines scene file. Invalid lines raise ParseError/SchemaError with the
// offending line number. Agents not observed at t=0 are dropped (the target
// being unobserved at t=0 is an error).
std::vector<Scene> parse_scene_file(const std::string& path, ParseOptions opts = {});

void write_scene_file(const std::string& path, const std::vector<Scene>& scenes);

std::string scene_to_json_line(const Scene& scene);

// Applies one rigid motion to every coordinate: p -> R(angle) p + (tx, ty).
Scene transform_scene(const Scene& scene, double angle, double tx, double ty);

}  // namespace trajcast
