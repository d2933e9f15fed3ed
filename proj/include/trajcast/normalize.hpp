#pragma once

#include <cstdint>
#include <vector>

#include "trajcast/scene.hpp"

namespace trajcast {

// Local frame of one agent: origin at its last observed position, x-axis
// along its last displacement.
struct AgentFrame {
  double ox = 0.0;
  double oy = 0.0;
  double theta = 0.0;
};

// Relative geometry of agent j seen from agent i's frame.
struct PairGeometry {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};

// Per-agent rotated relative-displacement features plus frames, validity
// mask and all-pairs geometry. Future labels, when present in the scene,
// are carried along already mapped into each agent's frame.
struct NormalizedScene {
  std::string scene_id;
  double dt = 0.1;
  int n = 0;
  int t_h = 0;
  int t_f = 0;
  int target_index = 0;
  std::vector<std::string> agent_ids;

  std::vector<double> features;      // [n * t_h * 3] = (dx, dy, flag), local frame
  std::vector<std::uint8_t> valid;   // [n * t_h]
  std::vector<AgentFrame> frames;    // [n]
  std::vector<PairGeometry> rel;     // [n * n], row i = "seen from i"
  std::vector<std::uint8_t> has_future;  // [n]
  std::vector<double> future_local;      // [n * t_f * 2]

  double feature(int agent, int t, int k) const {
    return features[(static_cast<std::size_t>(agent) * t_h + t) * 3 + k];
  }
  bool is_valid(int agent, int t) const {
    return valid[static_cast<std::size_t>(agent) * t_h + t] != 0;
  }
  const PairGeometry& pair(int i, int j) const {
    return rel[static_cast<std::size_t>(i) * n + j];
  }
  bool agent_exists(int i) const {
    for (int t = 0; t < t_h; ++t)
      if (is_valid(i, t)) return true;
    return false;
  }
  int last_valid_step(int i) const {
    for (int t = t_h - 1; t >= 0; --t)
      if (is_valid(i, t)) return t;
    return 0;
  }
};

// Degenerate reference vectors (stationary agent, or unobserved previous
// step) fall back to theta = 0 in the global frame.
NormalizedScene normalize(const Scene& scene);

// Reconstructs global history positions of valid steps from the normalized
// features, walking backwards from each agent's origin. Exact for validity
// patterns that are contiguous up to t=0 (the generator and any retained
// track have this form).
std::vector<std::vector<FuturePoint>> un_normalize(const NormalizedScene& ns);

inline double wrap_angle(double a) {
  while (a > 3.14159265358979323846) a -= 2.0 * 3.14159265358979323846;
  while (a <= -3.14159265358979323846) a += 2.0 * 3.14159265358979323846;
  return a;
}

// local -> global for one frame
inline FuturePoint frame_to_global(const AgentFrame& f, double lx, double ly) {
  const double c = std::cos(f.theta), s = std::sin(f.theta);
  return {c * lx - s * ly + f.ox, s * lx + c * ly + f.oy};
}

// global -> local
inline FuturePoint global_to_frame(const AgentFrame& f, double gx, double gy) {
  const double c = std::cos(f.theta), s = std::sin(f.theta);
  const double dx = gx - f.ox, dy = gy - f.oy;
  return {c * dx + s * dy, -s * dx + c * dy};
}

}  // namespace trajcast
