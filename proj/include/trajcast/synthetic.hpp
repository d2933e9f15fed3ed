#pragma once

#include <cstdint>
#include <vector>

#include "trajcast/scene.hpp"

namespace trajcast {

// Mixture weights over motion primitives; normalized internally.
struct MotionMix {
  double constant_velocity = 0.4;
  double constant_turn = 0.25;
  double accelerate = 0.2;
  double lane_change = 0.15;
};

struct SyntheticConfig {
  std::uint64_t seed = 1;
  int n_scenes = 100;
  int min_agents = 2;
  int max_agents = 8;
  int t_h = 20;
  int t_f = 30;
  double dt = 0.1;
  double noise_sigma = 0.03;     // Gaussian position noise, meters
  MotionMix mix;
  double late_appear_prob = 0.15;  // non-target agents entering mid-history
  bool with_future = true;
  double min_speed = 1.0;
  double max_speed = 15.0;
  // 0 = random sign, +1 = left turns only, -1 = right turns only
  int turn_sign = 0;
};

// Deterministic per seed. The target agent is always fully observed; late
// appearing agents keep at least the last two history steps valid.
std::vector<Scene> generate_synthetic(const SyntheticConfig& cfg);

}  // namespace trajcast
