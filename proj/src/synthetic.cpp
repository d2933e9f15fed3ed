#include "trajcast/synthetic.hpp"

#include <cmath>
#include <string>

#include "trajcast/rng.hpp"

namespace trajcast {

namespace {

enum class Kind { kConstVel, kTurn, kAccel, kLaneChange };

Kind sample_kind(const MotionMix& mix, Rng& rng) {
  const double total = mix.constant_velocity + mix.constant_turn + mix.accelerate +
                       mix.lane_change;
  if (total <= 0.0) throw ConfigError("motion mix weights must not all be zero");
  double u = rng.uniform() * total;
  if ((u -= mix.constant_velocity) < 0.0) return Kind::kConstVel;
  if ((u -= mix.constant_turn) < 0.0) return Kind::kTurn;
  if ((u -= mix.accelerate) < 0.0) return Kind::kAccel;
  return Kind::kLaneChange;
}

// smooth 0..1 ramp with zero slope at both ends
double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Simulates total steps of one agent; index t_h-1 is the last observed step.
std::vector<FuturePoint> simulate(Kind kind, int total, double dt, Rng& rng,
                                  int turn_sign) {
  const double x0 = rng.uniform(-40.0, 40.0);
  const double y0 = rng.uniform(-40.0, 40.0);
  const double heading = rng.uniform(-3.14159265, 3.14159265);
  std::vector<FuturePoint> pts(static_cast<std::size_t>(total));
  switch (kind) {
    case Kind::kConstVel: {
      const double speed = rng.uniform(1.0, 15.0);
      const double vx = speed * std::cos(heading), vy = speed * std::sin(heading);
      for (int t = 0; t < total; ++t)
        pts[static_cast<std::size_t>(t)] = {x0 + vx * t * dt, y0 + vy * t * dt};
      break;
    }
    case Kind::kTurn: {
      const double speed = rng.uniform(2.0, 12.0);
      double sign = turn_sign != 0 ? static_cast<double>(turn_sign)
                                   : (rng.bernoulli(0.5) ? 1.0 : -1.0);
      const double omega = sign * rng.uniform(0.1, 0.5);  // rad/s
      double x = x0, y = y0, h = heading;
      for (int t = 0; t < total; ++t) {
        pts[static_cast<std::size_t>(t)] = {x, y};
        x += speed * std::cos(h) * dt;
        y += speed * std::sin(h) * dt;
        h += omega * dt;
      }
      break;
    }
    case Kind::kAccel: {
      double speed = rng.uniform(2.0, 12.0);
      const double accel = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
      double x = x0, y = y0;
      const double cx = std::cos(heading), cy = std::sin(heading);
      for (int t = 0; t < total; ++t) {
        pts[static_cast<std::size_t>(t)] = {x, y};
        x += speed * cx * dt;
        y += speed * cy * dt;
        speed = std::clamp(speed + accel * dt, 0.5, 25.0);
      }
      break;
    }
    case Kind::kLaneChange: {
      const double speed = rng.uniform(4.0, 15.0);
      const double vx = speed * std::cos(heading), vy = speed * std::sin(heading);
      const double lateral = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(2.5, 3.5);
      const int start = static_cast<int>(rng.uniform_int(2, total / 2));
      const int span = static_cast<int>(rng.uniform_int(total / 4, total / 2));
      const double px = -std::sin(heading), py = std::cos(heading);
      for (int t = 0; t < total; ++t) {
        const double off =
            lateral * smoothstep(static_cast<double>(t - start) / std::max(1, span));
        pts[static_cast<std::size_t>(t)] = {x0 + vx * t * dt + px * off,
                                            y0 + vy * t * dt + py * off};
      }
      break;
    }
  }
  return pts;
}

}  // namespace

std::vector<Scene> generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.min_agents < 1 || cfg.max_agents > 32 || cfg.min_agents > cfg.max_agents)
    throw ConfigError("agent range must lie within [1, 32]");
  if (cfg.t_h < 2 || cfg.t_f < 1) throw ConfigError("horizons too short: need t_h >= 2, t_f >= 1");
  if (cfg.n_scenes < 0) throw ConfigError("n_scenes must be >= 0");

  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.n_scenes));
  for (int sc = 0; sc < cfg.n_scenes; ++sc) {
    Rng rng(mix_seed(cfg.seed, 0x5ce5e5, static_cast<std::uint64_t>(sc)));
    Scene scene;
    scene.scene_id = "syn-" + std::to_string(cfg.seed) + "-" + std::to_string(sc);
    scene.dt = cfg.dt;
    const int n = static_cast<int>(rng.uniform_int(cfg.min_agents, cfg.max_agents));
    scene.target_index = static_cast<int>(rng.uniform_int(0, n - 1));
    const int total = cfg.t_h + cfg.t_f;

    for (int ai = 0; ai < n; ++ai) {
      const Kind kind = sample_kind(cfg.mix, rng);
      auto pts = simulate(kind, total, cfg.dt, rng, cfg.turn_sign);
      if (cfg.noise_sigma > 0.0)
        for (auto& p : pts) {
          p.x += rng.normal(0.0, cfg.noise_sigma);
          p.y += rng.normal(0.0, cfg.noise_sigma);
        }

      AgentTrack a;
      a.agent_id = "a" + std::to_string(ai);
      int appear = 0;
      if (ai != scene.target_index && rng.bernoulli(cfg.late_appear_prob))
        appear = static_cast<int>(rng.uniform_int(1, cfg.t_h - 2));
      a.history.resize(static_cast<std::size_t>(cfg.t_h));
      for (int t = 0; t < cfg.t_h; ++t) {
        auto& hp = a.history[static_cast<std::size_t>(t)];
        if (t < appear) {
          // placeholder position, ignored downstream
          hp = {pts[static_cast<std::size_t>(appear)].x,
                pts[static_cast<std::size_t>(appear)].y, 0};
        } else {
          hp = {pts[static_cast<std::size_t>(t)].x, pts[static_cast<std::size_t>(t)].y, 1};
        }
      }
      if (cfg.with_future) {
        std::vector<FuturePoint> fut(pts.begin() + cfg.t_h, pts.end());
        a.future = std::move(fut);
      }
      scene.agents.push_back(std::move(a));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace trajcast
