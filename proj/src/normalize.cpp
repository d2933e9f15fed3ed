#include "trajcast/normalize.hpp"

#include <cmath>

namespace trajcast {

NormalizedScene normalize(const Scene& scene) {
  NormalizedScene ns;
  ns.scene_id = scene.scene_id;
  ns.dt = scene.dt;
  ns.n = static_cast<int>(scene.agents.size());
  ns.t_h = scene.t_h();
  ns.t_f = scene.t_f();
  ns.target_index = scene.target_index;
  if (ns.n == 0) return ns;

  ns.agent_ids.reserve(static_cast<std::size_t>(ns.n));
  ns.features.assign(static_cast<std::size_t>(ns.n) * ns.t_h * 3, 0.0);
  ns.valid.assign(static_cast<std::size_t>(ns.n) * ns.t_h, 0);
  ns.frames.resize(static_cast<std::size_t>(ns.n));
  ns.rel.resize(static_cast<std::size_t>(ns.n) * ns.n);
  ns.has_future.assign(static_cast<std::size_t>(ns.n), 0);
  if (ns.t_f > 0) ns.future_local.assign(static_cast<std::size_t>(ns.n) * ns.t_f * 2, 0.0);

  const int T = ns.t_h;
  for (int i = 0; i < ns.n; ++i) {
    const AgentTrack& a = scene.agents[static_cast<std::size_t>(i)];
    if (static_cast<int>(a.history.size()) != T)
      throw SchemaError("agent '" + a.agent_id + "' history length " +
                        std::to_string(a.history.size()) + " != T_h=" + std::to_string(T));
    ns.agent_ids.push_back(a.agent_id);

    AgentFrame& fr = ns.frames[static_cast<std::size_t>(i)];
    const HistoryPoint& last = a.history[static_cast<std::size_t>(T - 1)];
    fr.ox = last.x;
    fr.oy = last.y;
    fr.theta = 0.0;
    if (T >= 2) {
      const HistoryPoint& prev = a.history[static_cast<std::size_t>(T - 2)];
      if (last.valid && prev.valid) {
        const double rx = last.x - prev.x, ry = last.y - prev.y;
        if (std::hypot(rx, ry) >= 1e-6) fr.theta = std::atan2(ry, rx);
      }
    }
    const double c = std::cos(fr.theta), s = std::sin(fr.theta);

    for (int t = 0; t < T; ++t) {
      const HistoryPoint& p = a.history[static_cast<std::size_t>(t)];
      const std::size_t fbase = (static_cast<std::size_t>(i) * T + t) * 3;
      ns.valid[static_cast<std::size_t>(i) * T + t] = p.valid ? 1 : 0;
      ns.features[fbase + 2] = p.valid ? 1.0 : 0.0;
      if (t == 0) continue;  // boundary condition: first displacement is (0,0)
      const HistoryPoint& q = a.history[static_cast<std::size_t>(t - 1)];
      if (p.valid && q.valid) {
        const double dx = p.x - q.x, dy = p.y - q.y;
        ns.features[fbase + 0] = c * dx + s * dy;   // rotate by -theta
        ns.features[fbase + 1] = -s * dx + c * dy;
      }
    }

    if (a.future) {
      ns.has_future[static_cast<std::size_t>(i)] = 1;
      for (int t = 0; t < ns.t_f; ++t) {
        const FuturePoint& p = (*a.future)[static_cast<std::size_t>(t)];
        const FuturePoint l = global_to_frame(fr, p.x, p.y);
        ns.future_local[(static_cast<std::size_t>(i) * ns.t_f + t) * 2 + 0] = l.x;
        ns.future_local[(static_cast<std::size_t>(i) * ns.t_f + t) * 2 + 1] = l.y;
      }
    }
  }

  for (int i = 0; i < ns.n; ++i) {
    const AgentFrame& fi = ns.frames[static_cast<std::size_t>(i)];
    const double c = std::cos(fi.theta), s = std::sin(fi.theta);
    for (int j = 0; j < ns.n; ++j) {
      const AgentFrame& fj = ns.frames[static_cast<std::size_t>(j)];
      PairGeometry& pg = ns.rel[static_cast<std::size_t>(i) * ns.n + j];
      const double ox = fj.ox - fi.ox, oy = fj.oy - fi.oy;
      pg.dx = c * ox + s * oy;
      pg.dy = -s * ox + c * oy;
      pg.dtheta = wrap_angle(fj.theta - fi.theta);
    }
  }
  return ns;
}

std::vector<std::vector<FuturePoint>> un_normalize(const NormalizedScene& ns) {
  std::vector<std::vector<FuturePoint>> out(static_cast<std::size_t>(ns.n));
  for (int i = 0; i < ns.n; ++i) {
    auto& track = out[static_cast<std::size_t>(i)];
    track.assign(static_cast<std::size_t>(ns.t_h), FuturePoint{0.0, 0.0});
    if (!ns.agent_exists(i)) continue;
    const AgentFrame& fr = ns.frames[static_cast<std::size_t>(i)];
    const double c = std::cos(fr.theta), s = std::sin(fr.theta);
    double x = fr.ox, y = fr.oy;
    track[static_cast<std::size_t>(ns.t_h - 1)] = {x, y};
    for (int t = ns.t_h - 1; t >= 1; --t) {
      if (!ns.is_valid(i, t) || !ns.is_valid(i, t - 1)) break;
      const double lx = ns.feature(i, t, 0), ly = ns.feature(i, t, 1);
      // rotate displacement back to global and step backwards
      x -= c * lx - s * ly;
      y -= s * lx + c * ly;
      track[static_cast<std::size_t>(t - 1)] = {x, y};
    }
  }
  return out;
}

}  // namespace trajcast
