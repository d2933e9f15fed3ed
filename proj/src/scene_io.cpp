#include "trajcast/scene.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace trajcast {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string loc(const std::string& path, int lineno) {
  return path + ":" + std::to_string(lineno) + ": ";
}

int parse_valid_flag(const ordered_json& v, const std::string& where) {
  if (v.is_number()) {
    const double d = v.get<double>();
    if (d == 0.0) return 0;
    if (d == 1.0) return 1;
  }
  throw SchemaError(where + "valid flag must be 0 or 1");
}

Scene parse_scene_line(const std::string& path, int lineno, const std::string& line,
                       const ParseOptions& opts) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(loc(path, lineno) + "malformed JSON: " + e.what());
  }
  const std::string at = loc(path, lineno);
  if (!j.is_object()) throw SchemaError(at + "line is not a JSON object");
  for (const char* key : {"scene_id", "dt", "target", "agents"})
    if (!j.contains(key)) throw SchemaError(at + "missing key '" + key + "'");

  Scene s;
  if (!j["scene_id"].is_string()) throw SchemaError(at + "scene_id must be a string");
  s.scene_id = j["scene_id"].get<std::string>();
  if (!j["dt"].is_number()) throw SchemaError(at + "dt must be a number");
  s.dt = j["dt"].get<double>();
  if (!(s.dt > 0.0)) throw SchemaError(at + "dt must be positive");
  if (!j["target"].is_number_integer()) throw SchemaError(at + "target must be an integer");
  const int raw_target = j["target"].get<int>();
  if (!j["agents"].is_array() || j["agents"].empty())
    throw SchemaError(at + "agents must be a non-empty array");
  if (raw_target < 0 || raw_target >= static_cast<int>(j["agents"].size()))
    throw SchemaError(at + "target index " + std::to_string(raw_target) + " out of range");

  int raw_index = -1;
  for (const auto& aj : j["agents"]) {
    ++raw_index;
    AgentTrack a;
    if (!aj.contains("id") || !aj["id"].is_string())
      throw SchemaError(at + "agent missing string 'id'");
    a.agent_id = aj["id"].get<std::string>();
    if (!aj.contains("history") || !aj["history"].is_array())
      throw SchemaError(at + "agent '" + a.agent_id + "' missing history array");
    const auto& hist = aj["history"];
    if (static_cast<int>(hist.size()) != opts.expect_t_h)
      throw SchemaError(at + "agent '" + a.agent_id + "' has " +
                        std::to_string(hist.size()) + " history points, expected T_h=" +
                        std::to_string(opts.expect_t_h));
    for (const auto& p : hist) {
      if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number())
        throw SchemaError(at + "history point must be [x,y,valid]");
      HistoryPoint hp;
      hp.x = p[0].get<double>();
      hp.y = p[1].get<double>();
      hp.valid = parse_valid_flag(p[2], at);
      if (hp.valid != 0 && (!std::isfinite(hp.x) || !std::isfinite(hp.y)))
        throw SchemaError(at + "non-finite position for valid step");
      a.history.push_back(hp);
    }
    if (aj.contains("future") && !aj["future"].is_null()) {
      if (!aj["future"].is_array())
        throw SchemaError(at + "future must be an array or null");
      const auto& fut = aj["future"];
      if (static_cast<int>(fut.size()) != opts.expect_t_f)
        throw SchemaError(at + "agent '" + a.agent_id + "' has " +
                          std::to_string(fut.size()) + " future points, expected T_f=" +
                          std::to_string(opts.expect_t_f));
      std::vector<FuturePoint> f;
      for (const auto& p : fut) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
          throw SchemaError(at + "future point must be [x,y]");
        FuturePoint fp{p[0].get<double>(), p[1].get<double>()};
        if (!std::isfinite(fp.x) || !std::isfinite(fp.y))
          throw SchemaError(at + "non-finite future position");
        f.push_back(fp);
      }
      a.future = std::move(f);
    }

    // Only agents observed at t=0 are retained.
    if (!a.observed_at_t0()) {
      if (raw_index == raw_target)
        throw SchemaError(at + "target agent '" + a.agent_id + "' is not observed at t=0");
      continue;
    }
    if (raw_index == raw_target) s.target_index = static_cast<int>(s.agents.size());
    s.agents.push_back(std::move(a));
  }
  return s;
}

}  // namespace

std::vector<Scene> parse_scene_file(const std::string& path, ParseOptions opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path);
  std::vector<Scene> scenes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    scenes.push_back(parse_scene_line(path, lineno, line, opts));
  }
  return scenes;
}

std::string scene_to_json_line(const Scene& scene) {
  ordered_json j;
  j["scene_id"] = scene.scene_id;
  j["dt"] = scene.dt;
  j["target"] = scene.target_index;
  ordered_json agents = ordered_json::array();
  for (const auto& a : scene.agents) {
    ordered_json aj;
    aj["id"] = a.agent_id;
    ordered_json hist = ordered_json::array();
    for (const auto& p : a.history)
      hist.push_back(ordered_json::array({p.x, p.y, p.valid}));
    aj["history"] = std::move(hist);
    if (a.future) {
      ordered_json fut = ordered_json::array();
      for (const auto& p : *a.future) fut.push_back(ordered_json::array({p.x, p.y}));
      aj["future"] = std::move(fut);
    } else {
      aj["future"] = nullptr;
    }
    agents.push_back(std::move(aj));
  }
  j["agents"] = std::move(agents);
  return j.dump();
}

void write_scene_file(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file: " + path);
  for (const auto& s : scenes) out << scene_to_json_line(s) << "\n";
  if (!out) throw IoError("short write to " + path);
}

Scene transform_scene(const Scene& scene, double angle, double tx, double ty) {
  const double c = std::cos(angle), s = std::sin(angle);
  Scene out = scene;
  for (auto& a : out.agents) {
    for (auto& p : a.history) {
      const double x = c * p.x - s * p.y + tx;
      const double y = s * p.x + c * p.y + ty;
      p.x = x;
      p.y = y;
    }
    if (a.future)
      for (auto& p : *a.future) {
        const double x = c * p.x - s * p.y + tx;
        const double y = s * p.x + c * p.y + ty;
        p.x = x;
        p.y = y;
      }
  }
  return out;
}

}  // namespace trajcast
