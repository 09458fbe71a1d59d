#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pegring/world/world.hpp"

namespace pegring::world {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw WorldError(WorldError::Kind::scenario, what); }

void only_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) fail(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) fail(where + ": unknown field '" + key + "'");
  }
}

Color color(const json& j, const std::string& where) {
  if (!j.is_string()) fail(where + ": expected a color name");
  const auto c = planner::parse_color(j.get<std::string>());
  if (!c) fail(where + ": unknown color '" + j.get<std::string>() + "'");
  return *c;
}

Vector3d vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) fail(where + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Eigen::Vector2d vec2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) fail(where + ": expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json out(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
json out(const Eigen::Vector2d& v) { return json::array({v.x(), v.y()}); }

// default layout: psm1 works the x <= 0 half
constexpr double kPegX = 0.035;
constexpr double kPegY = 0.03;
constexpr double kGreyX = 0.045;

std::vector<PegSpec> colored_pegs() {
  return {{Color::red, {-kPegX, kPegY}},
          {Color::blue, {-kPegX, -kPegY}},
          {Color::yellow, {kPegX, kPegY}},
          {Color::green, {kPegX, -kPegY}}};
}

Scenario base(const std::string& name) {
  Scenario s;
  s.name = name;
  s.seed = 1;
  s.geometry.pegs = colored_pegs();
  return s;
}

Scenario::RingPlacement at(Color c, double x, double y) { return {c, Eigen::Vector2d(x, y), std::nullopt}; }
Scenario::RingPlacement on(Color c, int peg) { return {c, std::nullopt, peg}; }

}  // namespace

const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {"A", "B", "C", "complete", "empty"};
  return names;
}

std::optional<Scenario> builtin_scenario(std::string_view name) {
  if (name == "A") {
    // red parked on the only grey peg, yellow loose; both on psm1's side, yellow's peg on psm2's
    auto s = base("A");
    s.geometry.pegs.push_back({Color::grey, {-kGreyX, 0.0}});
    s.rings = {on(Color::red, 4), at(Color::yellow, -0.015, -0.01)};
    Disturbance d;
    d.kind = DisturbanceKind::grasp_failure;
    d.arm = Arm::psm1;
    d.on_action = "grasp(psm1,ring,yellow)";
    s.disturbances.push_back(d);
    return s;
  }
  if (name == "B") {
    // every colored peg occupied, red and blue swapped; one free grey peg
    auto s = base("B");
    s.geometry.pegs.push_back({Color::grey, {-kGreyX, 0.0}});
    s.rings = {on(Color::red, 1), on(Color::blue, 0), on(Color::yellow, 2), on(Color::green, 3)};
    return s;
  }
  if (name == "C") {
    // each arm has two rings for its own pegs
    auto s = base("C");
    s.rings = {at(Color::red, -0.018, 0.012), at(Color::blue, -0.018, -0.015), at(Color::yellow, 0.018, 0.012),
               at(Color::green, 0.018, -0.015)};
    return s;
  }
  if (name == "complete") {
    // every ring starts on the far side of its peg
    auto s = base("complete");
    s.rings = {at(Color::red, 0.018, 0.012), at(Color::blue, 0.018, -0.015), at(Color::yellow, -0.018, 0.012),
               at(Color::green, -0.018, -0.015)};
    return s;
  }
  if (name == "empty") return base("empty");
  return std::nullopt;
}

std::string scenario_to_json(const Scenario& s) {
  const auto& g = s.geometry;
  json pegs = json::array();
  for (const auto& p : g.pegs) pegs.push_back({{"color", planner::to_string(p.color)}, {"position", out(p.position)}});
  json rings = json::array();
  for (const auto& r : s.rings) {
    json j = {{"color", planner::to_string(r.color)}};
    if (r.position) j["position"] = out(*r.position);
    if (r.peg) j["peg"] = *r.peg;
    rings.push_back(j);
  }
  json dist = json::array();
  for (const auto& d : s.disturbances) {
    json j = {{"kind", to_string(d.kind)}};
    switch (d.kind) {
      case DisturbanceKind::move_ring:
        j["ring"] = planner::to_string(d.color);
        j["position"] = out(d.position);
        break;
      case DisturbanceKind::occupy_peg:
        j["peg"] = planner::to_string(d.color);
        j["by"] = planner::to_string(d.by);
        break;
      case DisturbanceKind::grasp_failure:
        j["arm"] = planner::to_string(d.arm);
        break;
      default:
        j["ring"] = planner::to_string(d.color);
    }
    if (d.at_time) j["at_time"] = *d.at_time;
    if (d.on_action) j["on_action"] = *d.on_action;
    dist.push_back(j);
  }
  json j = {{"name", s.name},
            {"seed", s.seed},
            {"geometry",
             {{"base_size", g.base_size},
              {"peg_height", g.peg_height},
              {"peg_radius", g.peg_radius},
              {"ring_major", g.ring_major},
              {"ring_minor", g.ring_minor},
              {"workspace_min", out(g.workspace_min)},
              {"workspace_max", out(g.workspace_max)},
              {"capture_radius", g.capture_radius},
              {"thread_tolerance", g.thread_tolerance},
              {"pegs", pegs}}},
            {"rings", rings},
            {"arms", {{"psm1", out(s.arm_start[0])}, {"psm2", out(s.arm_start[1])}}},
            {"disturbances", dist},
            {"trace_every", s.trace_every}};
  return j.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
  Scenario s;
  try {
    const json j = json::parse(text);
    only_keys(j, {"name", "seed", "geometry", "rings", "arms", "disturbances", "trace_every"}, "scenario");
    s.name = j.value("name", "");
    s.seed = j.value("seed", std::uint64_t{0});
    s.trace_every = j.value("trace_every", 10);
    if (j.contains("geometry")) {
      const auto& g = j["geometry"];
      only_keys(g, {"base_size", "peg_height", "peg_radius", "ring_major", "ring_minor", "workspace_min", "workspace_max",
                    "capture_radius", "thread_tolerance", "pegs"},
                "geometry");
      auto& o = s.geometry;
      o.base_size = g.value("base_size", o.base_size);
      o.peg_height = g.value("peg_height", o.peg_height);
      o.peg_radius = g.value("peg_radius", o.peg_radius);
      o.ring_major = g.value("ring_major", o.ring_major);
      o.ring_minor = g.value("ring_minor", o.ring_minor);
      o.capture_radius = g.value("capture_radius", o.capture_radius);
      o.thread_tolerance = g.value("thread_tolerance", o.thread_tolerance);
      if (g.contains("workspace_min")) o.workspace_min = vec3(g["workspace_min"], "geometry.workspace_min");
      if (g.contains("workspace_max")) o.workspace_max = vec3(g["workspace_max"], "geometry.workspace_max");
      if (g.contains("pegs")) {
        for (const auto& p : g["pegs"]) {
          only_keys(p, {"color", "position"}, "geometry.pegs[]");
          o.pegs.push_back({color(p.at("color"), "peg color"), vec2(p.at("position"), "peg position")});
        }
      } else {
        o.pegs = colored_pegs();
      }
    } else {
      s.geometry.pegs = colored_pegs();
    }
    if (j.contains("rings"))
      for (const auto& r : j["rings"]) {
        only_keys(r, {"color", "position", "peg"}, "rings[]");
        Scenario::RingPlacement place;
        place.color = color(r.at("color"), "ring color");
        if (r.contains("position")) place.position = vec2(r["position"], "ring position");
        if (r.contains("peg")) place.peg = r["peg"].get<int>();
        s.rings.push_back(place);
      }
    if (j.contains("arms")) {
      only_keys(j["arms"], {"psm1", "psm2"}, "arms");
      if (j["arms"].contains("psm1")) s.arm_start[0] = vec3(j["arms"]["psm1"], "arms.psm1");
      if (j["arms"].contains("psm2")) s.arm_start[1] = vec3(j["arms"]["psm2"], "arms.psm2");
    }
    if (j.contains("disturbances"))
      for (const auto& dj : j["disturbances"]) {
        only_keys(dj, {"kind", "ring", "peg", "by", "arm", "position", "at_time", "on_action"}, "disturbances[]");
        Disturbance d;
        const auto kind = parse_disturbance_kind(dj.at("kind").get<std::string>());
        if (!kind) fail("unknown disturbance kind '" + dj.at("kind").get<std::string>() + "'");
        d.kind = *kind;
        switch (d.kind) {
          case DisturbanceKind::move_ring:
            d.color = color(dj.at("ring"), "move_ring.ring");
            d.position = vec3(dj.at("position"), "move_ring.position");
            break;
          case DisturbanceKind::occupy_peg:
            d.color = color(dj.at("peg"), "occupy_peg.peg");
            d.by = color(dj.at("by"), "occupy_peg.by");
            break;
          case DisturbanceKind::grasp_failure: {
            const auto arm = planner::parse_arm(dj.at("arm").get<std::string>());
            if (!arm) fail("grasp_failure: unknown arm");
            d.arm = *arm;
            break;
          }
          default:
            d.color = color(dj.at("ring"), std::string(to_string(d.kind)) + ".ring");
        }
        if (dj.contains("at_time")) d.at_time = dj["at_time"].get<double>();
        if (dj.contains("on_action")) d.on_action = dj["on_action"].get<std::string>();
        if (d.at_time.has_value() == d.on_action.has_value())
          fail("disturbance needs exactly one of at_time, on_action");
        s.disturbances.push_back(d);
      }
  } catch (const json::exception& e) {
    fail(std::string("bad scenario: ") + e.what());
  }
  initial_state(s);  // validates placement
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream o(path);
  if (!o) fail("cannot write " + path.string());
  o << scenario_to_json(s) << '\n';
}

Scenario resolve_scenario(const std::string& name_or_path) {
  if (auto s = builtin_scenario(name_or_path)) return *s;
  if (!std::filesystem::exists(name_or_path)) fail("no scenario named or at '" + name_or_path + "'");
  return load_scenario(name_or_path);
}

}  // namespace pegring::world
