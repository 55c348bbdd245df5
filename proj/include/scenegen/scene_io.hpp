#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scenegen/scene.hpp"

namespace scenegen {

using nlohmann::json;

// Raised on malformed input; `path` identifies the offending JSON location.
struct ParseError : std::runtime_error {
  std::string path;
  ParseError(std::string p, const std::string& what)
      : std::runtime_error(p + ": " + what), path(std::move(p)) {}
};

namespace detail {

inline double get_number(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ParseError(path + "." + key, "missing field");
  if (!j[key].is_number()) throw ParseError(path + "." + key, "expected a number");
  return j[key].get<double>();
}

inline double get_angle(const json& j, const std::string& path, const char* key) {
  const double v = get_number(j, path, key);
  if (!(v >= 0.0) || v >= kTwoPi) throw ParseError(path + "." + key, key + std::string(" out of range"));
  return v;
}

template <typename Enum>
Enum parse_enum(const json& j, const std::string& path, const char* key,
                const std::vector<std::pair<std::string, Enum>>& table) {
  if (!j.contains(key)) throw ParseError(path + "." + key, "missing field");
  if (!j[key].is_string()) throw ParseError(path + "." + key, "expected a string");
  const std::string s = j[key].get<std::string>();
  for (const auto& [name, value] : table)
    if (name == s) return value;
  throw ParseError(path + "." + key, "unknown tag \"" + s + "\"");
}

inline const std::vector<std::pair<std::string, ActorClass>>& class_table() {
  static const std::vector<std::pair<std::string, ActorClass>> t = {
      {"vehicle", ActorClass::kVehicle},
      {"pedestrian", ActorClass::kPedestrian},
      {"bicyclist", ActorClass::kBicyclist}};
  return t;
}

inline const std::vector<std::pair<std::string, TrafficLight>>& light_table() {
  static const std::vector<std::pair<std::string, TrafficLight>> t = {
      {"green", TrafficLight::kGreen},       {"yellow", TrafficLight::kYellow},
      {"red", TrafficLight::kRed},           {"flash_yellow", TrafficLight::kFlashYellow},
      {"flash_red", TrafficLight::kFlashRed}, {"unknown", TrafficLight::kUnknown}};
  return t;
}

inline const std::vector<std::pair<std::string, LaneType>>& lane_type_table() {
  static const std::vector<std::pair<std::string, LaneType>> t = {
      {"straight", LaneType::kStraight}, {"right", LaneType::kRight},
      {"left", LaneType::kLeft},         {"bus", LaneType::kBus},
      {"bike", LaneType::kBike}};
  return t;
}

inline const std::vector<std::pair<std::string, DividerType>>& divider_table() {
  static const std::vector<std::pair<std::string, DividerType>> t = {
      {"allowed", DividerType::kAllowed},
      {"forbidden", DividerType::kForbidden},
      {"maybe", DividerType::kMaybe}};
  return t;
}

template <typename Enum>
std::string enum_name(Enum v, const std::vector<std::pair<std::string, Enum>>& table) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

inline json encode_points(const std::vector<Vec2>& pts) {
  json arr = json::array();
  for (Vec2 p : pts) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

inline std::vector<Vec2> decode_points(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path, "expected an array of [x, y] pairs");
  std::vector<Vec2> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& p = j[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ParseError(path + "[" + std::to_string(i) + "]", "expected [x, y]");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

inline json encode_polygons(const std::vector<Polygon>& polys) {
  json arr = json::array();
  for (const auto& p : polys) arr.push_back(encode_points(p));
  return arr;
}

inline std::vector<Polygon> decode_polygons(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path, "expected an array of polygons");
  std::vector<Polygon> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(decode_points(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Actor

inline json encode_actor(const Actor& a) {
  json j;
  j["class"] = detail::enum_name(a.cls, detail::class_table());
  j["x"] = a.pos.x;
  j["y"] = a.pos.y;
  if (a.box) {
    j["width"] = a.box->width;
    j["length"] = a.box->length;
    j["heading"] = a.box->heading;
  }
  j["speed"] = a.speed;
  j["direction"] = a.direction;
  return j;
}

inline Actor decode_actor(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an actor object");
  Actor a;
  a.cls = detail::parse_enum(j, path, "class", detail::class_table());
  a.pos = {detail::get_number(j, path, "x"), detail::get_number(j, path, "y")};
  if (class_has_box(a.cls)) {
    OrientedBox box;
    box.width = detail::get_number(j, path, "width");
    box.length = detail::get_number(j, path, "length");
    box.heading = detail::get_angle(j, path, "heading");
    if (!(box.width > 0.0)) throw ParseError(path + ".width", "width must be positive");
    if (!(box.length > 0.0)) throw ParseError(path + ".length", "length must be positive");
    a.box = box;
  } else if (j.contains("width") || j.contains("length") || j.contains("heading")) {
    throw ParseError(path, "pedestrians carry no box fields");
  }
  a.speed = detail::get_number(j, path, "speed");
  if (a.speed < 0.0) throw ParseError(path + ".speed", "speed must be non-negative");
  a.direction = detail::get_angle(j, path, "direction");
  if (a.speed == 0.0 && a.direction != 0.0)
    throw ParseError(path + ".direction", "stopped actor must store direction 0");
  return a;
}

// ---------------------------------------------------------------------------
// Map

inline json encode_map(const HDMap& m) {
  json j;
  json lp = json::array();
  for (const auto& p : m.lane_polygons)
    lp.push_back({{"lane_type", detail::enum_name(p.type, detail::lane_type_table())},
                  {"polygon", detail::encode_points(p.polygon)}});
  j["lane_polygons"] = lp;
  json cl = json::array();
  for (const auto& c : m.centerlines)
    cl.push_back({{"divider", detail::enum_name(c.divider, detail::divider_table())},
                  {"points", detail::encode_points(c.points)}});
  j["centerlines"] = cl;
  json segs = json::array();
  for (const auto& s : m.lane_segments) {
    json js;
    js["id"] = s.id;
    js["polygon"] = detail::encode_points(s.polygon);
    js["orientation"] = s.orientation;
    js["speed_limit"] = s.speed_limit;
    js["traffic_light"] = detail::enum_name(s.traffic_light, detail::light_table());
    js["successors"] = s.successors;
    js["lane_type"] = detail::enum_name(s.lane_type, detail::lane_type_table());
    segs.push_back(js);
  }
  j["lane_segments"] = segs;
  j["drivable_area"] = detail::encode_polygons(m.drivable_area);
  j["crosswalks"] = detail::encode_polygons(m.crosswalks);
  return j;
}

inline HDMap decode_map(const json& j, const std::string& path = "map") {
  if (!j.is_object()) throw ParseError(path, "expected a map object");
  HDMap m;
  if (j.contains("lane_polygons")) {
    const json& lp = j["lane_polygons"];
    if (!lp.is_array()) throw ParseError(path + ".lane_polygons", "expected an array");
    for (std::size_t i = 0; i < lp.size(); ++i) {
      const std::string p = path + ".lane_polygons[" + std::to_string(i) + "]";
      LanePolygon out;
      out.type = detail::parse_enum(lp[i], p, "lane_type", detail::lane_type_table());
      out.polygon = detail::decode_points(lp[i].value("polygon", json::array()), p + ".polygon");
      m.lane_polygons.push_back(std::move(out));
    }
  }
  if (j.contains("centerlines")) {
    const json& cl = j["centerlines"];
    if (!cl.is_array()) throw ParseError(path + ".centerlines", "expected an array");
    for (std::size_t i = 0; i < cl.size(); ++i) {
      const std::string p = path + ".centerlines[" + std::to_string(i) + "]";
      Centerline out;
      out.divider = detail::parse_enum(cl[i], p, "divider", detail::divider_table());
      out.points = detail::decode_points(cl[i].value("points", json::array()), p + ".points");
      m.centerlines.push_back(std::move(out));
    }
  }
  if (j.contains("lane_segments")) {
    const json& segs = j["lane_segments"];
    if (!segs.is_array()) throw ParseError(path + ".lane_segments", "expected an array");
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const std::string p = path + ".lane_segments[" + std::to_string(i) + "]";
      const json& js = segs[i];
      LaneSegment s;
      if (!js.contains("id") || !js["id"].is_number_integer())
        throw ParseError(p + ".id", "expected an integer id");
      s.id = js["id"].get<int>();
      s.polygon = detail::decode_points(js.value("polygon", json::array()), p + ".polygon");
      s.orientation = detail::get_angle(js, p, "orientation");
      s.speed_limit = detail::get_number(js, p, "speed_limit");
      s.traffic_light = detail::parse_enum(js, p, "traffic_light", detail::light_table());
      if (js.contains("successors")) {
        if (!js["successors"].is_array()) throw ParseError(p + ".successors", "expected an array");
        for (const auto& v : js["successors"]) {
          if (!v.is_number_integer()) throw ParseError(p + ".successors", "expected integer ids");
          s.successors.push_back(v.get<int>());
        }
      }
      s.lane_type = detail::parse_enum(js, p, "lane_type", detail::lane_type_table());
      m.lane_segments.push_back(std::move(s));
    }
  }
  m.drivable_area = detail::decode_polygons(j.value("drivable_area", json::array()),
                                            path + ".drivable_area");
  m.crosswalks = detail::decode_polygons(j.value("crosswalks", json::array()),
                                         path + ".crosswalks");
  try {
    validate_map(m, path);
  } catch (const ValidationError& e) {
    throw ParseError(path, e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scene

// `map_ref`, when non-empty, is written instead of the inline map object.
inline json encode_scene(const Scene& s, const std::string& map_ref = "") {
  json j;
  j["region_m"] = s.region_m;
  j["sdv"] = encode_actor(s.sdv.actor);
  json actors = json::array();
  for (const auto& a : s.actors) actors.push_back(encode_actor(a));
  j["actors"] = actors;
  if (map_ref.empty())
    j["map"] = encode_map(s.map);
  else
    j["map"] = map_ref;
  return j;
}

// `base_dir` resolves map references relative to the scene file location.
inline Scene decode_scene(const json& j, const std::filesystem::path& base_dir = ".",
                          const std::string& path = "scene") {
  if (!j.is_object()) throw ParseError(path, "expected a scene object");
  Scene s;
  s.region_m = detail::get_number(j, path, "region_m");
  if (!j.contains("sdv")) throw ParseError(path + ".sdv", "missing field");
  s.sdv.actor = decode_actor(j["sdv"], path + ".sdv");
  if (j.contains("actors")) {
    if (!j["actors"].is_array()) throw ParseError(path + ".actors", "expected an array");
    for (std::size_t i = 0; i < j["actors"].size(); ++i)
      s.actors.push_back(decode_actor(j["actors"][i], path + ".actors[" + std::to_string(i) + "]"));
  }
  if (!j.contains("map")) throw ParseError(path + ".map", "missing field");
  if (j["map"].is_string()) {
    const std::filesystem::path ref = base_dir / j["map"].get<std::string>();
    std::ifstream in(ref);
    if (!in) throw ParseError(path + ".map", "cannot open referenced map " + ref.string());
    json mj;
    try {
      in >> mj;
    } catch (const json::exception& e) {
      throw ParseError(path + ".map", std::string("referenced map is not valid JSON: ") + e.what());
    }
    s.map = decode_map(mj, path + ".map");
  } else {
    s.map = decode_map(j["map"], path + ".map");
  }
  try {
    validate_scene(s, path);
  } catch (const ValidationError& e) {
    throw ParseError(path, e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// File helpers

inline json load_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(file.string(), "cannot open file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(file.string(), std::string("invalid JSON: ") + e.what());
  }
  return j;
}

inline void write_json_file(const std::filesystem::path& file, const json& j) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

inline Scene load_scene_file(const std::filesystem::path& file) {
  return decode_scene(load_json_file(file), file.parent_path(), file.string());
}

inline HDMap load_map_file(const std::filesystem::path& file) {
  return decode_map(load_json_file(file), file.string());
}

}  // namespace scenegen
