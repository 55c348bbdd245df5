#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenegen/geometry.hpp"

namespace scenegen {

// Stop is the auxiliary class that terminates generation; it is never
// attached to a placed actor.
enum class ActorClass : std::uint8_t { kVehicle = 0, kPedestrian = 1, kBicyclist = 2, kStop = 3 };

inline constexpr int kNumActorClasses = 3;   // placeable classes
inline constexpr int kNumClassLabels = 4;    // placeable classes + stop

inline bool class_has_box(ActorClass c) {
  return c == ActorClass::kVehicle || c == ActorClass::kBicyclist;
}

inline const char* class_name(ActorClass c) {
  switch (c) {
    case ActorClass::kVehicle: return "vehicle";
    case ActorClass::kPedestrian: return "pedestrian";
    case ActorClass::kBicyclist: return "bicyclist";
    case ActorClass::kStop: return "stop";
  }
  return "?";
}

struct OrientedBox {
  double width = 0.0;    // meters, > 0
  double length = 0.0;   // meters, > 0
  double heading = 0.0;  // radians in [0, 2*pi)
  bool operator==(const OrientedBox&) const = default;
};

// A traffic participant. Pedestrians carry a position only; vehicles and
// bicyclists carry an oriented box. Zero speed stores direction 0 so that
// equality and serialization are canonical.
struct Actor {
  ActorClass cls = ActorClass::kVehicle;
  Vec2 pos;
  std::optional<OrientedBox> box;
  double speed = 0.0;      // m/s, >= 0
  double direction = 0.0;  // radians in [0, 2*pi)
  bool operator==(const Actor&) const = default;
};

inline Actor make_vehicle(Vec2 pos, double width, double length, double heading,
                          double speed = 0.0, double direction = 0.0) {
  return Actor{ActorClass::kVehicle, pos, OrientedBox{width, length, wrap_angle(heading)},
               speed, speed > 0.0 ? wrap_angle(direction) : 0.0};
}

inline Actor make_bicyclist(Vec2 pos, double width, double length, double heading,
                            double speed = 0.0, double direction = 0.0) {
  return Actor{ActorClass::kBicyclist, pos, OrientedBox{width, length, wrap_angle(heading)},
               speed, speed > 0.0 ? wrap_angle(direction) : 0.0};
}

inline Actor make_pedestrian(Vec2 pos, double speed = 0.0, double direction = 0.0) {
  return Actor{ActorClass::kPedestrian, pos, std::nullopt, speed,
               speed > 0.0 ? wrap_angle(direction) : 0.0};
}

// Ego vehicle; its position is the origin of the scene frame.
struct SDVState {
  Actor actor = make_vehicle({0.0, 0.0}, 2.0, 4.8, 0.0);
  bool operator==(const SDVState&) const = default;
};

enum class TrafficLight : std::uint8_t {
  kGreen = 0, kYellow = 1, kRed = 2, kFlashYellow = 3, kFlashRed = 4, kUnknown = 5
};
inline constexpr int kNumTrafficLightStates = 6;

enum class LaneType : std::uint8_t { kStraight = 0, kRight = 1, kLeft = 2, kBus = 3, kBike = 4 };
inline constexpr int kNumLaneTypes = 5;

enum class DividerType : std::uint8_t { kAllowed = 0, kForbidden = 1, kMaybe = 2 };
inline constexpr int kNumDividerTypes = 3;

struct LanePolygon {
  LaneType type = LaneType::kStraight;
  Polygon polygon;
  bool operator==(const LanePolygon&) const = default;
};

struct Centerline {
  DividerType divider = DividerType::kForbidden;
  Polyline points;
  bool operator==(const Centerline&) const = default;
};

struct LaneSegment {
  int id = 0;
  Polygon polygon;
  double orientation = 0.0;  // radians in [0, 2*pi)
  double speed_limit = 0.0;  // m/s
  TrafficLight traffic_light = TrafficLight::kUnknown;
  std::vector<int> successors;
  LaneType lane_type = LaneType::kStraight;
  bool operator==(const LaneSegment&) const = default;
};

struct HDMap {
  std::vector<LanePolygon> lane_polygons;
  std::vector<Centerline> centerlines;
  std::vector<LaneSegment> lane_segments;
  std::vector<Polygon> drivable_area;
  std::vector<Polygon> crosswalks;
  bool operator==(const HDMap&) const = default;

  const LaneSegment* segment_by_id(int id) const {
    for (const auto& s : lane_segments)
      if (s.id == id) return &s;
    return nullptr;
  }
};

struct Scene {
  SDVState sdv;
  HDMap map;
  std::vector<Actor> actors;
  double region_m = 40.0;  // half extent of the square region of interest
  bool operator==(const Scene&) const = default;
};

// ---------------------------------------------------------------------------
// Operations

// Left-to-right, top-to-bottom ordering: ascending x, ties by ascending y,
// further ties by class tag, then original insertion index. Deterministic.
inline std::vector<Actor> canonical_order(const std::vector<Actor>& actors) {
  std::vector<std::size_t> idx(actors.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const Actor& u = actors[a];
    const Actor& v = actors[b];
    if (u.pos.x != v.pos.x) return u.pos.x < v.pos.x;
    if (u.pos.y != v.pos.y) return u.pos.y < v.pos.y;
    if (u.cls != v.cls) return static_cast<int>(u.cls) < static_cast<int>(v.cls);
    return a < b;
  });
  std::vector<Actor> out;
  out.reserve(actors.size());
  for (std::size_t i : idx) out.push_back(actors[i]);
  return out;
}

inline ObbGeom actor_obb(const Actor& a) {
  if (!a.box)
    throw std::invalid_argument("actor_obb: actor of class " +
                                std::string(class_name(a.cls)) + " has no box");
  return ObbGeom{a.pos, a.box->length * 0.5, a.box->width * 0.5, a.box->heading};
}

// True iff the two oriented boxes overlap with positive area. Touching edges
// do not collide. Both actors must carry boxes.
inline bool boxes_collide(const Actor& a, const Actor& b) {
  return obb_overlap(actor_obb(a), actor_obb(b));
}

inline Polygon rotate_polygon(const Polygon& poly, double angle) {
  Polygon out;
  out.reserve(poly.size());
  for (Vec2 v : poly) out.push_back(v.rotated(angle));
  return out;
}

inline Actor rotate_actor(const Actor& a, double angle) {
  Actor out = a;
  out.pos = a.pos.rotated(angle);
  if (out.box) out.box->heading = wrap_angle(out.box->heading + angle);
  // Stopped actors keep the canonical direction 0.
  if (out.speed > 0.0) out.direction = wrap_angle(out.direction + angle);
  return out;
}

inline HDMap rotate_map(const HDMap& map, double angle) {
  HDMap out = map;
  for (auto& lp : out.lane_polygons) lp.polygon = rotate_polygon(lp.polygon, angle);
  for (auto& cl : out.centerlines) cl.points = rotate_polygon(cl.points, angle);
  for (auto& seg : out.lane_segments) {
    seg.polygon = rotate_polygon(seg.polygon, angle);
    seg.orientation = wrap_angle(seg.orientation + angle);
  }
  for (auto& p : out.drivable_area) p = rotate_polygon(p, angle);
  for (auto& p : out.crosswalks) p = rotate_polygon(p, angle);
  return out;
}

// Rotates every position, heading, direction and all map geometry about the
// origin of the scene frame.
inline Scene rotate_scene(const Scene& s, double angle) {
  Scene out = s;
  out.sdv.actor = rotate_actor(s.sdv.actor, angle);
  out.map = rotate_map(s.map, angle);
  for (std::size_t i = 0; i < s.actors.size(); ++i)
    out.actors[i] = rotate_actor(s.actors[i], angle);
  return out;
}

// ---------------------------------------------------------------------------
// Validation helpers shared by decoders and data generators.

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

inline void validate_actor(const Actor& a, double region_m, const std::string& where) {
  if (!std::isfinite(a.pos.x) || !std::isfinite(a.pos.y))
    throw ValidationError(where + ": position not finite");
  if (std::abs(a.pos.x) > region_m || std::abs(a.pos.y) > region_m)
    throw ValidationError(where + ": position outside region");
  if (a.cls == ActorClass::kStop) throw ValidationError(where + ": stop cannot be placed");
  if (class_has_box(a.cls) != a.box.has_value())
    throw ValidationError(where + ": box presence inconsistent with class");
  if (a.box) {
    if (!(a.box->width > 0.0) || !(a.box->length > 0.0))
      throw ValidationError(where + ": box dimensions must be positive");
    if (a.box->heading < 0.0 || a.box->heading >= kTwoPi)
      throw ValidationError(where + ": heading out of range");
  }
  if (a.speed < 0.0) throw ValidationError(where + ": speed must be non-negative");
  if (a.direction < 0.0 || a.direction >= kTwoPi)
    throw ValidationError(where + ": direction out of range");
  if (a.speed == 0.0 && a.direction != 0.0)
    throw ValidationError(where + ": stopped actor must store direction 0");
}

inline void validate_map(const HDMap& map, const std::string& where) {
  for (const auto& seg : map.lane_segments) {
    if (seg.orientation < 0.0 || seg.orientation >= kTwoPi)
      throw ValidationError(where + ": segment orientation out of range");
    for (int succ : seg.successors)
      if (map.segment_by_id(succ) == nullptr)
        throw ValidationError(where + ": successor id " + std::to_string(succ) +
                              " refers to no segment");
  }
}

inline void validate_scene(const Scene& s, const std::string& where) {
  if (!(s.region_m > 0.0)) throw ValidationError(where + ": region must be positive");
  if (s.sdv.actor.cls != ActorClass::kVehicle)
    throw ValidationError(where + ": sdv must be a vehicle");
  if (s.sdv.actor.pos != Vec2{0.0, 0.0})
    throw ValidationError(where + ": sdv must sit at the origin");
  validate_actor(s.sdv.actor, s.region_m, where + ".sdv");
  for (std::size_t i = 0; i < s.actors.size(); ++i)
    validate_actor(s.actors[i], s.region_m, where + ".actors[" + std::to_string(i) + "]");
  validate_map(s.map, where + ".map");
}

}  // namespace scenegen
