#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scenegen/rng.hpp"
#include "scenegen/scene.hpp"
#include "scenegen/scene_io.hpp"

using namespace scenegen;

namespace {

HDMap tiny_map() {
  HDMap m;
  LaneSegment s;
  s.id = 1;
  s.polygon = {{-30, -2}, {30, -2}, {30, 2}, {-30, 2}};
  s.orientation = 0.0;
  s.speed_limit = 12.0;
  s.traffic_light = TrafficLight::kGreen;
  s.successors = {2};
  LaneSegment t = s;
  t.id = 2;
  t.successors = {};
  t.traffic_light = TrafficLight::kUnknown;
  m.lane_segments = {s, t};
  m.lane_polygons = {{LaneType::kStraight, s.polygon}};
  m.centerlines = {{DividerType::kForbidden, {{-30, 0}, {30, 0}}}};
  m.drivable_area = {{{-30, -4}, {30, -4}, {30, 4}, {-30, 4}}};
  m.crosswalks = {{{-1, -4}, {1, -4}, {1, 4}, {-1, 4}}};
  return m;
}

Scene sample_scene() {
  Scene s;
  s.map = tiny_map();
  s.actors.push_back(make_vehicle({3, 1}, 2.0, 4.5, 0.2, 5.0, 0.25));
  s.actors.push_back(make_pedestrian({-1, 2}, 1.2, 1.0));
  s.actors.push_back(make_bicyclist({0, -3}, 0.6, 1.8, 3.1, 4.0, 3.1));
  return s;
}

}  // namespace

TEST_CASE("canonical_order sorts by x then y") {
  std::vector<Actor> actors = {make_pedestrian({3, 0}), make_pedestrian({-1, 0}),
                               make_pedestrian({0, 0})};
  auto sorted = canonical_order(actors);
  REQUIRE(sorted.size() == 3);
  CHECK(sorted[0].pos.x == -1);
  CHECK(sorted[1].pos.x == 0);
  CHECK(sorted[2].pos.x == 3);
}

TEST_CASE("canonical_order keeps insertion order on exact ties") {
  Actor a = make_pedestrian({1, 1}, 1.0, 0.5);
  Actor b = make_pedestrian({1, 1}, 2.0, 0.7);
  auto sorted = canonical_order({a, b});
  CHECK(sorted[0] == a);
  CHECK(sorted[1] == b);
}

TEST_CASE("canonical_order of empty input is empty") {
  CHECK(canonical_order({}).empty());
}

TEST_CASE("canonical_order is an idempotent permutation") {
  Rng rng(5);
  std::vector<Actor> actors;
  for (int i = 0; i < 40; ++i)
    actors.push_back(make_pedestrian({rng.uniform(-5, 5), rng.uniform(-5, 5)}, i + 1.0, 0.1));
  auto once = canonical_order(actors);
  auto twice = canonical_order(once);
  CHECK(once == twice);
  // Permutation: same multiset of speeds (used as identity tags).
  double sum = 0, sum0 = 0;
  for (const auto& a : actors) sum0 += a.speed;
  for (const auto& a : once) sum += a.speed;
  CHECK(sum == doctest::Approx(sum0));
  for (std::size_t i = 1; i < once.size(); ++i) {
    const bool ordered = once[i - 1].pos.x < once[i].pos.x ||
                         (once[i - 1].pos.x == once[i].pos.x && once[i - 1].pos.y <= once[i].pos.y);
    CHECK(ordered);
  }
}

TEST_CASE("boxes_collide basics") {
  Actor a = make_vehicle({0, 0}, 2, 4, 0.0);
  Actor b = make_vehicle({0, 0}, 2, 4, 1.0);
  CHECK(boxes_collide(a, a));
  CHECK(boxes_collide(a, b));
  Actor far = make_vehicle({100, 0}, 2, 4, 0.0);
  CHECK_FALSE(boxes_collide(a, far));
  Actor ped = make_pedestrian({0, 0});
  CHECK_THROWS_AS(boxes_collide(a, ped), std::invalid_argument);
}

TEST_CASE("rotate_scene identity and involution") {
  Scene s = sample_scene();
  Scene same = rotate_scene(s, 0.0);
  CHECK(same == s);

  Scene twice = rotate_scene(rotate_scene(s, 3.141592653589793), 3.141592653589793);
  REQUIRE(twice.actors.size() == s.actors.size());
  for (std::size_t i = 0; i < s.actors.size(); ++i) {
    CHECK(twice.actors[i].pos.x == doctest::Approx(s.actors[i].pos.x).epsilon(1e-9));
    CHECK(twice.actors[i].pos.y == doctest::Approx(s.actors[i].pos.y).epsilon(1e-9));
  }
  for (std::size_t i = 0; i < s.map.drivable_area[0].size(); ++i) {
    CHECK(twice.map.drivable_area[0][i].x ==
          doctest::Approx(s.map.drivable_area[0][i].x).epsilon(1e-9));
    CHECK(twice.map.drivable_area[0][i].y ==
          doctest::Approx(s.map.drivable_area[0][i].y).epsilon(1e-9));
  }
}

TEST_CASE("rotate_scene quarter turn moves (1,0) to (0,1)") {
  Scene s;
  s.map = HDMap{};
  s.actors.push_back(make_vehicle({1, 0}, 2, 4, 0.0));
  Scene r = rotate_scene(s, kTwoPi / 4);
  CHECK(r.actors[0].pos.x == doctest::Approx(0.0));
  CHECK(r.actors[0].pos.y == doctest::Approx(1.0));
  CHECK(r.actors[0].box->heading == doctest::Approx(kTwoPi / 4));
}

TEST_CASE("rotate_scene preserves pairwise distances and collisions") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Scene s;
    for (int i = 0; i < 8; ++i)
      s.actors.push_back(make_vehicle({rng.uniform(-10, 10), rng.uniform(-10, 10)},
                                      rng.uniform(0.5, 2.5), rng.uniform(1, 5), rng.angle()));
    const double angle = rng.angle();
    Scene r = rotate_scene(s, angle);
    for (std::size_t i = 0; i < s.actors.size(); ++i)
      for (std::size_t j = i + 1; j < s.actors.size(); ++j) {
        const double d0 = (s.actors[i].pos - s.actors[j].pos).norm();
        const double d1 = (r.actors[i].pos - r.actors[j].pos).norm();
        CHECK(std::abs(d0 - d1) < 1e-9);
        CHECK(boxes_collide(s.actors[i], s.actors[j]) ==
              boxes_collide(r.actors[i], r.actors[j]));
      }
  }
}

TEST_CASE("rotate_scene keeps stopped actors direction-canonical") {
  Scene s;
  s.actors.push_back(make_vehicle({2, 0}, 2, 4, 1.0, 0.0, 0.0));
  Scene r = rotate_scene(s, 1.5);
  CHECK(r.actors[0].direction == 0.0);
  CHECK_NOTHROW(validate_actor(r.actors[0], 40.0, "t"));
}

TEST_CASE("scene json round-trips bit-exactly") {
  Scene empty;
  empty.map = HDMap{};
  const json je = encode_scene(empty);
  const Scene back = decode_scene(je);
  CHECK(back == empty);
  CHECK(encode_scene(back).dump() == je.dump());

  // A 20-actor scene with all three classes and awkward double values.
  Rng rng(123);
  Scene s = sample_scene();
  for (int i = 0; i < 17; ++i) {
    const Vec2 p{rng.uniform(-39, 39), rng.uniform(-39, 39)};
    switch (i % 3) {
      case 0: s.actors.push_back(make_vehicle(p, rng.uniform(1.5, 2.5), rng.uniform(3.5, 6),
                                              rng.angle(), rng.uniform(0, 15), rng.angle()));
        break;
      case 1: s.actors.push_back(make_pedestrian(p, rng.uniform(0, 2), rng.angle())); break;
      case 2: s.actors.push_back(make_bicyclist(p, rng.uniform(0.4, 0.8), rng.uniform(1.4, 2),
                                                rng.angle(), rng.uniform(0, 8), rng.angle()));
        break;
    }
  }
  REQUIRE(s.actors.size() == 20);
  const json j = encode_scene(s);
  const Scene t = decode_scene(j);
  CHECK(t == s);
  CHECK(encode_scene(t).dump() == j.dump());
}

TEST_CASE("map json round-trips bit-exactly") {
  const HDMap m = tiny_map();
  const json j = encode_map(m);
  const HDMap t = decode_map(j);
  CHECK(t == m);
  CHECK(encode_map(t).dump() == j.dump());
}

TEST_CASE("decode rejects out-of-range heading") {
  json j = encode_scene(sample_scene());
  j["actors"][0]["heading"] = 7.0;  // > 2*pi
  try {
    decode_scene(j);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("heading out of range") != std::string::npos);
    CHECK(e.path.find("actors[0]") != std::string::npos);
  }
}

TEST_CASE("decode rejects malformed input with typed errors") {
  json j = encode_scene(sample_scene());
  j["actors"][1]["class"] = "dragon";
  CHECK_THROWS_AS(decode_scene(j), ParseError);

  json k = encode_scene(sample_scene());
  k["actors"][0].erase("width");
  CHECK_THROWS_AS(decode_scene(k), ParseError);

  json l = encode_scene(sample_scene());
  l["map"]["lane_segments"][0]["successors"] = {77};
  CHECK_THROWS_AS(decode_scene(l), ParseError);

  json n = encode_scene(sample_scene());
  n["actors"][0]["x"] = 400.0;  // outside region
  CHECK_THROWS_AS(decode_scene(n), ParseError);
}

TEST_CASE("scene with off-origin sdv is invalid") {
  Scene s = sample_scene();
  s.sdv.actor.pos = {1.0, 0.0};
  CHECK_THROWS_AS(validate_scene(s, "t"), ValidationError);
}
