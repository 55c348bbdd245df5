#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "scenegen/raster.hpp"
#include "scenegen/rng.hpp"

using namespace scenegen;

namespace {

RasterConfig default_cfg() { return RasterConfig{40.0, 0.25, false}; }

HDMap one_lane_map() {
  HDMap m;
  LaneSegment s;
  s.id = 0;
  s.polygon = {{-20, -2}, {20, -2}, {20, 2}, {-20, 2}};
  s.orientation = kTwoPi / 4;  // pointing +y
  s.speed_limit = 13.5;
  s.traffic_light = TrafficLight::kRed;
  s.lane_type = LaneType::kStraight;
  m.lane_segments = {s};
  return m;
}

int count_nonzero(const RasterImage& img, int channel) {
  const double* ch = img.channel(channel);
  int n = 0;
  for (int i = 0; i < img.height * img.width; ++i) n += ch[i] != 0.0 ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("raster grid arithmetic") {
  const RasterConfig cfg = default_cfg();
  CHECK(cfg.grid() == 320);
  CHECK(cfg.col_of(-40.0) == 0);
  CHECK(cfg.col_of(39.99) == 319);
  CHECK(cfg.row_of(0.0) == 160);
  CHECK(cfg.col_center(0) == doctest::Approx(-39.875));
  CHECK_FALSE(cfg.in_region(40.0, 0.0));  // +x boundary exclusive
  CHECK(cfg.in_region(-40.0, 0.0));

  RasterConfig bad{40.0, 0.3, false};
  CHECK_THROWS_AS(bad.grid(), std::invalid_argument);
}

TEST_CASE("empty map rasterizes to all zeros") {
  const RasterImage img = rasterize_map(HDMap{}, default_cfg());
  CHECK(img.channels == 24);
  CHECK(img.height == 320);
  for (double v : img.data) CHECK(v == 0.0);
}

TEST_CASE("drivable polygon fills the expected pixel count") {
  HDMap m;
  m.drivable_area = {{{-5, -5}, {5, -5}, {5, 5}, {-5, 5}}};
  const RasterImage img = rasterize_map(m, default_cfg());

  // Brute-force oracle: pixel-center containment over the whole grid.
  const RasterConfig cfg = default_cfg();
  int expected = 0;
  for (int r = 0; r < 320; ++r)
    for (int c = 0; c < 320; ++c)
      if (point_in_polygon({cfg.col_center(c), cfg.row_center(r)}, m.drivable_area[0]))
        ++expected;
  CHECK(expected == 1600);  // 10m x 10m at 0.25m/px
  CHECK(count_nonzero(img, map_ch::kDrivable) == 1600);
  CHECK(count_nonzero(img, map_ch::kRoad) == 1600);
}

TEST_CASE("lane segment orientation fills biternion channels") {
  const RasterImage img = rasterize_map(one_lane_map(), default_cfg());
  const int filled = count_nonzero(img, map_ch::kOrientSin);
  CHECK(filled > 0);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if (img.at(map_ch::kOrientSin, r, c) != 0.0) {
        CHECK(img.at(map_ch::kOrientSin, r, c) == doctest::Approx(1.0));
        CHECK(std::abs(img.at(map_ch::kOrientCos, r, c)) < 1e-12);
        CHECK(img.at(map_ch::kSpeedLimit, r, c) == doctest::Approx(13.5));
        CHECK(img.at(map_ch::kLightFirst + int(TrafficLight::kRed), r, c) == 1.0);
        CHECK(img.at(map_ch::kSegmentStraight, r, c) == 1.0);
      }
    }
  CHECK(count_nonzero(img, map_ch::kReserved) == 0);
}

TEST_CASE("sdv-only raster touches only the sdv channel") {
  const RasterImage img = rasterize_actors(SDVState{}, {}, default_cfg());
  CHECK(count_nonzero(img, actor_ch::kSdv) > 0);
  CHECK(count_nonzero(img, actor_ch::kVehicle) == 0);
  CHECK(count_nonzero(img, actor_ch::kPedestrian) == 0);
  CHECK(count_nonzero(img, actor_ch::kBicyclist) == 0);
}

TEST_CASE("axis-aligned vehicle occupies 8x16 pixels") {
  SDVState sdv;
  std::vector<Actor> actors = {make_vehicle({0, 10}, 2.0, 4.0, 0.0, 5.0, 0.0)};
  const RasterImage img = rasterize_actors(sdv, actors, default_cfg());
  CHECK(count_nonzero(img, actor_ch::kVehicle) == 128);
}

TEST_CASE("motion channels cover exactly the occupancy pixels") {
  SDVState sdv;
  sdv.actor.speed = 0.0;
  std::vector<Actor> actors = {make_vehicle({8, 3}, 2.0, 4.5, 0.0, 5.0, 0.0)};
  const RasterImage img = rasterize_actors(sdv, actors, default_cfg());
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if (img.at(actor_ch::kVehicle, r, c) == 1.0) {
        CHECK(img.at(actor_ch::kSpeed, r, c) == doctest::Approx(5.0));
        CHECK(img.at(actor_ch::kDirCos, r, c) == doctest::Approx(1.0));
        CHECK(img.at(actor_ch::kDirSin, r, c) == doctest::Approx(0.0));
      }
      // Every motion pixel lies inside some occupancy footprint.
      if (img.at(actor_ch::kSpeed, r, c) != 0.0) {
        const bool occupied = img.at(actor_ch::kSdv, r, c) == 1.0 ||
                              img.at(actor_ch::kVehicle, r, c) == 1.0 ||
                              img.at(actor_ch::kPedestrian, r, c) == 1.0 ||
                              img.at(actor_ch::kBicyclist, r, c) == 1.0;
        CHECK(occupied);
      }
    }
}

TEST_CASE("pedestrian stamps a single pixel") {
  const RasterConfig cfg = default_cfg();
  std::vector<Actor> actors = {make_pedestrian({3.3, -7.8}, 1.1, 2.0)};
  const RasterImage img = rasterize_actors(SDVState{}, actors, cfg);
  CHECK(count_nonzero(img, actor_ch::kPedestrian) == 1);
  CHECK(img.at(actor_ch::kPedestrian, cfg.row_of(-7.8), cfg.col_of(3.3)) == 1.0);
  // Pedestrians have no heading: heading channels stay zero there.
  CHECK(img.at(actor_ch::kHeadCos, cfg.row_of(-7.8), cfg.col_of(3.3)) == 0.0);
}

TEST_CASE("later actors overwrite earlier ones on overlap") {
  std::vector<Actor> actors = {make_vehicle({5, 5}, 2.0, 4.0, 0.0, 3.0, 0.0),
                               make_vehicle({5, 5}, 2.0, 4.0, 0.0, 9.0, 0.0)};
  const RasterImage img = rasterize_actors(SDVState{}, actors, default_cfg());
  const RasterConfig cfg = default_cfg();
  CHECK(img.at(actor_ch::kSpeed, cfg.row_of(5.0), cfg.col_of(5.0)) == doctest::Approx(9.0));
}

TEST_CASE("compose_input concatenates channels") {
  HDMap m = one_lane_map();
  const RasterImage map_img = rasterize_map(m, default_cfg());
  const RasterImage actor_img = rasterize_actors(SDVState{}, {}, default_cfg());
  const RasterImage x = compose_input(map_img, actor_img);
  CHECK(x.channels == 33);
  CHECK(x.height == 320);
  // Input data appears unmodified in the output slices.
  for (int i = 0; i < 320 * 320; ++i) {
    CHECK(x.channel(map_ch::kOrientSin)[i] == map_img.channel(map_ch::kOrientSin)[i]);
    CHECK(x.channel(24 + actor_ch::kSdv)[i] == actor_img.channel(actor_ch::kSdv)[i]);
  }

  RasterImage mismatched(9, 64, 64);
  CHECK_THROWS_AS(compose_input(map_img, mismatched), std::invalid_argument);
}

TEST_CASE("rasterization is deterministic") {
  HDMap m = one_lane_map();
  m.crosswalks = {{{-3, -4}, {3, -4}, {3, 4}, {-3, 4}}};
  std::vector<Actor> actors = {make_vehicle({1, 1}, 2, 4.4, 0.7, 3, 0.7),
                               make_pedestrian({-2, 0.4}, 1, 0.3)};
  const RasterImage a = compose_input(rasterize_map(m, default_cfg()),
                                      rasterize_actors(SDVState{}, actors, default_cfg()));
  const RasterImage b = compose_input(rasterize_map(m, default_cfg()),
                                      rasterize_actors(SDVState{}, actors, default_cfg()));
  CHECK(a == b);
}

TEST_CASE("quarter-turn equivariance on binary channels") {
  // rotate_scene by pi/2 maps (x, y) -> (-y, x); on the grid that sends
  // (row, col) to (col', row') with col' = col_of(-y_center), row' = row_of(x_center).
  const RasterConfig cfg{8.0, 0.5, false};
  HDMap m;
  m.drivable_area = {{{-4, -2}, {3, -2}, {3, 1}, {-4, 1}}};
  m.crosswalks = {{{0.5, -1.5}, {2.5, -1.5}, {2.5, 0.5}, {0.5, 0.5}}};
  Scene s;
  s.region_m = cfg.region_m;
  s.map = m;
  s.actors = {make_vehicle({2, 1.5}, 1.0, 2.0, 0.0, 4.0, 0.0)};

  const Scene r = rotate_scene(s, kTwoPi / 4);
  const RasterImage base_map = rasterize_map(s.map, cfg);
  const RasterImage rot_map = rasterize_map(r.map, cfg);
  const RasterImage base_act = rasterize_actors(s.sdv, s.actors, cfg);
  const RasterImage rot_act = rasterize_actors(r.sdv, r.actors, cfg);

  const int n = cfg.grid();
  auto check_channel = [&](const RasterImage& base, const RasterImage& rot, int ch) {
    for (int row = 0; row < n; ++row)
      for (int col = 0; col < n; ++col) {
        const double x = cfg.col_center(col), y = cfg.row_center(row);
        const int col2 = cfg.col_of(-y), row2 = cfg.row_of(x);
        CHECK(base.at(ch, row, col) == rot.at(ch, row2, col2));
      }
  };
  check_channel(base_map, rot_map, map_ch::kDrivable);
  check_channel(base_map, rot_map, map_ch::kCrosswalk);
  check_channel(base_act, rot_act, actor_ch::kVehicle);
  check_channel(base_act, rot_act, actor_ch::kSdv);
}

TEST_CASE("binary channels contain only zeros and ones") {
  Rng rng(4);
  HDMap m = one_lane_map();
  std::vector<Actor> actors;
  for (int i = 0; i < 10; ++i)
    actors.push_back(make_vehicle({rng.uniform(-30, 30), rng.uniform(-30, 30)},
                                  rng.uniform(1.5, 2.5), rng.uniform(3, 6), rng.angle(),
                                  rng.uniform(0, 10), rng.angle()));
  const RasterImage img = rasterize_actors(SDVState{}, actors, default_cfg());
  for (int ch : {actor_ch::kSdv, actor_ch::kVehicle, actor_ch::kPedestrian, actor_ch::kBicyclist})
    for (int i = 0; i < img.height * img.width; ++i) {
      const double v = img.channel(ch)[i];
      CHECK((v == 0.0 || v == 1.0));
    }
  for (int i = 0; i < img.height * img.width; ++i)
    CHECK(img.channel(actor_ch::kSpeed)[i] >= 0.0);
}

TEST_CASE("reduced map variant has 9 channels") {
  RasterConfig cfg = default_cfg();
  cfg.reduced_map_channels = true;
  HDMap m = one_lane_map();
  m.centerlines = {{DividerType::kForbidden, {{-20, 0}, {20, 0}}}};
  m.lane_polygons = {{LaneType::kStraight, m.lane_segments[0].polygon}};
  const RasterImage img = rasterize_map(m, cfg);
  CHECK(img.channels == 9);
  CHECK(count_nonzero(img, map_ch_reduced::kLanes) > 0);
  CHECK(count_nonzero(img, map_ch_reduced::kCenterAll) > 0);
  CHECK(count_nonzero(img, map_ch_reduced::kCenterForbidden) ==
        count_nonzero(img, map_ch_reduced::kCenterAll));
  const RasterImage act = rasterize_actors(SDVState{}, {}, cfg);
  CHECK(compose_input(img, act).channels == 18);
}

TEST_CASE("polyline clipping stays inside the grid") {
  HDMap m;
  m.centerlines = {{DividerType::kAllowed, {{-500, -500}, {500, 500}}},
                   {DividerType::kMaybe, {{-100, 20}, {100, 20}}}};
  const RasterImage img = rasterize_map(m, default_cfg());  // must not crash
  CHECK(count_nonzero(img, map_ch::kDividerAllowed) > 0);
  CHECK(count_nonzero(img, map_ch::kDividerMaybe) == 320);
}

TEST_CASE("pgm dump writes a valid header") {
  HDMap m = one_lane_map();
  const RasterImage img = rasterize_map(m, RasterConfig{8.0, 0.5, false});
  const std::string path = "raster_test_dump.pgm";
  dump_channel_pgm(img, map_ch::kSpeedLimit, path);
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(w == 32);
  CHECK(h == 32);
  CHECK(maxv == 255);
  in.get();
  std::vector<char> payload(std::size_t(w) * h);
  in.read(payload.data(), payload.size());
  CHECK(in.gcount() == static_cast<std::streamsize>(payload.size()));
  std::remove(path.c_str());
  CHECK_THROWS_AS(dump_channel_pgm(img, 99, path), std::invalid_argument);
}
