#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenegen/scene.hpp"

namespace scenegen {

// Bird's-eye-view grid over the square region [-region_m, region_m)^2.
// Column index grows with x, row index grows with y; bins are half-open
// [lo, lo + resolution), so the +x/+y boundary is exclusive.
struct RasterConfig {
  double region_m = 40.0;
  double resolution_m = 0.25;
  bool reduced_map_channels = false;  // 9-channel map variant

  int grid() const {
    const double cells = 2.0 * region_m / resolution_m;
    const int n = static_cast<int>(std::lround(cells));
    if (!(region_m > 0.0) || !(resolution_m > 0.0) || std::abs(cells - n) > 1e-9 || n <= 0)
      throw std::invalid_argument("RasterConfig: 2*region_m must be an exact multiple of resolution_m");
    return n;
  }

  int col_of(double x) const { return static_cast<int>(std::floor((x + region_m) / resolution_m)); }
  int row_of(double y) const { return static_cast<int>(std::floor((y + region_m) / resolution_m)); }
  double col_center(int col) const { return -region_m + (col + 0.5) * resolution_m; }
  double row_center(int row) const { return -region_m + (row + 0.5) * resolution_m; }
  bool in_region(double x, double y) const {
    return x >= -region_m && x < region_m && y >= -region_m && y < region_m;
  }

  bool operator==(const RasterConfig&) const = default;
};

// Fixed channel layout of the full (24-channel) map image. The enumerated
// semantic channels total 23; one reserved zero channel pads to 24.
namespace map_ch {
inline constexpr int kLaneStraight = 0;
inline constexpr int kLaneRight = 1;
inline constexpr int kLaneLeft = 2;
inline constexpr int kLaneBus = 3;
inline constexpr int kLaneBike = 4;
inline constexpr int kDividerAllowed = 5;
inline constexpr int kDividerForbidden = 6;
inline constexpr int kDividerMaybe = 7;
inline constexpr int kSegmentStraight = 8;
inline constexpr int kSegmentRight = 9;
inline constexpr int kSegmentLeft = 10;
inline constexpr int kDrivable = 11;
inline constexpr int kRoad = 12;
inline constexpr int kCrosswalk = 13;
inline constexpr int kLightFirst = 14;  // 6 channels, TrafficLight order
inline constexpr int kSpeedLimit = 20;
inline constexpr int kOrientCos = 21;
inline constexpr int kOrientSin = 22;
inline constexpr int kReserved = 23;
inline constexpr int kCount = 24;
}  // namespace map_ch

// Reduced (9-channel) map variant: lane polygons collapsed to one channel,
// centerlines split by divider type plus an all-centerlines channel.
namespace map_ch_reduced {
inline constexpr int kLanes = 0;
inline constexpr int kCenterAll = 1;
inline constexpr int kCenterAllowed = 2;
inline constexpr int kCenterForbidden = 3;
inline constexpr int kCenterMaybe = 4;
inline constexpr int kOrientCos = 5;
inline constexpr int kOrientSin = 6;
inline constexpr int kDrivable = 7;
inline constexpr int kSpeedLimit = 8;
inline constexpr int kCount = 9;
}  // namespace map_ch_reduced

namespace actor_ch {
inline constexpr int kSdv = 0;
inline constexpr int kVehicle = 1;
inline constexpr int kPedestrian = 2;
inline constexpr int kBicyclist = 3;
inline constexpr int kSpeed = 4;
inline constexpr int kDirCos = 5;
inline constexpr int kDirSin = 6;
inline constexpr int kHeadCos = 7;
inline constexpr int kHeadSin = 8;
inline constexpr int kCount = 9;
}  // namespace actor_ch

inline int map_channel_count(const RasterConfig& cfg) {
  return cfg.reduced_map_channels ? map_ch_reduced::kCount : map_ch::kCount;
}

struct RasterImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;  // [channel][row][col], row-major

  RasterImage() = default;
  RasterImage(int c, int h, int w) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, 0.0) {}

  double& at(int c, int r, int col) { return data[(std::size_t(c) * height + r) * width + col]; }
  double at(int c, int r, int col) const { return data[(std::size_t(c) * height + r) * width + col]; }
  double* channel(int c) { return data.data() + std::size_t(c) * height * width; }
  const double* channel(int c) const { return data.data() + std::size_t(c) * height * width; }

  bool operator==(const RasterImage&) const = default;
};

namespace detail {

// Visits every grid cell whose center lies inside the polygon.
template <typename Fn>
void fill_polygon(const Polygon& poly, const RasterConfig& cfg, int grid, Fn&& fn) {
  if (poly.size() < 3) return;
  double lo_x = poly[0].x, hi_x = poly[0].x, lo_y = poly[0].y, hi_y = poly[0].y;
  for (Vec2 v : poly) {
    lo_x = std::min(lo_x, v.x);
    hi_x = std::max(hi_x, v.x);
    lo_y = std::min(lo_y, v.y);
    hi_y = std::max(hi_y, v.y);
  }
  const int c0 = std::max(0, cfg.col_of(lo_x));
  const int c1 = std::min(grid - 1, cfg.col_of(hi_x));
  const int r0 = std::max(0, cfg.row_of(lo_y));
  const int r1 = std::min(grid - 1, cfg.row_of(hi_y));
  for (int r = r0; r <= r1; ++r) {
    const double y = cfg.row_center(r);
    for (int c = c0; c <= c1; ++c)
      if (point_in_polygon({cfg.col_center(c), y}, poly)) fn(r, c);
  }
}

// 1-pixel-wide polyline trace (Bresenham over clipped segments).
template <typename Fn>
void trace_polyline(const Polyline& line, const RasterConfig& cfg, int grid, Fn&& fn) {
  const double eps = cfg.resolution_m * 1e-6;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    Vec2 a = line[i], b = line[i + 1];
    if (!clip_segment(a, b, -cfg.region_m, -cfg.region_m, cfg.region_m - eps, cfg.region_m - eps))
      continue;
    int c0 = std::clamp(cfg.col_of(a.x), 0, grid - 1);
    int r0 = std::clamp(cfg.row_of(a.y), 0, grid - 1);
    const int c1 = std::clamp(cfg.col_of(b.x), 0, grid - 1);
    const int r1 = std::clamp(cfg.row_of(b.y), 0, grid - 1);
    const int dc = std::abs(c1 - c0), dr = -std::abs(r1 - r0);
    const int sc = c0 < c1 ? 1 : -1, sr = r0 < r1 ? 1 : -1;
    int err = dc + dr;
    while (true) {
      fn(r0, c0);
      if (c0 == c1 && r0 == r1) break;
      const int e2 = 2 * err;
      if (e2 >= dr) {
        err += dr;
        c0 += sc;
      }
      if (e2 <= dc) {
        err += dc;
        r0 += sr;
      }
    }
  }
}

// Stamps the actor footprint: box cells for boxed actors, the single cell at
// the position for pedestrians.
template <typename Fn>
void stamp_actor(const Actor& a, const RasterConfig& cfg, int grid, Fn&& fn) {
  if (a.box) {
    const ObbGeom obb = actor_obb(a);
    Polygon quad;
    for (Vec2 c : obb.corners()) quad.push_back(c);
    fill_polygon(quad, cfg, grid, fn);
  } else if (cfg.in_region(a.pos.x, a.pos.y)) {
    fn(cfg.row_of(a.pos.y), cfg.col_of(a.pos.x));
  }
}

}  // namespace detail

// Renders the HD map into its multi-channel image. Geometry outside the
// region is clipped. Overlapping elements resolve in list order (later wins
// on value channels).
inline RasterImage rasterize_map(const HDMap& map, const RasterConfig& cfg) {
  const int grid = cfg.grid();
  RasterImage img(map_channel_count(cfg), grid, grid);

  if (cfg.reduced_map_channels) {
    namespace ch = map_ch_reduced;
    for (const auto& lp : map.lane_polygons)
      detail::fill_polygon(lp.polygon, cfg, grid,
                           [&](int r, int c) { img.at(ch::kLanes, r, c) = 1.0; });
    for (const auto& cl : map.centerlines) {
      const int by_divider = cl.divider == DividerType::kAllowed   ? ch::kCenterAllowed
                             : cl.divider == DividerType::kForbidden ? ch::kCenterForbidden
                                                                     : ch::kCenterMaybe;
      detail::trace_polyline(cl.points, cfg, grid, [&](int r, int c) {
        img.at(ch::kCenterAll, r, c) = 1.0;
        img.at(by_divider, r, c) = 1.0;
      });
    }
    for (const auto& seg : map.lane_segments) {
      const double oc = std::cos(seg.orientation), os = std::sin(seg.orientation);
      detail::fill_polygon(seg.polygon, cfg, grid, [&](int r, int c) {
        img.at(ch::kOrientCos, r, c) = oc;
        img.at(ch::kOrientSin, r, c) = os;
        img.at(ch::kSpeedLimit, r, c) = seg.speed_limit;
      });
    }
    for (const auto& p : map.drivable_area)
      detail::fill_polygon(p, cfg, grid, [&](int r, int c) { img.at(ch::kDrivable, r, c) = 1.0; });
    return img;
  }

  namespace ch = map_ch;
  auto lane_type_channel = [](LaneType t) {
    switch (t) {
      case LaneType::kStraight: return ch::kLaneStraight;
      case LaneType::kRight: return ch::kLaneRight;
      case LaneType::kLeft: return ch::kLaneLeft;
      case LaneType::kBus: return ch::kLaneBus;
      case LaneType::kBike: return ch::kLaneBike;
    }
    return ch::kLaneStraight;
  };
  for (const auto& lp : map.lane_polygons) {
    const int kc = lane_type_channel(lp.type);
    detail::fill_polygon(lp.polygon, cfg, grid, [&](int r, int c) {
      img.at(kc, r, c) = 1.0;
      img.at(ch::kRoad, r, c) = 1.0;  // road = lanes plus drivable area
    });
  }
  for (const auto& cl : map.centerlines) {
    const int kc = cl.divider == DividerType::kAllowed   ? ch::kDividerAllowed
                   : cl.divider == DividerType::kForbidden ? ch::kDividerForbidden
                                                           : ch::kDividerMaybe;
    detail::trace_polyline(cl.points, cfg, grid, [&](int r, int c) { img.at(kc, r, c) = 1.0; });
  }
  for (const auto& seg : map.lane_segments) {
    int type_channel = -1;
    if (seg.lane_type == LaneType::kStraight) type_channel = ch::kSegmentStraight;
    if (seg.lane_type == LaneType::kRight) type_channel = ch::kSegmentRight;
    if (seg.lane_type == LaneType::kLeft) type_channel = ch::kSegmentLeft;
    const int light_channel = ch::kLightFirst + static_cast<int>(seg.traffic_light);
    const double oc = std::cos(seg.orientation), os = std::sin(seg.orientation);
    detail::fill_polygon(seg.polygon, cfg, grid, [&](int r, int c) {
      if (type_channel >= 0) img.at(type_channel, r, c) = 1.0;
      img.at(light_channel, r, c) = 1.0;
      img.at(ch::kSpeedLimit, r, c) = seg.speed_limit;
      img.at(ch::kOrientCos, r, c) = oc;
      img.at(ch::kOrientSin, r, c) = os;
    });
  }
  for (const auto& p : map.drivable_area)
    detail::fill_polygon(p, cfg, grid, [&](int r, int c) {
      img.at(ch::kDrivable, r, c) = 1.0;
      img.at(ch::kRoad, r, c) = 1.0;
    });
  for (const auto& p : map.crosswalks)
    detail::fill_polygon(p, cfg, grid, [&](int r, int c) { img.at(ch::kCrosswalk, r, c) = 1.0; });
  return img;
}

// Renders the SDV plus the given actors: four binary occupancy channels and
// five motion channels written over each footprint. Later actors overwrite
// earlier ones where footprints overlap (painter's order).
inline RasterImage rasterize_actors(const SDVState& sdv, const std::vector<Actor>& actors,
                                    const RasterConfig& cfg) {
  const int grid = cfg.grid();
  RasterImage img(actor_ch::kCount, grid, grid);

  auto paint = [&](const Actor& a, int occupancy_channel) {
    const double heading = a.box ? a.box->heading : 0.0;
    const double hc = a.box ? std::cos(heading) : 0.0;
    const double hs = a.box ? std::sin(heading) : 0.0;
    const double dc = std::cos(a.direction), ds = std::sin(a.direction);
    detail::stamp_actor(a, cfg, grid, [&](int r, int c) {
      img.at(occupancy_channel, r, c) = 1.0;
      img.at(actor_ch::kSpeed, r, c) = a.speed;
      img.at(actor_ch::kDirCos, r, c) = dc;
      img.at(actor_ch::kDirSin, r, c) = ds;
      img.at(actor_ch::kHeadCos, r, c) = hc;
      img.at(actor_ch::kHeadSin, r, c) = hs;
    });
  };

  paint(sdv.actor, actor_ch::kSdv);
  for (const auto& a : actors) {
    switch (a.cls) {
      case ActorClass::kVehicle: paint(a, actor_ch::kVehicle); break;
      case ActorClass::kPedestrian: paint(a, actor_ch::kPedestrian); break;
      case ActorClass::kBicyclist: paint(a, actor_ch::kBicyclist); break;
      case ActorClass::kStop:
        throw std::invalid_argument("rasterize_actors: stop token cannot be rasterized");
    }
  }
  return img;
}

// Channel concatenation, map channels first.
inline RasterImage compose_input(const RasterImage& map_img, const RasterImage& actor_img) {
  if (map_img.height != actor_img.height || map_img.width != actor_img.width)
    throw std::invalid_argument("compose_input: spatial shapes differ");
  RasterImage out(map_img.channels + actor_img.channels, map_img.height, map_img.width);
  std::copy(map_img.data.begin(), map_img.data.end(), out.data.begin());
  std::copy(actor_img.data.begin(), actor_img.data.end(),
            out.data.begin() + map_img.data.size());
  return out;
}

// Debug dump of one channel as a binary PGM (P5), min-max scaled to [0,255].
inline void dump_channel_pgm(const RasterImage& img, int channel, const std::string& path) {
  if (channel < 0 || channel >= img.channels)
    throw std::invalid_argument("dump_channel_pgm: channel out of range");
  const double* ch = img.channel(channel);
  const std::size_t n = std::size_t(img.height) * img.width;
  double lo = ch[0], hi = ch[0];
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, ch[i]);
    hi = std::max(hi, ch[i]);
  }
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_channel_pgm: cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (std::size_t i = 0; i < n; ++i)
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround((ch[i] - lo) * scale))));
}

}  // namespace scenegen
