#include "ssc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ssc {

std::optional<double> ray_box_depth(const Vec3& ray, const Box& box) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < 3; ++a) {
    if (ray[a] == 0.0) {
      if (0.0 < box.lo[a] || 0.0 > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = box.lo[a] / ray[a], tb = box.hi[a] / ray[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  if (!(t0 > 0.0)) return std::nullopt;  // camera inside or box behind
  return t0;
}

DepthImage render_depth(const CameraIntrinsics& cam, const std::vector<Box>& boxes) {
  cam.validate();
  DepthImage depth(cam.width, cam.height);
  for (std::size_t v = 0; v < cam.height; ++v)
    for (std::size_t u = 0; u < cam.width; ++u) {
      const Vec3 ray = cam.pixel_ray(u, v);
      double best = std::numeric_limits<double>::infinity();
      for (const Box& b : boxes)
        if (auto t = ray_box_depth(ray, b)) best = std::min(best, *t);
      if (std::isfinite(best)) {
        const double mm = std::round(best * 1000.0);
        depth.at(u, v) = static_cast<std::uint16_t>(std::clamp(mm, 1.0, 65535.0));
      }
    }
  return depth;
}

const std::vector<std::string>& SceneConfig::keys() {
  static const std::vector<std::string> k = {
      "num_classes", "dims", "voxel_size", "origin", "truncation", "fx", "fy", "cx", "cy",
      "size", "room", "objects_min", "objects_max", "object_size_min", "object_size_max",
      "ceiling", "tsdf_mode"};
  return k;
}

SceneConfig SceneConfig::from_keyvalues(const KeyValues& kv) {
  const auto& k = keys();
  kv.reject_unknown(std::set<std::string>(k.begin(), k.end()), "scene config");
  SceneConfig c;
  c.num_classes = static_cast<std::size_t>(kv.get_int("num_classes", static_cast<long long>(c.num_classes)));
  KeyValues grid = c.grid.to_keyvalues();
  for (const char* key : {"dims", "voxel_size", "origin", "truncation"})
    if (kv.has(key)) grid.set(key, kv.get(key));
  c.grid = VoxelGridSpec::from_keyvalues(grid);
  c.camera.fx = kv.get_double("fx", c.camera.fx);
  c.camera.fy = kv.get_double("fy", c.camera.fy);
  c.camera.cx = kv.get_double("cx", c.camera.cx);
  c.camera.cy = kv.get_double("cy", c.camera.cy);
  if (kv.has("size")) {
    auto s = parse_sizes(kv.get("size"), "size");
    if (s.size() != 2) throw std::invalid_argument("size: expected WxH");
    c.camera.width = s[0];
    c.camera.height = s[1];
  }
  if (kv.has("room")) {
    auto r = parse_sizes(kv.get("room"), "room");
    if (r.size() != 6) throw std::invalid_argument("room: expected x0,y0,z0,x1,y1,z1");
    c.room = std::array<std::size_t, 6>{r[0], r[1], r[2], r[3], r[4], r[5]};
  }
  c.objects_min = static_cast<std::size_t>(kv.get_int("objects_min", static_cast<long long>(c.objects_min)));
  c.objects_max = static_cast<std::size_t>(kv.get_int("objects_max", static_cast<long long>(c.objects_max)));
  c.object_size_min =
      static_cast<std::size_t>(kv.get_int("object_size_min", static_cast<long long>(c.object_size_min)));
  c.object_size_max =
      static_cast<std::size_t>(kv.get_int("object_size_max", static_cast<long long>(c.object_size_max)));
  c.ceiling = kv.get_bool("ceiling", c.ceiling);
  const std::string mode = kv.get_or("tsdf_mode", "flipped");
  if (mode == "flipped") c.tsdf_mode = TsdfMode::Flipped;
  else if (mode == "standard") c.tsdf_mode = TsdfMode::Standard;
  else throw std::invalid_argument("tsdf_mode: expected flipped or standard, got '" + mode + "'");
  c.validate();
  return c;
}

namespace {

std::array<std::size_t, 6> room_bounds(const SceneConfig& c) {
  if (c.room) return *c.room;
  return {0, 0, 0, c.grid.dims[0], c.grid.dims[1], c.grid.dims[2]};
}

// Interior free extents available to objects: x past the left wall, y above
// the floor (below the ceiling), z before the back wall.
std::array<std::size_t, 3> interior(const SceneConfig& c) {
  const auto r = room_bounds(c);
  const std::size_t ix = r[3] - r[0] - 1;
  const std::size_t iy = r[4] - r[1] - 1 - (c.ceiling ? 1 : 0);
  const std::size_t iz = r[5] - r[2] - 1;
  return {ix, iy, iz};
}

}  // namespace

void SceneConfig::validate() const {
  grid.validate();
  camera.validate();
  if (num_classes < 1 || num_classes > 254) throw std::invalid_argument("num_classes must be in 1..254");
  const auto r = room_bounds(*this);
  for (std::size_t a = 0; a < 3; ++a) {
    if (r[a] >= r[a + 3] || r[a + 3] > grid.dims[a]) {
      throw std::invalid_argument("room bounds must satisfy lo < hi <= grid dims on every axis");
    }
  }
  if (r[3] - r[0] < 2 || r[4] - r[1] < (ceiling ? 3u : 2u) || r[5] - r[2] < 2) {
    throw std::invalid_argument("room too small for its shell");
  }
  if (objects_min > objects_max) throw std::invalid_argument("objects_min > objects_max");
  if (object_size_min < 1 || object_size_min > object_size_max) {
    throw std::invalid_argument("object sizes must satisfy 1 <= min <= max");
  }
  if (objects_max > 0) {
    const auto in = interior(*this);
    if (object_size_max > std::min({in[0], in[1], in[2]})) {
      throw std::invalid_argument("object_size_max " + std::to_string(object_size_max) +
                                  " exceeds the room interior " + std::to_string(in[0]) + "x" +
                                  std::to_string(in[1]) + "x" + std::to_string(in[2]));
    }
  }
}

SceneGeometry synth_geometry(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };
  const auto& g = cfg.grid;
  const auto r = room_bounds(cfg);
  const double vs = g.voxel_size;
  auto coord = [&](std::size_t axis, std::size_t idx) {
    return g.origin[axis] + static_cast<double>(idx) * vs;
  };
  constexpr double kFar = 1.0e3;

  SceneGeometry geo;
  auto add_shell = [&](Box label, Box render) {
    geo.label_boxes.push_back(label);
    geo.render_boxes.push_back(render);
  };
  // floor: bottom y layer (y points down)
  {
    Box l{{coord(0, r[0]), coord(1, r[4] - 1), coord(2, r[2])},
          {coord(0, r[3]), coord(1, r[4]), coord(2, r[5])}, kFloorClass};
    Box rb{{-kFar, l.lo[1], -kFar}, {kFar, l.hi[1], kFar}, kFloorClass};
    add_shell(l, rb);
  }
  // back wall: last z layer
  {
    Box l{{coord(0, r[0]), coord(1, r[1]), coord(2, r[5] - 1)},
          {coord(0, r[3]), coord(1, r[4]), coord(2, r[5])}, kWallClass};
    Box rb{{-kFar, -kFar, l.lo[2]}, {kFar, kFar, l.hi[2]}, kWallClass};
    add_shell(l, rb);
  }
  // left wall: first x layer
  {
    Box l{{coord(0, r[0]), coord(1, r[1]), coord(2, r[2])},
          {coord(0, r[0] + 1), coord(1, r[4]), coord(2, r[5])}, kWallClass};
    Box rb{{l.lo[0], -kFar, -kFar}, {l.hi[0], kFar, kFar}, kWallClass};
    add_shell(l, rb);
  }
  if (cfg.ceiling) {
    Box l{{coord(0, r[0]), coord(1, r[1]), coord(2, r[2])},
          {coord(0, r[3]), coord(1, r[1] + 1), coord(2, r[5])}, kWallClass};
    Box rb{{-kFar, l.lo[1], -kFar}, {kFar, l.hi[1], kFar}, kWallClass};
    add_shell(l, rb);
  }

  const std::size_t n_obj = uniform(cfg.objects_min, cfg.objects_max);
  const std::size_t floor_j = r[4] - 1;
  for (std::size_t o = 0; o < n_obj; ++o) {
    const std::size_t sx = uniform(cfg.object_size_min, cfg.object_size_max);
    const std::size_t sy = uniform(cfg.object_size_min, cfg.object_size_max);
    const std::size_t sz = uniform(cfg.object_size_min, cfg.object_size_max);
    const std::size_t x0 = uniform(r[0] + 1, r[3] - sx);
    const std::size_t z0 = uniform(r[2], r[5] - 1 - sz);
    const std::size_t y1 = floor_j;
    const std::size_t y0 = y1 - sy;
    std::uint8_t label;
    if (cfg.num_classes >= 3) label = static_cast<std::uint8_t>(uniform(3, cfg.num_classes));
    else label = static_cast<std::uint8_t>(uniform(1, cfg.num_classes));
    Box b{{coord(0, x0), coord(1, y0), coord(2, z0)}, {coord(0, x0 + sx), coord(1, y1), coord(2, z0 + sz)}, label};
    geo.label_boxes.push_back(b);
    geo.render_boxes.push_back(b);
  }

  for (const Box& b : geo.render_boxes) {
    bool inside = true;
    for (std::size_t a = 0; a < 3; ++a) inside = inside && b.lo[a] <= 0.0 && 0.0 <= b.hi[a];
    if (inside) throw std::invalid_argument("scene geometry encloses the camera; move the grid origin");
  }
  return geo;
}

LabelVolume rasterize_labels(const VoxelGridSpec& grid, const std::array<std::size_t, 6>& room,
                             const std::vector<Box>& boxes) {
  LabelVolume lv{grid, TensorU8(grid.shape(), kUnlabeled)};
  std::size_t idx = 0;
  for (std::size_t i = 0; i < grid.dims[0]; ++i)
    for (std::size_t j = 0; j < grid.dims[1]; ++j)
      for (std::size_t k = 0; k < grid.dims[2]; ++k, ++idx) {
        const bool in_room = i >= room[0] && i < room[3] && j >= room[1] && j < room[4] &&
                             k >= room[2] && k < room[5];
        if (!in_room) continue;
        const Vec3 c = grid.voxel_center(i, j, k);
        std::uint8_t label = 0;
        for (const Box& b : boxes) {
          if (c[0] > b.lo[0] && c[0] < b.hi[0] && c[1] > b.lo[1] && c[1] < b.hi[1] &&
              c[2] > b.lo[2] && c[2] < b.hi[2])
            label = b.label;
        }
        lv.labels[idx] = label;
      }
  return lv;
}

SceneSample synth_scene(std::uint64_t seed, const SceneConfig& cfg) {
  const SceneGeometry geo = synth_geometry(seed, cfg);
  SceneSample s;
  s.camera = cfg.camera;
  s.depth = render_depth(cfg.camera, geo.render_boxes);
  s.labels = rasterize_labels(cfg.grid, room_bounds(cfg), geo.label_boxes);
  s.tsdf = depth_to_tsdf(s.depth, cfg.camera, cfg.grid, cfg.tsdf_mode);
  s.visibility = compute_visibility(s.depth, cfg.camera, cfg.grid);
  return s;
}

}  // namespace ssc
