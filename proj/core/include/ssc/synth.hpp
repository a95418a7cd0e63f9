#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "ssc/keyvalue.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

/// Axis-aligned box in camera-frame metres.
struct Box {
  Vec3 lo{}, hi{};
  std::uint8_t label = 0;
};

/// First intersection (z-depth along a z==1 ray from the camera centre) of a
/// ray with a box, or nullopt. Slab method.
std::optional<double> ray_box_depth(const Vec3& ray, const Box& box);

/// Rendered depth in mm for every pixel: nearest box hit, 0 on a miss.
DepthImage render_depth(const CameraIntrinsics& cam, const std::vector<Box>& boxes);

struct SceneConfig {
  std::size_t num_classes = 4;  // N semantic classes, ids 1..N
  VoxelGridSpec grid{{32, 16, 32}, 0.08, {-1.28, -0.38, 0.8}, 0.24};
  CameraIntrinsics camera{60.0, 60.0, 40.0, 30.0, 80, 60};
  /// Room bounds in voxels, [lo, hi) per axis; empty means the whole grid.
  std::optional<std::array<std::size_t, 6>> room;
  std::size_t objects_min = 2, objects_max = 5;
  std::size_t object_size_min = 2, object_size_max = 6;  // voxels per side
  bool ceiling = false;
  TsdfMode tsdf_mode = TsdfMode::Flipped;

  static SceneConfig from_keyvalues(const KeyValues& kv);
  static const std::vector<std::string>& keys();
  void validate() const;
};

inline constexpr std::uint8_t kFloorClass = 1;
inline constexpr std::uint8_t kWallClass = 2;

/// Room shell (floor, back and left walls, optional ceiling) plus random
/// boxes standing on the floor, ray-cast from the camera at the origin.
/// Object classes are drawn from 3..N when N >= 3, otherwise from 1..N.
SceneSample synth_scene(std::uint64_t seed, const SceneConfig& cfg);

/// Geometry used by synth_scene, exposed for tests.
struct SceneGeometry {
  std::vector<Box> render_boxes;  // shell slabs extended past the grid
  std::vector<Box> label_boxes;   // as rasterised into the label volume
};
SceneGeometry synth_geometry(std::uint64_t seed, const SceneConfig& cfg);

/// Voxel-centre rasterisation of label boxes; voxels outside `room` get kUnlabeled.
LabelVolume rasterize_labels(const VoxelGridSpec& grid, const std::array<std::size_t, 6>& room,
                             const std::vector<Box>& boxes);

}  // namespace ssc
