#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssc/keyvalue.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

using Vec3 = std::array<double, 3>;

/// Pinhole camera. Camera frame: x right, y down, z forward; a point
/// projects to u = fx*x/z + cx, v = fy*y/z + cy and lands in pixel
/// (floor(u), floor(v)).
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::size_t width = 0, height = 0;

  void validate() const;
  /// Ray through the centre of pixel (u, v), scaled so that z == 1.
  Vec3 pixel_ray(std::size_t u, std::size_t v) const;
  /// Pixel hit by a camera-frame point; false if behind the camera or off-image.
  bool project(const Vec3& p, std::size_t& u, std::size_t& v) const;
};

/// Millimetre z-depth, row-major (height x width); 0 marks a missing reading.
struct DepthImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint16_t> mm;

  DepthImage() = default;
  DepthImage(std::size_t w, std::size_t h) : width(w), height(h), mm(w * h, 0) {}
  std::uint16_t at(std::size_t u, std::size_t v) const { return mm[v * width + u]; }
  std::uint16_t& at(std::size_t u, std::size_t v) { return mm[v * width + u]; }
  bool matches(const CameraIntrinsics& cam) const {
    return width == cam.width && height == cam.height && mm.size() == width * height;
  }
};

struct VoxelGridSpec {
  std::array<std::size_t, 3> dims{60, 36, 60};  // x, y, z voxels
  double voxel_size = 0.08;                      // metres
  Vec3 origin{-2.4, -1.38, 0.6};                 // corner of voxel (0,0,0), camera frame
  double truncation = 0.24;                      // metres

  void validate() const;
  Vec3 voxel_center(std::size_t i, std::size_t j, std::size_t k) const {
    return {origin[0] + (static_cast<double>(i) + 0.5) * voxel_size,
            origin[1] + (static_cast<double>(j) + 0.5) * voxel_size,
            origin[2] + (static_cast<double>(k) + 0.5) * voxel_size};
  }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  Shape shape() const { return {dims[0], dims[1], dims[2]}; }

  KeyValues to_keyvalues() const;
  static VoxelGridSpec from_keyvalues(const KeyValues& kv);
  friend bool operator==(const VoxelGridSpec&, const VoxelGridSpec&) = default;
};

enum class TsdfMode : std::uint8_t { Standard, Flipped };

/// Normalised signed distance in [-1, 1]; positive on the camera side of
/// the observed surface.
struct TsdfVolume {
  VoxelGridSpec grid;
  TsdfMode mode = TsdfMode::Standard;
  TensorF values;  // [Dx, Dy, Dz]
};

inline constexpr std::uint8_t kUnlabeled = 255;

/// Class ids 0..N with 0 = empty; kUnlabeled outside the evaluation region.
struct LabelVolume {
  VoxelGridSpec grid;
  TensorU8 labels;  // [Dx, Dy, Dz]
};

enum class VoxelState : std::uint8_t {
  ObservedFree = 0,
  ObservedSurface = 1,
  Occluded = 2,
  OutsideFrustum = 3,
};

struct VisibilityVolume {
  VoxelGridSpec grid;
  TensorU8 states;  // VoxelState per voxel, [Dx, Dy, Dz]

  VoxelState at(std::size_t v) const { return static_cast<VoxelState>(states[v]); }
};

struct SceneSample {
  DepthImage depth;
  CameraIntrinsics camera;
  LabelVolume labels;
  TsdfVolume tsdf;
  VisibilityVolume visibility;
};

/// clamp((pixel depth - voxel z) / truncation, -1, 1), flipped on request.
/// Voxels outside the frustum or over a missing reading are 0 in both modes.
TsdfVolume depth_to_tsdf(const DepthImage& depth, const CameraIntrinsics& cam,
                         const VoxelGridSpec& grid, TsdfMode mode = TsdfMode::Flipped);

/// sign(v) * (1 - |v|), sign(0) = +1. Rejects volumes that are already flipped.
TsdfVolume flip_tsdf(const TsdfVolume& standard);

VisibilityVolume compute_visibility(const DepthImage& depth, const CameraIntrinsics& cam,
                                    const VoxelGridSpec& grid);

/// Empty -> 0, any semantic class -> 1, kUnlabeled kept.
TensorU8 binary_occupancy_labels(const TensorU8& labels);
LabelVolume binary_occupancy_labels(const LabelVolume& labels);

/// Network input tensor [1, Dx, Dy, Dz].
TensorF tsdf_input(const TsdfVolume& tsdf);

// ---- files -----------------------------------------------------------------

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples).
void save_depth_pgm(const std::filesystem::path& path, const DepthImage& depth);
DepthImage load_depth_pgm(const std::filesystem::path& path);

/// Five lines: fx= fy= cx= cy= size=WxH
void save_camera(const std::filesystem::path& path, const CameraIntrinsics& cam);
CameraIntrinsics load_camera(const std::filesystem::path& path);
CameraIntrinsics camera_from_keyvalues(const KeyValues& kv);

/// Sample directory: depth.pgm, camera.txt, sample.txt (grid + tsdf mode),
/// labels.vxt, tsdf.vxt, visibility.vxt.
void save_sample(const std::filesystem::path& dir, const SceneSample& s);
SceneSample load_sample(const std::filesystem::path& dir);

/// Text point list `x y z class` for every voxel whose class is neither
/// empty nor unlabeled.
void export_points(std::ostream& os, const LabelVolume& labels);

}  // namespace ssc
