#pragma once

#include "echofusion/core_types.hpp"
#include "echofusion/sector_geometry.hpp"

#include <optional>
#include <vector>

namespace echofusion {

inline constexpr int kDefaultImageSize = 480;

/// Pinhole camera. `pose` maps camera coordinates (x right, y down, z forward)
/// into the world/volume frame.
struct CameraModel {
  int width = kDefaultImageSize;
  int height = kDefaultImageSize;
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  RigidPose pose;
  double near_mm = 1.0;
  double far_mm = 1000.0;

  // Ray through pixel (u, v) with unit z component; depth t gives point t * ray.
  Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
  std::optional<Eigen::Vector2d> project(const Vec3& p_cam) const;
  // Intrinsics for pyramid level `level` (each level halves the resolution).
  CameraModel level(int level) const;
  CameraModel with_pose(const RigidPose& p) const {
    CameraModel c = *this;
    c.pose = p;
    return c;
  }
};

/// Depth along the optical axis (camera z) in mm, 0 where invalid.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> depth;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), depth(std::size_t(w) * h, 0.0f) {}
  float& at(int u, int v) { return depth[std::size_t(v) * width + u]; }
  float at(int u, int v) const { return depth[std::size_t(v) * width + u]; }
  std::size_t valid_count() const;
  friend bool operator==(const DepthImage&, const DepthImage&) = default;
};

/// Per-pixel vertices and unit normals in the camera frame.
struct VertexNormalMaps {
  int width = 0;
  int height = 0;
  std::vector<Vec3f> vertices;
  std::vector<Vec3f> normals;
  std::vector<std::uint8_t> valid;

  VertexNormalMaps() = default;
  VertexNormalMaps(int w, int h)
      : width(w), height(h), vertices(std::size_t(w) * h, Vec3f::Zero()),
        normals(std::size_t(w) * h, Vec3f::Zero()), valid(std::size_t(w) * h, 0) {}
  std::size_t index(int u, int v) const { return std::size_t(v) * width + u; }
  std::size_t valid_count() const;
};

// f = (w/2) / tan(view_angle/2).
double focal_length_px(int width, double view_angle_deg);

// Camera-to-probe transform for an apex `distance` mm behind the y = 0 plane,
// optical axis along +y.
RigidPose probe_camera_pose(double distance);

CameraModel build_camera(const CameraPlacement& placement, int width = kDefaultImageSize,
                         int height = kDefaultImageSize, double scene_extent_mm = 0.0);
// far = distance + volume diagonal.
CameraModel build_camera(const CameraPlacement& placement, const VoxelVolume& extent_of,
                         int width = kDefaultImageSize, int height = kDefaultImageSize);

// Ray marching at half the minimum voxel spacing; the first background to
// foreground transition is refined by one bisection step followed by linear
// interpolation of the trilinear occupancy at the 0.5 level.
DepthImage render_depth(const SegmentationVolume& seg, const CameraModel& cam);
// Same marching over a float32 occupancy field in [0, 1].
DepthImage render_depth(const VoxelVolume& occupancy, const CameraModel& cam);

// Binary mask blurred by a separable Gaussian (sigma in voxels) into a float32
// occupancy field; removes the voxel staircase before ray marching. sigma 0 copies.
VoxelVolume smooth_occupancy(const SegmentationVolume& seg, double sigma_vox);

// Grayscale view of an intensity volume sampled at the depth image's surface points.
GrayImage render_intensity(const VoxelVolume& intensity, const DepthImage& depth, const CameraModel& cam);

VertexNormalMaps compute_vertex_normal_maps(const DepthImage& depth, const CameraModel& cam);

// Edge-preserving smoothing applied before tracking.
DepthImage bilateral_filter(const DepthImage& depth, double sigma_space_px, double sigma_depth_mm);

// 2x2 averaging over valid pixels within `max_jump_mm` of the block's nearest depth.
DepthImage downsample_depth(const DepthImage& depth, double max_jump_mm);
// 2x2 averaging of valid vertices and renormalized normals.
VertexNormalMaps downsample_maps(const VertexNormalMaps& maps, double max_jump_mm);

}  // namespace echofusion
