#pragma once

#include "echofusion/core_types.hpp"
#include "echofusion/virtual_camera.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace echofusion {

struct TsdfConfig {
  Index3 dims{256, 256, 256};
  // Voxel edge length in mm; 0 fits the grid to the first frame's foreground.
  double voxel_size = 0.0;
  double truncation_voxels = 4.0;
  float max_weight = 64.0f;
  double fit_scale = 1.5;
};

/// Truncated signed distance grid: tsdf in [-1, 1] (positive in front of the
/// surface) and a per-voxel integration weight. Unobserved voxels have weight 0.
class TsdfGrid {
 public:
  TsdfGrid() = default;
  TsdfGrid(Index3 dims, double voxel_size, Vec3 origin, double truncation, float max_weight = 64.0f);

  const Index3& dims() const { return dims_; }
  double voxel_size() const { return voxel_size_; }
  const Vec3& origin() const { return origin_; }
  double truncation() const { return truncation_; }
  float max_weight() const { return max_weight_; }
  std::size_t size() const { return tsdf_.size(); }

  std::size_t linear_index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
  }
  Vec3 voxel_center(int x, int y, int z) const { return origin_ + voxel_size_ * Vec3(x, y, z); }

  std::span<float> tsdf() { return tsdf_; }
  std::span<const float> tsdf() const { return tsdf_; }
  std::span<float> weight() { return weight_; }
  std::span<const float> weight() const { return weight_; }

  // Trilinear tsdf at a world point; fails unless all eight corners are observed.
  bool sample(const Vec3& world, double& out) const;
  // Central-difference gradient of the trilinear tsdf, step one voxel.
  std::optional<Vec3> gradient(const Vec3& world) const;

  friend bool operator==(const TsdfGrid&, const TsdfGrid&) = default;

 private:
  Index3 dims_{0, 0, 0};
  double voxel_size_ = 1.0;
  Vec3 origin_{0.0, 0.0, 0.0};
  double truncation_ = 4.0;
  float max_weight_ = 64.0f;
  std::vector<float> tsdf_;
  std::vector<float> weight_;
};

struct TriangleMesh {
  std::vector<Vec3f> vertices;
  std::vector<Vec3f> normals;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;
};

// Cubic grid centred on the foreground bounding box of `seg` (mapped into the
// global frame by `to_global`), scaled by cfg.fit_scale. Uses cfg.voxel_size when set.
TsdfGrid make_fitted_grid(const SegmentationVolume& seg, const RigidPose& to_global, const TsdfConfig& cfg);

// Projective TSDF update with weight increment 1, capped at max_weight.
void integrate(TsdfGrid& grid, const DepthImage& depth, const CameraModel& cam);

// Maps in the camera frame of `cam`; surface at the first +/- zero crossing.
VertexNormalMaps raycast(const TsdfGrid& grid, const CameraModel& cam);

// Marching cubes over cubes whose eight corners are all observed.
TriangleMesh extract_mesh(const TsdfGrid& grid);

}  // namespace echofusion
