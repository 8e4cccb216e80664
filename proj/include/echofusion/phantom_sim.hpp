#pragma once

#include "echofusion/core_types.hpp"
#include "echofusion/virtual_camera.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace echofusion {

enum class PrimitiveKind { Sphere, Ellipsoid, Capsule };

/// Analytic shape. Sphere uses radii.x; ellipsoid uses all three radii along
/// the world axes; capsule is a segment of half_length along `axis` swept by radius radii.x.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 radii{10.0, 10.0, 10.0};
  Vec3 axis{0.0, 0.0, 1.0};
  double half_length = 0.0;
  bool foreground = true;
  double intensity_mean = 120.0;
  double intensity_std = 0.0;

  double signed_distance(const Vec3& p) const;
  bool contains(const Vec3& p) const;
};

struct PhantomScene {
  std::vector<Primitive> primitives;
  double medium_intensity = 40.0;
  double medium_std = 0.0;

  // Mean of the foreground primitive centres.
  Vec3 centroid() const;
  void validate() const;
};

// One ellipsoid head (45 x 55 x 45 mm) centred 90 mm in front of the identity
// probe pose, plus two background-labelled capsule "limbs".
PhantomScene default_fetal_head();

// Exact distance from p to an axis-aligned ellipsoid centred at the origin;
// negative inside.
double ellipsoid_signed_distance(const Vec3& p, const Vec3& radii);

// Minimum over foreground primitives; negative inside the foreground.
double scene_sdf(const PhantomScene& scene, const Vec3& p);

/// Ultrasound sector in probe coordinates: apex at (0, -apex_depth, 0), opening
/// angle_xy across x and angle_yz across z, far boundary at max_range from the apex.
struct FanSpec {
  double apex_depth_mm = 20.0;
  double angle_xy_deg = 75.0;
  double angle_yz_deg = 75.0;
  double max_range_mm = 210.0;

  bool contains(const Vec3& p_probe) const;
};

struct VolumeSpec {
  Index3 dims{128, 128, 128};
  double spacing_mm = 1.5;

  // Origin centred in x and z with the first y plane at y = 0.
  Vec3 origin() const;
};

struct ArtifactSpec {
  double shadow_probability = 0.0;
  double shadow_cone_deg = 20.0;
  double dropout_probability = 0.0;
  double speckle_std = 0.0;

  void validate() const;
};

enum class TrajectoryPattern { Orbit, Sweep, RandomWalk };

struct TrajectorySpec {
  int frames = 30;
  double rotation_step_deg = 5.0;
  // Infinity leaves translation unconstrained (orbit only).
  double translation_step_mm = std::numeric_limits<double>::infinity();
  TrajectoryPattern pattern = TrajectoryPattern::Orbit;
  Vec3 axis{0.0, 0.0, 1.0};  // orbit axis through the centroid, or sweep direction
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimFrame {
  VoxelVolume intensity;
  SegmentationVolume segmentation;
  RigidPose pose;  // probe to world
  bool dropout = false;
  bool shadowed = false;
};

// Orbit: rotation about `axis` through the scene centroid, step limited by both
// bounds. Sweep: translation along `axis`. Random walk: bounded increments.
// Throws std::invalid_argument when the spec is infeasible or a pose would
// leave the centroid outside the fan.
std::vector<RigidPose> generate_trajectory(const TrajectorySpec& spec, const PhantomScene& scene,
                                           const FanSpec& fan = {});

SimFrame render_frame(const PhantomScene& scene, const RigidPose& probe_pose, const FanSpec& fan,
                      const VolumeSpec& vol, const ArtifactSpec& artifacts, std::uint64_t seed);

// The fan's support as a binary volume on the frame grid.
SegmentationVolume fan_support(const FanSpec& fan, const VolumeSpec& vol);

// Ground-truth foreground of `scene` sampled on an arbitrary grid whose voxel
// centres are mapped to the world by `grid_to_world`.
SegmentationVolume scene_mask(const PhantomScene& scene, const VoxelVolume& grid, const RigidPose& grid_to_world);

// Exact z-depth of the first foreground surface seen by `cam` (camera-in-probe
// pose) by sphere tracing the scene SDF; hits outside the fan are invalid.
DepthImage render_scene_depth(const PhantomScene& scene, const RigidPose& probe_pose, const FanSpec& fan,
                              const CameraModel& cam);

/// intensity > threshold, largest 6-connected component, then closing with a cubic kernel.
SegmentationVolume threshold_discriminator(const VoxelVolume& intensity, double threshold, int closing_kernel = 3);

SegmentationVolume largest_component(const SegmentationVolume& seg);
SegmentationVolume close_volume(const SegmentationVolume& seg, int kernel);

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t frame);

}  // namespace echofusion
