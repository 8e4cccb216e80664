#pragma once

#include "echofusion/core_types.hpp"
#include "echofusion/tsdf_fusion.hpp"
#include "echofusion/virtual_camera.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace echofusion {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

struct IcpConfig {
  int pyramid_levels = 3;
  std::vector<int> iterations{10, 5, 4};  // coarse to fine
  double distance_gate_mm = 25.0;
  double normal_gate_deg = 30.0;
  double epsilon_translation_mm = 1e-4;
  double epsilon_rotation_rad = 1e-6;
  int min_inliers = 6;
  // Directions of the lever-arm-scaled normal matrix with eigenvalue below this
  // fraction of the largest are treated as unobservable.
  double degenerate_eigen_ratio = 1e-6;
  // Added to the diagonal of the scaled system as a fraction of its largest
  // eigenvalue; shrinks steps along weakly observable directions.
  double damping_ratio = 1e-5;
  // Fewer well-conditioned directions than this is an alignment failure.
  int min_observable_directions = 3;
  double pyramid_max_jump_mm = 5.0;
};

/// Point pair for the point-to-plane residual ((T src - dst) . normal).
struct Correspondence {
  Vec3 src;
  Vec3 dst;
  Vec3 normal;
};

/// Linearized system A x = b for the twist x = (omega, v) applied on the left
/// of T: T' = (exp(omega), v) * T.
struct NormalEquations {
  Matrix6d A = Matrix6d::Zero();
  Vector6d b = Vector6d::Zero();
  double cost = 0.0;
  double lever_sq = 0.0;  // sum of squared distances of moved src points from the origin
  int count = 0;
};

NormalEquations build_normal_equations(std::span<const Correspondence> pairs, const RigidPose& pose);
double point_to_plane_cost(std::span<const Correspondence> pairs, const RigidPose& pose);
// Exact rotation from the rotation-vector part (Rodrigues); result stays on SE(3).
RigidPose apply_twist(const Vector6d& twist, const RigidPose& pose);

struct TwistSolution {
  Vector6d twist = Vector6d::Zero();
  int degenerate_directions = 0;
  bool ok = false;
};
TwistSolution solve_twist(const NormalEquations& eq, const IcpConfig& cfg);

struct IcpResult {
  RigidPose pose;  // maps src camera coordinates into dst camera coordinates
  double inlier_ratio = 0.0;
  double mean_residual = 0.0;
  int degenerate_directions = 0;
  bool success = false;
  std::string failure;
};

/// Coarse-to-fine point-to-plane ICP with projective data association: each
/// src vertex is moved by the current estimate, projected into dst_cam, and
/// paired with the dst vertex/normal at that pixel.
IcpResult icp_align(const VertexNormalMaps& src, const VertexNormalMaps& dst, const CameraModel& dst_cam,
                    const RigidPose& init, const IcpConfig& cfg = {});

enum class TrackStatus { Tracked, Lost };

struct TrackResult {
  RigidPose pose;  // probe frame to global frame
  TrackStatus status = TrackStatus::Lost;
  double inlier_ratio = 0.0;
  double mean_residual = 0.0;
  std::string reason;
};

struct TrackerConfig {
  IcpConfig icp;
  TsdfConfig tsdf;
  double min_inlier_ratio = 0.25;
  double max_residual_mm = 10.0;
  // Gaussian blur (voxels) of the segmentation before depth rendering; 0 renders the raw mask.
  double occupancy_sigma_vox = 3.0;
  bool smooth_depth = false;
  double smooth_sigma_space_px = 3.0;
  double smooth_sigma_depth_mm = 3.0;
};

/// Frame-to-model tracker. The global frame is the probe frame of the first
/// successfully fused frame.
class Tracker {
 public:
  // `camera` carries intrinsics and the camera-to-probe pose.
  Tracker(CameraModel camera, TrackerConfig cfg);

  TrackResult track_frame(const SegmentationVolume& seg, const VoxelVolume* intensity = nullptr);

  const CameraModel& camera() const { return camera_; }
  const TrackerConfig& config() const { return cfg_; }
  const std::optional<TsdfGrid>& grid() const { return grid_; }
  const RigidPose& pose() const { return pose_; }
  int loss_count() const { return losses_; }
  const std::vector<TrackResult>& history() const { return history_; }
  // Grayscale rendering of the last intensity volume passed to track_frame.
  const GrayImage& last_intensity_view() const { return last_view_; }

 private:
  TrackResult finish(TrackResult r);

  CameraModel camera_;
  TrackerConfig cfg_;
  std::optional<TsdfGrid> grid_;
  RigidPose pose_;
  int losses_ = 0;
  std::vector<TrackResult> history_;
  GrayImage last_view_;
};

struct RobustnessMetrics {
  int total_frames = 0;
  int num_losses = 0;
  int longest_run = 0;
};

RobustnessMetrics robustness_metrics(std::span<const TrackStatus> statuses);
RobustnessMetrics robustness_metrics(std::span<const TrackResult> results);

}  // namespace echofusion
