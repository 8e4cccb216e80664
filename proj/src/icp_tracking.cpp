#include "echofusion/icp_tracking.hpp"

#include "echofusion/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace echofusion {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void accumulate(NormalEquations& eq, const Vec3& p, const Vec3& q, const Vec3& n) {
  const double r = (p - q).dot(n);
  Vector6d j;
  j.head<3>() = p.cross(n);
  j.tail<3>() = n;
  eq.A.noalias() += j * j.transpose();
  eq.b -= j * r;
  eq.cost += r * r;
  eq.lever_sq += p.squaredNorm();
  ++eq.count;
}

struct LevelStats {
  NormalEquations eq;
  double abs_residual = 0.0;
};

// Projective association at one pyramid level. Rows are reduced in order so the
// sum does not depend on how rows were distributed over workers.
LevelStats associate(const VertexNormalMaps& src, const VertexNormalMaps& dst, const CameraModel& cam,
                     const RigidPose& pose, const IcpConfig& cfg) {
  std::vector<LevelStats> rows(src.height);
  const double cos_gate = std::cos(cfg.normal_gate_deg * kDeg);
  const Mat3& rot = pose.rotation();
  parallel_for(0, src.height, [&](int v) {
    LevelStats& acc = rows[v];
    for (int u = 0; u < src.width; ++u) {
      const std::size_t i = src.index(u, v);
      if (!src.valid[i]) continue;
      const Vec3 p = pose.apply(src.vertices[i].cast<double>());
      if (p.z() <= 0.0) continue;
      const long du = std::lround(cam.fx * p.x() / p.z() + cam.cx);
      const long dv = std::lround(cam.fy * p.y() / p.z() + cam.cy);
      if (du < 0 || dv < 0 || du >= dst.width || dv >= dst.height) continue;
      const std::size_t k = dst.index(static_cast<int>(du), static_cast<int>(dv));
      if (!dst.valid[k]) continue;
      const Vec3 q = dst.vertices[k].cast<double>();
      const Vec3 n = dst.normals[k].cast<double>();
      if ((p - q).norm() > cfg.distance_gate_mm) continue;
      if ((rot * src.normals[i].cast<double>()).dot(n) < cos_gate) continue;
      accumulate(acc.eq, p, q, n);
      acc.abs_residual += std::abs((p - q).dot(n));
    }
  });
  LevelStats total;
  for (const auto& r : rows) {
    total.eq.A += r.eq.A;
    total.eq.b += r.eq.b;
    total.eq.cost += r.eq.cost;
    total.eq.lever_sq += r.eq.lever_sq;
    total.eq.count += r.eq.count;
    total.abs_residual += r.abs_residual;
  }
  return total;
}

}  // namespace

NormalEquations build_normal_equations(std::span<const Correspondence> pairs, const RigidPose& pose) {
  NormalEquations eq;
  for (const auto& c : pairs) accumulate(eq, pose.apply(c.src), c.dst, c.normal);
  return eq;
}

double point_to_plane_cost(std::span<const Correspondence> pairs, const RigidPose& pose) {
  double cost = 0.0;
  for (const auto& c : pairs) {
    const double r = (pose.apply(c.src) - c.dst).dot(c.normal);
    cost += r * r;
  }
  return cost;
}

RigidPose apply_twist(const Vector6d& twist, const RigidPose& pose) {
  const Vec3 omega = twist.head<3>();
  const RigidPose inc = RigidPose::from_axis_angle(omega, omega.norm(), twist.tail<3>());
  return inc * pose;
}

TwistSolution solve_twist(const NormalEquations& eq, const IcpConfig& cfg) {
  TwistSolution sol;
  // Rotation components are measured as displacement at the RMS lever arm, so
  // every direction of the scaled system is in millimetres.
  const double lever = eq.count > 0 && eq.lever_sq > 0.0 ? std::sqrt(eq.lever_sq / eq.count) : 1.0;
  Vector6d scale;
  scale << 1.0 / lever, 1.0 / lever, 1.0 / lever, 1.0, 1.0, 1.0;
  const Matrix6d as = scale.asDiagonal() * eq.A * scale.asDiagonal();
  const Vector6d bs = scale.cwiseProduct(eq.b);
  Eigen::SelfAdjointEigenSolver<Matrix6d> es(as);
  if (es.info() != Eigen::Success) return sol;
  const Vector6d lambda = es.eigenvalues();
  const double lmax = lambda.maxCoeff();
  if (!(lmax > 0.0) || !std::isfinite(lmax)) return sol;
  Vector6d y = Vector6d::Zero();
  int observable = 0;
  for (int i = 0; i < 6; ++i) {
    if (lambda[i] < cfg.degenerate_eigen_ratio * lmax) continue;
    const auto vi = es.eigenvectors().col(i);
    y += (vi.dot(bs) / (lambda[i] + cfg.damping_ratio * lmax)) * vi;
    ++observable;
  }
  sol.degenerate_directions = 6 - observable;
  if (observable < cfg.min_observable_directions) return sol;
  sol.twist = scale.cwiseProduct(y);
  sol.ok = sol.twist.allFinite();
  return sol;
}

IcpResult icp_align(const VertexNormalMaps& src, const VertexNormalMaps& dst, const CameraModel& dst_cam,
                    const RigidPose& init, const IcpConfig& cfg) {
  IcpResult result;
  result.pose = init;
  const int levels = std::max(1, cfg.pyramid_levels);
  std::vector<VertexNormalMaps> src_pyr{src}, dst_pyr{dst};
  for (int l = 1; l < levels; ++l) {
    src_pyr.push_back(downsample_maps(src_pyr.back(), cfg.pyramid_max_jump_mm));
    dst_pyr.push_back(downsample_maps(dst_pyr.back(), cfg.pyramid_max_jump_mm));
  }

  RigidPose pose = init;
  for (int l = levels - 1; l >= 0; --l) {
    const int coarse_index = levels - 1 - l;
    const int iters = coarse_index < static_cast<int>(cfg.iterations.size()) ? cfg.iterations[coarse_index]
                                                                               : cfg.iterations.back();
    const CameraModel cam = dst_cam.level(l);
    for (int it = 0; it < iters; ++it) {
      const LevelStats stats = associate(src_pyr[l], dst_pyr[l], cam, pose, cfg);
      if (stats.eq.count < cfg.min_inliers) {
        result.failure = "too few inlier correspondences";
        return result;
      }
      const TwistSolution sol = solve_twist(stats.eq, cfg);
      if (!sol.ok) {
        result.failure = "singular normal equations";
        return result;
      }
      result.degenerate_directions = sol.degenerate_directions;
      pose = apply_twist(sol.twist, pose);
      if (sol.twist.tail<3>().norm() < cfg.epsilon_translation_mm &&
          sol.twist.head<3>().norm() < cfg.epsilon_rotation_rad)
        break;
    }
  }

  const LevelStats final_stats = associate(src, dst, dst_cam, pose, cfg);
  const std::size_t valid = src.valid_count();
  result.pose = pose;
  result.inlier_ratio = valid ? static_cast<double>(final_stats.eq.count) / static_cast<double>(valid) : 0.0;
  result.mean_residual = final_stats.eq.count ? final_stats.abs_residual / final_stats.eq.count : 0.0;
  result.success = final_stats.eq.count >= cfg.min_inliers;
  if (!result.success) result.failure = "too few inlier correspondences";
  return result;
}

Tracker::Tracker(CameraModel camera, TrackerConfig cfg) : camera_(std::move(camera)), cfg_(std::move(cfg)) {}

TrackResult Tracker::finish(TrackResult r) {
  if (r.status == TrackStatus::Lost) {
    ++losses_;
    r.pose = pose_;
  } else {
    pose_ = r.pose;
  }
  history_.push_back(r);
  return r;
}

TrackResult Tracker::track_frame(const SegmentationVolume& seg, const VoxelVolume* intensity) {
  TrackResult r;
  if (seg.count() == 0) {
    r.reason = "empty segmentation";
    return finish(r);
  }
  const DepthImage depth = cfg_.occupancy_sigma_vox > 0.0
                               ? render_depth(smooth_occupancy(seg, cfg_.occupancy_sigma_vox), camera_)
                               : render_depth(seg, camera_);
  if (intensity) last_view_ = render_intensity(*intensity, depth, camera_);
  if (depth.valid_count() < static_cast<std::size_t>(cfg_.icp.min_inliers)) {
    r.reason = "no visible surface";
    return finish(r);
  }

  if (!grid_) {
    grid_ = make_fitted_grid(seg, pose_, cfg_.tsdf);
    integrate(*grid_, depth, camera_.with_pose(pose_ * camera_.pose));
    r.status = TrackStatus::Tracked;
    r.pose = pose_;
    r.inlier_ratio = 1.0;
    return finish(r);
  }

  const DepthImage tracking_depth = cfg_.smooth_depth
                                        ? bilateral_filter(depth, cfg_.smooth_sigma_space_px, cfg_.smooth_sigma_depth_mm)
                                        : depth;
  const VertexNormalMaps src = compute_vertex_normal_maps(tracking_depth, camera_);
  const RigidPose prev_cam = pose_ * camera_.pose;
  const VertexNormalMaps dst = raycast(*grid_, camera_.with_pose(prev_cam));
  const IcpResult icp = icp_align(src, dst, camera_, RigidPose::identity(), cfg_.icp);
  r.inlier_ratio = icp.inlier_ratio;
  r.mean_residual = icp.mean_residual;
  if (!icp.success) {
    r.reason = icp.failure;
    return finish(r);
  }
  if (icp.inlier_ratio < cfg_.min_inlier_ratio || icp.mean_residual > cfg_.max_residual_mm) {
    r.reason = "alignment rejected";
    return finish(r);
  }
  const RigidPose cam_pose = prev_cam * icp.pose;
  r.pose = cam_pose * camera_.pose.inverse();
  r.status = TrackStatus::Tracked;
  integrate(*grid_, depth, camera_.with_pose(cam_pose));
  return finish(r);
}

RobustnessMetrics robustness_metrics(std::span<const TrackStatus> statuses) {
  RobustnessMetrics m;
  m.total_frames = static_cast<int>(statuses.size());
  int run = 0;
  for (TrackStatus s : statuses) {
    if (s == TrackStatus::Lost) {
      ++m.num_losses;
      run = 0;
    } else {
      m.longest_run = std::max(m.longest_run, ++run);
    }
  }
  return m;
}

RobustnessMetrics robustness_metrics(std::span<const TrackResult> results) {
  std::vector<TrackStatus> s;
  s.reserve(results.size());
  for (const auto& r : results) s.push_back(r.status);
  return robustness_metrics(s);
}

}  // namespace echofusion
