#include "echofusion/icp_tracking.hpp"
#include "echofusion/phantom_sim.hpp"
#include "echofusion/rng.hpp"
#include "echofusion/virtual_camera.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace echofusion;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Asymmetric scene so that all six pose directions are observable.
PhantomScene asymmetric_scene() {
  PhantomScene s;
  Primitive body;
  body.kind = PrimitiveKind::Ellipsoid;
  body.center = {0.0, 90.0, 0.0};
  body.radii = {40.0, 55.0, 30.0};
  s.primitives.push_back(body);
  Primitive bump;
  bump.kind = PrimitiveKind::Sphere;
  bump.center = {25.0, 62.0, -15.0};
  bump.radii = Vec3::Constant(14.0);
  s.primitives.push_back(bump);
  return s;
}

const VolumeSpec kVolume{{128, 128, 128}, 1.5};

CameraModel frame_camera() {
  const VoxelVolume extent(kVolume.dims, Vec3::Constant(kVolume.spacing_mm), kVolume.origin(), ElementKind::UInt8);
  return build_camera(CameraPlacement{20.0, 75.0}, extent);
}

SegmentationVolume segment_at(const PhantomScene& scene, const RigidPose& probe) {
  return render_frame(scene, probe, FanSpec{}, kVolume, ArtifactSpec{}, 1).segmentation;
}

// Exact simulator depth, so alignment accuracy is not limited by voxelization.
VertexNormalMaps maps_at(const PhantomScene& scene, const RigidPose& probe, const CameraModel& cam) {
  return compute_vertex_normal_maps(render_scene_depth(scene, probe, FanSpec{}, cam), cam);
}

VertexNormalMaps seg_maps_at(const PhantomScene& scene, const RigidPose& probe, const CameraModel& cam) {
  return compute_vertex_normal_maps(render_depth(smooth_occupancy(segment_at(scene, probe), 3.0), cam), cam);
}

// Expected src-to-dst camera transform when src is seen from probe * delta and dst from probe.
RigidPose expected_alignment(const RigidPose& delta, const CameraModel& cam) {
  return cam.pose.inverse() * delta * cam.pose;
}

}  // namespace

TEST_CASE("icp_align identity") {
  const CameraModel cam = frame_camera();
  const VertexNormalMaps m = maps_at(asymmetric_scene(), RigidPose::identity(), cam);
  const IcpResult r = icp_align(m, m, cam, RigidPose::identity());
  REQUIRE(r.success);
  CHECK(r.pose.approx_equal(RigidPose::identity(), 1e-6));
  CHECK(r.inlier_ratio > 0.99);
  CHECK(r.mean_residual < 1e-6);
}

TEST_CASE("icp_align recovers known probe motions") {
  const PhantomScene scene = asymmetric_scene();
  const CameraModel cam = frame_camera();
  const VertexNormalMaps dst = maps_at(scene, RigidPose::identity(), cam);

  SUBCASE("2 mm translation") {
    const RigidPose delta = RigidPose::translation_only(Vec3(1.0, -1.0, 1.0).normalized() * 2.0);
    const IcpResult r = icp_align(maps_at(scene, delta, cam), dst, cam, RigidPose::identity());
    REQUIRE(r.success);
    CHECK(translation_error(r.pose, expected_alignment(delta, cam)) < 0.2);
    CHECK(rotation_error_deg(r.pose, expected_alignment(delta, cam)) < 0.3);
  }
  SUBCASE("5 degree rotation") {
    const RigidPose delta = RigidPose::from_axis_angle(Vec3(1.0, 0.3, 1.0), 5.0 * kDeg, Vec3::Zero());
    const IcpResult r = icp_align(maps_at(scene, delta, cam), dst, cam, RigidPose::identity());
    REQUIRE(r.success);
    CHECK(translation_error(r.pose, expected_alignment(delta, cam)) < 0.2);
    CHECK(rotation_error_deg(r.pose, expected_alignment(delta, cam)) < 0.3);
  }
  SUBCASE("error shrinks to a small fraction of the perturbation inside the basin") {
    Rng rng(4);
    for (int k = 0; k < 3; ++k) {
      const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
      const Vec3 t = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized() * rng.uniform(2.0, 8.0);
      const double angle = rng.uniform(2.0, 10.0);
      // Rotate about the scene centre so the rotation is not mostly a translation.
      const Vec3 c = scene.primitives[0].center;
      const RigidPose delta = RigidPose::translation_only(c + t) * RigidPose::from_axis_angle(axis, angle * kDeg, Vec3::Zero()) *
                              RigidPose::translation_only(-c);
      const RigidPose expected = expected_alignment(delta, cam);
      const IcpResult r = icp_align(maps_at(scene, delta, cam), dst, cam, RigidPose::identity());
      REQUIRE(r.success);
      CAPTURE(k);
      CHECK(rotation_error_deg(r.pose, expected) < 0.05 * expected.rotation_angle_deg());
      CHECK(translation_error(r.pose, expected) < 0.05 * expected.translation().norm());
    }
  }
}

TEST_CASE("segmentation-rendered frames align to within half a voxel") {
  // Binary voxelization quantizes surface position, which bounds the achievable accuracy.
  const PhantomScene scene = asymmetric_scene();
  const CameraModel cam = frame_camera();
  const VertexNormalMaps dst = seg_maps_at(scene, RigidPose::identity(), cam);
  const RigidPose delta = RigidPose::translation_only(Vec3(1.0, -1.0, 1.0).normalized() * 2.0);
  const IcpResult r = icp_align(seg_maps_at(scene, delta, cam), dst, cam, RigidPose::identity());
  REQUIRE(r.success);
  CHECK(translation_error(r.pose, expected_alignment(delta, cam)) < 0.5 * kVolume.spacing_mm);

  SUBCASE("whole-voxel shifts are recovered almost exactly") {
    const RigidPose shift = RigidPose::translation_only(Vec3(kVolume.spacing_mm, 0.0, 0.0));
    const IcpResult q = icp_align(seg_maps_at(scene, shift, cam), dst, cam, RigidPose::identity());
    REQUIRE(q.success);
    CHECK(translation_error(q.pose, expected_alignment(shift, cam)) < 0.02);
  }
}

TEST_CASE("plane alignment flags the in-plane null space") {
  const CameraModel cam = build_camera(CameraPlacement{0.0, 60.0}, 96, 96, 200.0);
  DepthImage near(96, 96), far(96, 96);
  std::fill(near.depth.begin(), near.depth.end(), 40.0f);
  std::fill(far.depth.begin(), far.depth.end(), 42.0f);
  const IcpResult r = icp_align(compute_vertex_normal_maps(far, cam), compute_vertex_normal_maps(near, cam), cam,
                                RigidPose::identity());
  REQUIRE(r.success);
  CHECK(r.pose.translation().z() == doctest::Approx(-2.0).epsilon(1e-6));
  CHECK(std::abs(r.pose.translation().x()) < 1e-6);
  CHECK(std::abs(r.pose.translation().y()) < 1e-6);
  CHECK(r.pose.rotation_angle_deg() < 1e-6);
  // x and y translation plus rotation about the normal.
  CHECK(r.degenerate_directions == 3);
}

TEST_CASE("normal equations match the finite-difference gradient of the cost") {
  Rng rng(9);
  std::vector<Correspondence> pairs;
  for (int i = 0; i < 200; ++i) {
    const Vec3 n = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Vec3 src(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(30, 90));
    pairs.push_back({src, src + Vec3(rng.normal(), rng.normal(), rng.normal()), n});
  }
  const RigidPose pose = RigidPose::from_axis_angle(Vec3(0.2, 1, 0.4), 0.05, Vec3(0.5, -0.3, 1.0));
  const NormalEquations eq = build_normal_equations(pairs, pose);
  CHECK(eq.count == 200);
  CHECK(eq.cost == doctest::Approx(point_to_plane_cost(pairs, pose)).epsilon(1e-12));
  const double h = 1e-6;
  for (int k = 0; k < 6; ++k) {
    Vector6d e = Vector6d::Zero();
    e[k] = h;
    const double numeric = (point_to_plane_cost(pairs, apply_twist(e, pose)) - point_to_plane_cost(pairs, apply_twist(-e, pose))) / (2 * h);
    // d(cost)/d(twist) = 2 J^T r = -2 b.
    CAPTURE(k);
    CHECK(-2.0 * eq.b[k] == doctest::Approx(numeric).epsilon(1e-4));
  }
}

TEST_CASE("solve_twist") {
  SUBCASE("well-conditioned system is solved exactly") {
    Rng rng(2);
    NormalEquations eq;
    Eigen::Matrix<double, 6, 6> m = Eigen::Matrix<double, 6, 6>::Random();
    eq.A = m * m.transpose() + 6.0 * Matrix6d::Identity();
    eq.b = Vector6d::Random();
    eq.count = 100;
    eq.lever_sq = 100.0;
    IcpConfig cfg;
    cfg.damping_ratio = 0.0;
    const TwistSolution s = solve_twist(eq, cfg);
    REQUIRE(s.ok);
    CHECK(s.degenerate_directions == 0);
    CHECK((eq.A * s.twist - eq.b).norm() < 1e-9);
  }
  SUBCASE("empty system is a failure") {
    CHECK_FALSE(solve_twist(NormalEquations{}, IcpConfig{}).ok);
  }
}

TEST_CASE("robustness_metrics") {
  using S = TrackStatus;
  const std::vector<S> seq{S::Tracked, S::Tracked, S::Lost, S::Tracked, S::Tracked, S::Tracked, S::Lost};
  const RobustnessMetrics m = robustness_metrics(seq);
  CHECK(m.total_frames == 7);
  CHECK(m.num_losses == 2);
  CHECK(m.longest_run == 3);

  const RobustnessMetrics all = robustness_metrics(std::vector<S>(10, S::Tracked));
  CHECK(all.num_losses == 0);
  CHECK(all.longest_run == 10);

  const RobustnessMetrics none = robustness_metrics(std::vector<S>{});
  CHECK(none.total_frames == 0);
  CHECK(none.longest_run == 0);
}

TEST_CASE("Tracker") {
  const PhantomScene scene = asymmetric_scene();
  const CameraModel cam = frame_camera();
  TrackerConfig cfg;

  SUBCASE("identical frames do not drift") {
    const SegmentationVolume seg = segment_at(scene, RigidPose::identity());
    Tracker tracker(cam, cfg);
    for (int k = 0; k < 10; ++k) {
      const TrackResult r = tracker.track_frame(seg);
      CHECK(r.status == TrackStatus::Tracked);
    }
    CHECK(tracker.loss_count() == 0);
    CHECK(tracker.pose().translation().norm() < 0.1);
    CHECK(tracker.pose().rotation_angle_deg() < 0.1);
  }
  SUBCASE("an empty frame is one loss and is not fused") {
    cfg.tsdf.dims = {96, 96, 96};
    Tracker tracker(cam, cfg);
    const SegmentationVolume empty(kVolume.dims, Vec3::Constant(kVolume.spacing_mm), kVolume.origin());
    std::vector<TrackStatus> statuses;
    for (int k = 0; k < 5; ++k) {
      const RigidPose probe = RigidPose::translation_only(Vec3(0.0, 0.0, 1.5 * k));
      if (k == 2) {
        const TsdfGrid before = *tracker.grid();
        const RigidPose pose_before = tracker.pose();
        const TrackResult r = tracker.track_frame(empty);
        CHECK(r.status == TrackStatus::Lost);
        CHECK(r.reason == "empty segmentation");
        CHECK(r.pose.approx_equal(pose_before, 0.0));
        CHECK(*tracker.grid() == before);
        statuses.push_back(r.status);
        continue;
      }
      statuses.push_back(tracker.track_frame(segment_at(scene, probe)).status);
    }
    const RobustnessMetrics m = robustness_metrics(statuses);
    CHECK(m.num_losses == 1);
    CHECK(statuses.back() == TrackStatus::Tracked);
    CHECK(tracker.loss_count() == 1);
    // The last frame was taken 6 mm along z.
    CHECK((tracker.pose().translation() - Vec3(0, 0, 6)).norm() < 1.0);
  }
}
