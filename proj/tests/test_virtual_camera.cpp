#include "echofusion/phantom_sim.hpp"
#include "echofusion/rng.hpp"
#include "echofusion/virtual_camera.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>

using namespace echofusion;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Voxel centres at (origin + k * spacing); a voxel is foreground when its centre satisfies `inside`.
template <typename Fn>
SegmentationVolume rasterize(Index3 dims, double spacing, Vec3 origin, Fn inside) {
  SegmentationVolume s(dims, Vec3::Constant(spacing), origin);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x)
        if (inside(s.volume().voxel_to_world(Vec3(x, y, z)))) s.set(x, y, z, true);
  return s;
}

CameraModel test_camera(int size = 101, double distance = 20.0, double angle = 60.0) {
  return build_camera(CameraPlacement{distance, angle}, size, size, 400.0);
}

// Analytic z-depth of a sphere seen by `cam` (pose is camera-to-world), 0 on a miss.
DepthImage sphere_depth(const CameraModel& cam, const Vec3& center, double radius) {
  DepthImage d(cam.width, cam.height);
  const Vec3 c = cam.pose.inverse().apply(center);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 r = cam.ray(u, v);
      const double a = r.squaredNorm(), b = -2.0 * r.dot(c), k = c.squaredNorm() - radius * radius;
      const double disc = b * b - 4.0 * a * k;
      if (disc < 0.0) continue;
      d.at(u, v) = static_cast<float>((-b - std::sqrt(disc)) / (2.0 * a));
    }
  return d;
}

}  // namespace

TEST_CASE("focal length") {
  CHECK(focal_length_px(480, 90.0) == 240.0);
  CHECK(focal_length_px(480, 60.0) == doctest::Approx(415.6921938165).epsilon(1e-10));
  Rng rng(20);
  for (int k = 0; k < 20; ++k) {
    const double angle = rng.uniform(20.0, 160.0);
    CHECK(focal_length_px(480, angle) == doctest::Approx(240.0 / std::tan(0.5 * angle * kDeg)).epsilon(1e-9));
  }
  const CameraModel cam = build_camera(CameraPlacement{20.0, 90.0});
  CHECK(cam.width == 480);
  CHECK(cam.height == 480);
  CHECK(cam.fx == 240.0);
  CHECK(cam.fy == 240.0);
  CHECK(cam.cx == 239.5);
  CHECK(cam.cy == 239.5);
}

TEST_CASE("camera sits behind the probe plane and looks along +y") {
  const CameraModel cam = build_camera(CameraPlacement{17.0, 70.0});
  CHECK(cam.pose.translation().isApprox(Vec3(0, -17, 0)));
  CHECK(cam.pose.rotate(Vec3::UnitZ()).isApprox(Vec3::UnitY()));
  CHECK(cam.near_mm > 0.0);
  CHECK(cam.near_mm < cam.far_mm);
  const auto px = cam.project(cam.pose.inverse().apply(Vec3(0, 50, 0)));
  REQUIRE(px.has_value());
  CHECK(px->x() == doctest::Approx(cam.cx));
  CHECK(px->y() == doctest::Approx(cam.cy));
}

TEST_CASE("render_depth") {
  const CameraModel cam = test_camera();
  const int c = cam.width / 2;

  SUBCASE("slab face") {
    // Centres at half-millimetres so the 0.5 occupancy level sits exactly on y = 30.
    const auto slab = rasterize({80, 80, 80}, 1.0, Vec3(-39.5, 0.5, -39.5), [](const Vec3& p) { return p.y() >= 30.0; });
    const DepthImage d = render_depth(slab, cam);
    CHECK(std::abs(d.at(c, c) - 50.0) <= 0.5);
  }
  SUBCASE("empty segmentation") {
    const SegmentationVolume empty({20, 20, 20}, Vec3::Ones(), Vec3(-10, 0, -10));
    CHECK(render_depth(empty, cam).valid_count() == 0);
  }
  SUBCASE("sphere") {
    const Vec3 center(0, 20, 0);
    const auto ball = rasterize({80, 80, 80}, 0.5, Vec3(-19.75, 0.25, -19.75),
                                [&](const Vec3& p) { return (p - center).norm() <= 10.0; });
    const DepthImage d = render_depth(ball, cam);
    const double step = 0.25;
    CHECK(std::abs(d.at(c, c) - 30.0) <= step);
    // Depth grows from the centre towards the silhouette along the central row.
    for (int u = c; u + 1 < cam.width && d.at(u + 1, c) > 0.0f; ++u) CHECK(d.at(u + 1, c) >= d.at(u, c));
    for (int u = c; u - 1 >= 0 && d.at(u - 1, c) > 0.0f; --u) CHECK(d.at(u - 1, c) >= d.at(u, c));
  }
  SUBCASE("all valid depths lie in (near, far)") {
    const auto ball = rasterize({40, 40, 40}, 1.0, Vec3(-19.5, 0.5, -19.5),
                                [](const Vec3& p) { return (p - Vec3(0, 20, 0)).norm() <= 12.0; });
    const DepthImage d = render_depth(ball, cam);
    CHECK(d.valid_count() > 0);
    for (float z : d.depth)
      if (z > 0.0f) CHECK((z > cam.near_mm && z < cam.far_mm));
  }
}

TEST_CASE("rendered surface points lie on the analytic surface") {
  const PhantomScene scene = default_fetal_head();
  const VolumeSpec vol{{96, 96, 96}, 2.0};
  const SimFrame f = render_frame(scene, RigidPose::identity(), FanSpec{}, vol, ArtifactSpec{}, 1);
  const CameraModel cam = build_camera(CameraPlacement{20.0, 75.0}, f.segmentation.volume(), 160, 160);
  const DepthImage d = render_depth(f.segmentation, cam);
  REQUIRE(d.valid_count() > 1000);
  for (int v = 0; v < d.height; ++v)
    for (int u = 0; u < d.width; ++u) {
      if (d.at(u, v) <= 0.0f) continue;
      const Vec3 world = cam.pose.apply(d.at(u, v) * cam.ray(u, v));
      // Hits on the fan boundary plane are not head surface.
      if (!FanSpec{}.contains(world + Vec3(0, 2.0 * vol.spacing_mm, 0))) continue;
      CHECK(std::abs(scene_sdf(scene, world)) <= vol.spacing_mm);
    }
}

TEST_CASE("render_depth does not depend on the worker count") {
  const auto ball = rasterize({40, 40, 40}, 1.0, Vec3(-19.5, 0.5, -19.5),
                              [](const Vec3& p) { return (p - Vec3(0, 20, 0)).norm() <= 12.0; });
  const CameraModel cam = test_camera(64);
  setenv("ECHOFUSION_THREADS", "1", 1);
  const DepthImage one = render_depth(ball, cam);
  setenv("ECHOFUSION_THREADS", "3", 1);
  const DepthImage three = render_depth(ball, cam);
  unsetenv("ECHOFUSION_THREADS");
  CHECK(one == three);
}

TEST_CASE("smooth_occupancy") {
  const auto ball = rasterize({24, 24, 24}, 1.0, Vec3::Zero(), [](const Vec3& p) { return (p - Vec3(12, 12, 12)).norm() <= 6.0; });
  const VoxelVolume copy = smooth_occupancy(ball, 0.0);
  const VoxelVolume blur = smooth_occupancy(ball, 1.5);
  double sum_in = 0.0, sum_out = 0.0;
  for (std::size_t i = 0; i < blur.size(); ++i) {
    CHECK(copy.value(i) == ball.volume().value(i));
    CHECK(blur.value(i) >= 0.0);
    CHECK(blur.value(i) <= 1.0 + 1e-6);
    sum_in += copy.value(i);
    sum_out += blur.value(i);
  }
  // The ball sits far from the grid edge, so blurring preserves total mass.
  CHECK(sum_out == doctest::Approx(sum_in).epsilon(1e-4));
}

TEST_CASE("compute_vertex_normal_maps") {
  const CameraModel cam = test_camera(64);
  SUBCASE("fronto-parallel plane faces the camera") {
    DepthImage d(64, 64);
    std::fill(d.depth.begin(), d.depth.end(), 40.0f);
    const VertexNormalMaps m = compute_vertex_normal_maps(d, cam);
    CHECK(m.valid_count() > 0);
    for (std::size_t i = 0; i < m.valid.size(); ++i) {
      if (!m.valid[i]) continue;
      CHECK((m.normals[i] - Vec3f(0, 0, -1)).norm() < 1e-6);
    }
  }
  SUBCASE("invalid depth gives invalid maps") {
    CHECK(compute_vertex_normal_maps(DepthImage(64, 64), cam).valid_count() == 0);
  }
  SUBCASE("sphere normals and back-projection") {
    const CameraModel big = test_camera(201);
    const Vec3 center(0, 30, 0);
    const double radius = 15.0;
    const DepthImage d = sphere_depth(big, center, radius);
    const VertexNormalMaps m = compute_vertex_normal_maps(d, big);
    const Vec3 c_cam = big.pose.inverse().apply(center);
    int checked = 0;
    for (int v = 0; v < m.height; ++v)
      for (int u = 0; u < m.width; ++u) {
        const std::size_t i = m.index(u, v);
        if (!m.valid[i]) continue;
        const Vec3 p = m.vertices[i].cast<double>();
        CHECK(std::abs(m.normals[i].norm() - 1.0f) < 1e-4);
        CHECK(p.z() * (u - big.cx) / big.fx == doctest::Approx(p.x()).epsilon(1e-6));
        // Away from the silhouette the normal is within 3 degrees of the analytic one.
        const Vec3 analytic = (p - c_cam).normalized();
        if (-analytic.dot(p.normalized()) < std::cos(60.0 * kDeg)) continue;
        CHECK(std::acos(std::clamp(analytic.dot(m.normals[i].cast<double>()), -1.0, 1.0)) < 3.0 * kDeg);
        ++checked;
      }
    CHECK(checked > 1000);
  }
}

TEST_CASE("bilateral_filter and pyramid") {
  DepthImage d(32, 32);
  std::fill(d.depth.begin(), d.depth.end(), 25.0f);
  d.at(3, 3) = 0.0f;
  const DepthImage f = bilateral_filter(d, 2.0, 3.0);
  CHECK(f.at(3, 3) == 0.0f);
  for (std::size_t i = 0; i < f.depth.size(); ++i)
    if (d.depth[i] > 0.0f) CHECK(f.depth[i] == doctest::Approx(25.0f));

  const DepthImage half = downsample_depth(d, 5.0);
  CHECK(half.width == 16);
  CHECK(half.height == 16);
  CHECK(half.at(1, 1) == doctest::Approx(25.0f));

  const CameraModel cam = test_camera(64);
  const CameraModel l1 = cam.level(1);
  CHECK(l1.width == 32);
  CHECK(l1.fx == doctest::Approx(cam.fx / 2));
  CHECK(l1.cx == doctest::Approx(15.5));
}
