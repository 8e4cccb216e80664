#include "echofusion/phantom_sim.hpp"
#include "echofusion/rng.hpp"
#include "echofusion/sector_geometry.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace echofusion;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Pixel (c, r) with apex at (ac, ar), opening angle `angle` centred on +rows, radius limit `range`.
bool in_fan(double c, double r, double ac, double ar, double angle, double range) {
  const double dc = c - ac, dr = r - ar;
  if (dr <= 0.0) return false;
  if (std::abs(dc) > std::tan(0.5 * angle * kDeg) * dr) return false;
  return std::hypot(dc, dr) <= range;
}

GrayImage fan_image(int w, int h, double ac, double ar, double angle, double range, float value = 100.0f) {
  GrayImage img(w, h, 0.0f);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (in_fan(c, r, ac, ar, angle, range)) img(c, r) = value;
  return img;
}

BinaryImage binarize(const GrayImage& img) {
  BinaryImage b(img.width, img.height, 0);
  for (std::size_t i = 0; i < img.data.size(); ++i) b.data[i] = img.data[i] > 0.0f;
  return b;
}

// Rasterized straight line through `p` with direction angle `deg` from the +row axis.
void draw_line(BinaryImage& img, Eigen::Vector2d p, double deg) {
  const Eigen::Vector2d d(std::sin(deg * kDeg), std::cos(deg * kDeg));
  for (double t = -400.0; t <= 400.0; t += 0.25) {
    const Eigen::Vector2d q = p + t * d;
    const int c = static_cast<int>(std::lround(q.x())), r = static_cast<int>(std::lround(q.y()));
    if (img.contains(c, r)) img(c, r) = 1;
  }
}

// 3D volume whose central xy slice holds an (xy_apex, xy_angle) sector and whose
// central yz slice holds a (yz_apex, yz_angle) sector.
VoxelVolume two_plane_sector(double xy_apex, double xy_angle, double yz_apex, double yz_angle, double spacing = 1.0,
                             int n = 128) {
  const VolumeSpec spec{{n, n, n}, spacing};
  VoxelVolume v(spec.dims, Vec3::Constant(spacing), spec.origin(), ElementKind::UInt8);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec3 p = v.voxel_to_world(Vec3(x, y, z));
        if (p.y() < 0.0) continue;
        const bool in_xy = std::abs(p.x()) <= std::tan(0.5 * xy_angle * kDeg) * (p.y() + xy_apex);
        const bool in_yz = std::abs(p.z()) <= std::tan(0.5 * yz_angle * kDeg) * (p.y() + yz_apex);
        if (in_xy && in_yz && p.norm() < 0.95 * n * spacing) v.set(x, y, z, 100.0);
      }
  return v;
}

}  // namespace

TEST_CASE("extract_sector_mask") {
  const GrayImage fan = fan_image(160, 140, 80.0, -20.0, 70.0, 150.0);
  SUBCASE("clean fan gives its exact mask") { CHECK(extract_sector_mask(fan) == binarize(fan)); }
  SUBCASE("small interior holes are closed") {
    GrayImage holed = fan;
    Rng rng(8);
    int made = 0;
    while (made < 50) {
      const double c = rng.uniform(0, 160), r = rng.uniform(0, 140), rad = rng.uniform(0.5, 2.0);
      // The fan is convex, so a square with inside corners keeps the hole and every closing window interior.
      bool inside = true;
      for (int k = 0; k < 4; ++k) inside = inside && in_fan(c + (k & 1 ? 7 : -7), r + (k & 2 ? 7 : -7), 80.0, -20.0, 70.0, 150.0);
      if (!inside) continue;
      for (int dr = -2; dr <= 2; ++dr)
        for (int dc = -2; dc <= 2; ++dc)
          if (std::hypot(dc, dr) <= rad) {
            const int cc = static_cast<int>(c) + dc, rr = static_cast<int>(r) + dr;
            if (holed.contains(cc, rr)) holed(cc, rr) = 0.0f;
          }
      ++made;
    }
    CHECK(extract_sector_mask(holed) == binarize(fan));
  }
  SUBCASE("empty slice") {
    CHECK_THROWS_WITH_AS(extract_sector_mask(GrayImage(20, 20, 0.0f)), "no sector found", SectorError);
  }
}

TEST_CASE("canny_edges") {
  SUBCASE("square perimeter") {
    BinaryImage sq(40, 40, 0);
    for (int r = 10; r < 30; ++r)
      for (int c = 10; c < 30; ++c) sq(c, r) = 1;
    // Morphological gradient oracle: pixels whose 3x3 neighbourhood is mixed.
    BinaryImage oracle(40, 40, 0);
    for (int r = 1; r < 39; ++r)
      for (int c = 1; c < 39; ++c) {
        int on = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) on += sq(c + dc, r + dr);
        oracle(c, r) = on > 0 && on < 9;
      }
    const BinaryImage e = canny_edges(sq);
    int count = 0;
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c) {
        if (!e(c, r)) continue;
        ++count;
        bool near = false;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) near = near || (oracle.contains(c + dc, r + dr) && oracle(c + dc, r + dr));
        CHECK(near);
      }
    CHECK(count >= 4 * 18);
  }
  SUBCASE("empty mask") {
    const BinaryImage e = canny_edges(BinaryImage(30, 30, 0));
    for (auto v : e.data) CHECK(v == 0);
  }
  SUBCASE("disk circumference") {
    const double radius = 25.0;
    BinaryImage disk(80, 80, 0);
    for (int r = 0; r < 80; ++r)
      for (int c = 0; c < 80; ++c) disk(c, r) = std::hypot(c - 40.0, r - 40.0) <= radius;
    const BinaryImage e = canny_edges(disk);
    int count = 0;
    for (int r = 0; r < 80; ++r)
      for (int c = 0; c < 80; ++c)
        if (e(c, r)) {
          ++count;
          CHECK(std::abs(std::hypot(c - 40.0, r - 40.0) - radius) <= 1.5);
        }
    // Every direction around the circle has an edge pixel nearby.
    for (int k = 0; k < 360; ++k) {
      const double cx = 40.0 + radius * std::cos(k * kDeg), cy = 40.0 + radius * std::sin(k * kDeg);
      bool hit = false;
      for (int dr = -2; dr <= 2 && !hit; ++dr)
        for (int dc = -2; dc <= 2 && !hit; ++dc) {
          const int c = static_cast<int>(std::lround(cx)) + dc, r = static_cast<int>(std::lround(cy)) + dr;
          hit = e(c, r) && std::hypot(c - cx, r - cy) <= 1.5;
        }
      CAPTURE(k);
      CHECK(hit);
    }
    // A digital circle has between 4 sqrt(2) r (8-connected) and 8 r (4-connected) pixels.
    CHECK(count >= 4.0 * std::sqrt(2.0) * radius);
    CHECK(count <= 8.0 * radius);
  }
}

TEST_CASE("hough_sector_lines") {
  SUBCASE("two lines through a common point") {
    BinaryImage img(200, 200, 0);
    const Eigen::Vector2d p(100, 40);
    draw_line(img, p, 30.0);
    draw_line(img, p, -30.0);
    const auto lines = hough_sector_lines(img);
    const LineIntersection x = line_intersection_angle(lines[0], lines[1]);
    CHECK(x.angle_deg == doctest::Approx(60.0).epsilon(1.0 / 60.0));
    CHECK((x.point - p).norm() < 1.5);
  }
  SUBCASE("single line") {
    BinaryImage img(200, 200, 0);
    draw_line(img, Eigen::Vector2d(100, 100), 20.0);
    CHECK_THROWS_WITH_AS(hough_sector_lines(img), "sector lines not found", SectorError);
  }
  SUBCASE("fan flanks with a curved far boundary") {
    const GrayImage fan = fan_image(260, 220, 130.0, -10.0, 70.0, 200.0);
    const auto lines = hough_sector_lines(canny_edges(extract_sector_mask(fan)));
    const LineIntersection x = line_intersection_angle(lines[0], lines[1]);
    CHECK(std::abs(x.angle_deg - 70.0) < 1.5);
    for (const auto& l : lines) {
      const double from_vertical = std::acos(std::abs(l.direction_into_sector().y())) / kDeg;
      CHECK(std::abs(from_vertical - 35.0) < 1.5);
    }
  }
}

TEST_CASE("line_intersection_angle") {
  using V = Eigen::Vector2d;
  const auto a = line_intersection_angle(LineParams::through(V(0, 0), V(1, 1)), LineParams::through(V(0, 0), V(1, -1)));
  CHECK(a.point.norm() < 1e-12);
  CHECK(a.angle_deg == doctest::Approx(90.0));

  const auto b = line_intersection_angle(LineParams::through(V(3, 4), V(1, 0)), LineParams::through(V(3, 4), V(0, 1)));
  CHECK((b.point - V(3, 4)).norm() < 1e-12);
  CHECK(b.angle_deg == doctest::Approx(90.0));

  const double s = std::sin(20.0 * kDeg), c = std::cos(20.0 * kDeg);
  const auto d = line_intersection_angle(LineParams::through(V(0, -15), V(s, c)), LineParams::through(V(0, -15), V(-s, c)));
  CHECK((d.point - V(0, -15)).norm() < 1e-9);
  CHECK(d.angle_deg == doctest::Approx(40.0));

  CHECK_THROWS_AS(line_intersection_angle(LineParams::through(V(0, 0), V(0, 1)), LineParams::through(V(5, 0), V(0, 1))),
                  SectorError);
}

TEST_CASE("estimate_camera_placement") {
  SUBCASE("different sectors in the two central planes") {
    const VoxelVolume v = two_plane_sector(25.0, 70.0, 20.0, 60.0);
    const PlacementEstimate e = estimate_placement_detailed(v);
    CHECK(e.yz.opening_angle_deg == doctest::Approx(60.0).epsilon(2.0 / 60.0));
    CHECK(e.xy.opening_angle_deg == doctest::Approx(70.0).epsilon(2.0 / 70.0));
    CHECK(std::abs(e.placement.distance - 20.0) < 2.0);
    CHECK(std::abs(e.placement.view_angle_deg - 70.0) < 2.0);
    CHECK(e.warnings.empty());
  }
  SUBCASE("symmetric sector") {
    const CameraPlacement p = estimate_camera_placement(two_plane_sector(18.0, 65.0, 18.0, 65.0));
    CHECK(std::abs(p.distance - 18.0) < 2.0);
    CHECK(std::abs(p.view_angle_deg - 65.0) < 2.0);
  }
  SUBCASE("gross disagreement is reported") {
    const PlacementEstimate e = estimate_placement_detailed(two_plane_sector(20.0, 85.0, 20.0, 40.0));
    CHECK(e.warnings.size() == 1);
    CHECK(std::abs(e.placement.view_angle_deg - 85.0) < 2.0);
  }
  SUBCASE("intensity scale and repetition do not change the result") {
    const VoxelVolume v = two_plane_sector(30.0, 55.0, 30.0, 55.0);
    VoxelVolume scaled = v;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.set_value(i, 2.5 * v.value(i));
    const CameraPlacement a = estimate_camera_placement(v), b = estimate_camera_placement(scaled),
                          c = estimate_camera_placement(v);
    CHECK(a.distance == b.distance);
    CHECK(a.view_angle_deg == b.view_angle_deg);
    CHECK(a.distance == c.distance);
    CHECK(a.view_angle_deg == c.view_angle_deg);
  }
  SUBCASE("empty volume") {
    VoxelVolume empty({32, 32, 32}, Vec3::Ones(), Vec3::Zero(), ElementKind::UInt8);
    CHECK_THROWS_WITH_AS(estimate_camera_placement(empty), "no sector found", SectorError);
  }
}

TEST_CASE("simulator fans across the supported range") {
  const VolumeSpec vol{{128, 128, 128}, 1.5};
  for (double angle : {40.0, 85.0})
    for (double apex : {10.0, 40.0}) {
      FanSpec fan;
      fan.angle_xy_deg = fan.angle_yz_deg = angle;
      fan.apex_depth_mm = apex;
      const SimFrame f = render_frame(default_fetal_head(), RigidPose::identity(), fan, vol, ArtifactSpec{}, 1);
      const CameraPlacement p = estimate_camera_placement(f.intensity);
      CAPTURE(angle);
      CAPTURE(apex);
      CHECK(std::abs(p.view_angle_deg - angle) <= 2.0);
      CHECK(std::abs(p.distance - apex) <= 2.0 * vol.spacing_mm);
    }
}
