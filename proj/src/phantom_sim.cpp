#include "echofusion/phantom_sim.hpp"

#include "echofusion/parallel.hpp"
#include "echofusion/rng.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <stdexcept>

namespace echofusion {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double capsule_distance(const Primitive& c, const Vec3& p) {
  const Vec3 a = c.axis.normalized();
  const double t = std::clamp((p - c.center).dot(a), -c.half_length, c.half_length);
  return (p - (c.center + t * a)).norm() - c.radii.x();
}

// Rotation by `angle` about the line through `center` along `axis`.
RigidPose rotation_about(const Vec3& center, const Vec3& axis, double angle) {
  const RigidPose r = RigidPose::from_axis_angle(axis, angle, Vec3::Zero());
  return RigidPose::translation_only(center) * r * RigidPose::translation_only(-center);
}

// Separable box max (dilate) or min (erode) over a binary volume.
std::vector<std::uint8_t> box_filter(const std::vector<std::uint8_t>& in, const Index3& d, int kernel, bool dilate) {
  const int lo = kernel / 2, hi = kernel - 1 - lo;
  const std::uint8_t outside = dilate ? 0 : 1;
  std::vector<std::uint8_t> cur = in, next(in.size());
  const std::size_t stride[3] = {1, std::size_t(d[0]), std::size_t(d[0]) * d[1]};
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          const int coord[3] = {x, y, z};
          const std::size_t i = x + stride[1] * y + stride[2] * z;
          std::uint8_t acc = dilate ? 0 : 1;
          for (int k = -lo; k <= hi; ++k) {
            const int c = coord[axis] + k;
            const std::uint8_t v =
                (c >= 0 && c < d[axis]) ? cur[i + static_cast<std::ptrdiff_t>(k) * static_cast<std::ptrdiff_t>(stride[axis])] : outside;
            acc = dilate ? std::max(acc, v) : std::min(acc, v);
          }
          next[i] = acc;
        }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace

double ellipsoid_signed_distance(const Vec3& p, const Vec3& radii) {
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return radii[a] > radii[b]; });
  const double e0 = radii[order[0]], e1 = radii[order[1]], e2 = radii[order[2]];
  // Points exactly on a symmetry plane are nudged off it; the distance is continuous there.
  const double tiny = 1e-10 * e0;
  const double y0 = std::max(std::abs(p[order[0]]), tiny);
  const double y1 = std::max(std::abs(p[order[1]]), tiny);
  const double y2 = std::max(std::abs(p[order[2]]), tiny);
  const double z0 = y0 / e0, z1 = y1 / e1, z2 = y2 / e2;
  const double g0 = z0 * z0 + z1 * z1 + z2 * z2 - 1.0;
  if (g0 == 0.0) return 0.0;
  const double r0 = (e0 / e2) * (e0 / e2), r1 = (e1 / e2) * (e1 / e2);
  const double n0 = r0 * z0, n1 = r1 * z1;
  double s0 = z2 - 1.0;
  double s1 = g0 < 0.0 ? 0.0 : std::sqrt(n0 * n0 + n1 * n1 + z2 * z2) - 1.0;
  double s = 0.0;
  for (int i = 0; i < 200; ++i) {
    s = 0.5 * (s0 + s1);
    if (s == s0 || s == s1) break;
    const double a = n0 / (s + r0), b = n1 / (s + r1), c = z2 / (s + 1.0);
    const double g = a * a + b * b + c * c - 1.0;
    if (g > 0.0) s0 = s;
    else if (g < 0.0) s1 = s;
    else break;
  }
  const double x0 = r0 * y0 / (s + r0), x1 = r1 * y1 / (s + r1), x2 = y2 / (s + 1.0);
  const double dist = std::sqrt((x0 - y0) * (x0 - y0) + (x1 - y1) * (x1 - y1) + (x2 - y2) * (x2 - y2));
  return g0 < 0.0 ? -dist : dist;
}

double Primitive::signed_distance(const Vec3& p) const {
  switch (kind) {
    case PrimitiveKind::Sphere: return (p - center).norm() - radii.x();
    case PrimitiveKind::Ellipsoid: return ellipsoid_signed_distance(p - center, radii);
    case PrimitiveKind::Capsule: return capsule_distance(*this, p);
  }
  return 0.0;
}

bool Primitive::contains(const Vec3& p) const {
  switch (kind) {
    case PrimitiveKind::Sphere: return (p - center).squaredNorm() < radii.x() * radii.x();
    case PrimitiveKind::Ellipsoid: return (p - center).cwiseQuotient(radii).squaredNorm() < 1.0;
    case PrimitiveKind::Capsule: return capsule_distance(*this, p) < 0.0;
  }
  return false;
}

Vec3 PhantomScene::centroid() const {
  Vec3 c = Vec3::Zero();
  int n = 0;
  for (const auto& p : primitives)
    if (p.foreground) {
      c += p.center;
      ++n;
    }
  return n ? Vec3(c / n) : c;
}

void PhantomScene::validate() const {
  bool any_fg = false;
  for (const auto& p : primitives) {
    any_fg = any_fg || p.foreground;
    if ((p.radii.array() <= 0.0).any()) throw std::invalid_argument("primitive radii must be positive");
    if (p.kind == PrimitiveKind::Capsule && (p.half_length < 0.0 || p.axis.norm() == 0.0))
      throw std::invalid_argument("capsule needs a non-zero axis and non-negative half length");
  }
  if (!any_fg) throw std::invalid_argument("scene needs at least one foreground primitive");
}

PhantomScene default_fetal_head() {
  PhantomScene s;
  Primitive head;
  head.kind = PrimitiveKind::Ellipsoid;
  head.center = {0.0, 90.0, 0.0};
  head.radii = {45.0, 55.0, 45.0};
  head.intensity_mean = 120.0;
  s.primitives.push_back(head);

  Primitive limb;
  limb.kind = PrimitiveKind::Capsule;
  limb.foreground = false;
  limb.intensity_mean = 110.0;
  limb.center = {64.0, 120.0, 0.0};
  limb.axis = {0.0, 0.0, 1.0};
  limb.half_length = 18.0;
  limb.radii = Vec3::Constant(7.0);
  s.primitives.push_back(limb);

  limb.center = {-62.0, 70.0, 25.0};
  limb.axis = {0.4, 0.0, 1.0};
  limb.half_length = 16.0;
  limb.radii = Vec3::Constant(6.0);
  s.primitives.push_back(limb);
  return s;
}

double scene_sdf(const PhantomScene& scene, const Vec3& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& prim : scene.primitives)
    if (prim.foreground) d = std::min(d, prim.signed_distance(p));
  return d;
}

bool FanSpec::contains(const Vec3& p) const {
  if (p.y() < 0.0) return false;
  const double depth = p.y() + apex_depth_mm;
  if (std::abs(p.x()) > std::tan(0.5 * angle_xy_deg * kDeg) * depth) return false;
  if (std::abs(p.z()) > std::tan(0.5 * angle_yz_deg * kDeg) * depth) return false;
  return Vec3(p.x(), depth, p.z()).norm() <= max_range_mm;
}

Vec3 VolumeSpec::origin() const {
  return {-0.5 * (dims[0] - 1) * spacing_mm, 0.0, -0.5 * (dims[2] - 1) * spacing_mm};
}

void ArtifactSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(shadow_probability) || !prob(dropout_probability))
    throw std::invalid_argument("artifact probabilities must lie in [0, 1]");
  if (speckle_std < 0.0 || shadow_cone_deg < 0.0) throw std::invalid_argument("artifact magnitudes must be non-negative");
}

void TrajectorySpec::validate() const {
  if (frames < 1) throw std::invalid_argument("trajectory needs at least one frame");
  if (rotation_step_deg < 0.0 || translation_step_mm < 0.0)
    throw std::invalid_argument("trajectory bounds must be non-negative");
  if (frames > 1 && pattern == TrajectoryPattern::Orbit && rotation_step_deg == 0.0)
    throw std::invalid_argument("infeasible trajectory: orbit needs a positive rotation step");
  if (frames > 1 && pattern == TrajectoryPattern::Sweep && !std::isfinite(translation_step_mm))
    throw std::invalid_argument("infeasible trajectory: sweep needs a finite translation step");
  if (pattern != TrajectoryPattern::RandomWalk && axis.norm() == 0.0)
    throw std::invalid_argument("trajectory axis must be non-zero");
}

std::vector<RigidPose> generate_trajectory(const TrajectorySpec& spec, const PhantomScene& scene, const FanSpec& fan) {
  spec.validate();
  const Vec3 centroid = scene.centroid();
  auto keeps_target = [&](const RigidPose& pose) { return fan.contains(pose.inverse().apply(centroid)); };

  std::vector<RigidPose> poses;
  poses.reserve(spec.frames);
  switch (spec.pattern) {
    case TrajectoryPattern::Orbit: {
      const Vec3 axis = spec.axis.normalized();
      const Vec3 offset = -centroid;  // probe origin relative to the centroid at the identity pose
      const double radius = (offset - offset.dot(axis) * axis).norm();
      double step = spec.rotation_step_deg * kDeg;
      if (std::isfinite(spec.translation_step_mm) && radius > 0.0)
        step = std::min(step, 2.0 * std::asin(std::min(1.0, spec.translation_step_mm / (2.0 * radius))));
      for (int k = 0; k < spec.frames; ++k) poses.push_back(rotation_about(centroid, axis, k * step));
      break;
    }
    case TrajectoryPattern::Sweep: {
      const Vec3 dir = spec.axis.normalized();
      for (int k = 0; k < spec.frames; ++k)
        poses.push_back(RigidPose::translation_only(k * spec.translation_step_mm * dir));
      break;
    }
    case TrajectoryPattern::RandomWalk: {
      if (!std::isfinite(spec.translation_step_mm))
        throw std::invalid_argument("infeasible trajectory: random walk needs a finite translation step");
      Rng rng(spec.seed);
      poses.push_back(RigidPose::identity());
      for (int k = 1; k < spec.frames; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
          Vec3 axis(rng.normal(), rng.normal(), rng.normal());
          if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
          const double angle = rng.uniform() * spec.rotation_step_deg * kDeg;
          Vec3 t;
          do {
            t = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
          } while (t.squaredNorm() > 1.0);
          const RigidPose step = RigidPose::from_axis_angle(axis, angle, t * spec.translation_step_mm);
          const RigidPose candidate = poses.back() * step;
          if (keeps_target(candidate)) {
            poses.push_back(candidate);
            placed = true;
          }
        }
        if (!placed) throw std::invalid_argument("infeasible trajectory: random walk cannot keep the target in view");
      }
      break;
    }
  }
  for (const auto& p : poses)
    if (!keeps_target(p)) throw std::invalid_argument("infeasible trajectory: scene centroid leaves the fan");
  return poses;
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t frame) {
  return splitmix64(splitmix64(seed) ^ (frame + 1) * 0xD1B54A32D192ED03ull);
}

SimFrame render_frame(const PhantomScene& scene, const RigidPose& probe_pose, const FanSpec& fan,
                      const VolumeSpec& vol_spec, const ArtifactSpec& artifacts, std::uint64_t seed) {
  scene.validate();
  artifacts.validate();
  Rng rng(seed);
  SimFrame frame;
  frame.pose = probe_pose;
  frame.dropout = rng.bernoulli(artifacts.dropout_probability);
  frame.shadowed = rng.bernoulli(artifacts.shadow_probability);

  // Shadow cone: starts where a random beam inside the fan first meets the foreground.
  Vec3 shadow_apex = Vec3::Zero(), shadow_axis = Vec3::UnitY();
  if (frame.shadowed) {
    const double tx = std::tan(0.5 * fan.angle_xy_deg * kDeg) * rng.uniform(-0.5, 0.5);
    const double tz = std::tan(0.5 * fan.angle_yz_deg * kDeg) * rng.uniform(-0.5, 0.5);
    shadow_axis = Vec3(tx, 1.0, tz).normalized();
    const Vec3 apex(0.0, -fan.apex_depth_mm, 0.0);
    double t = fan.apex_depth_mm / shadow_axis.y();
    bool hit = false;
    while (t < fan.max_range_mm) {
      const Vec3 p = apex + t * shadow_axis;
      const double d = scene_sdf(scene, probe_pose.apply(p));
      if (d < 1e-3) {
        shadow_apex = p;
        hit = true;
        break;
      }
      t += std::max(d, 0.05);
    }
    frame.shadowed = hit;
  }
  const double cos_shadow = std::cos(0.5 * artifacts.shadow_cone_deg * kDeg);

  const Vec3 spacing = Vec3::Constant(vol_spec.spacing_mm);
  frame.intensity = VoxelVolume(vol_spec.dims, spacing, vol_spec.origin(), ElementKind::UInt8);
  frame.segmentation = SegmentationVolume(vol_spec.dims, spacing, vol_spec.origin());
  const auto& d = vol_spec.dims;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const Vec3 local = frame.intensity.voxel_to_world(Vec3(x, y, z));
        if (!fan.contains(local)) continue;
        if (frame.shadowed) {
          const Vec3 r = local - shadow_apex;
          const double along = r.dot(shadow_axis);
          if (along > 0.0 && along >= cos_shadow * r.norm()) continue;
        }
        const Vec3 world = probe_pose.apply(local);
        double mean = scene.medium_intensity, stddev = scene.medium_std;
        for (const auto& prim : scene.primitives) {
          if (!prim.contains(world)) continue;
          if (prim.foreground && frame.dropout) break;
          mean = prim.intensity_mean;
          stddev = prim.intensity_std;
          break;
        }
        double value = mean;
        if (stddev > 0.0) value += stddev * rng.normal();
        if (artifacts.speckle_std > 0.0) value += artifacts.speckle_std * rng.normal();
        frame.intensity.set(x, y, z, value);
        bool in_fg = false;
        for (const auto& prim : scene.primitives)
          if (prim.foreground && prim.contains(world)) {
            in_fg = true;
            break;
          }
        if (in_fg && !frame.dropout) frame.segmentation.set(x, y, z, true);
      }
  return frame;
}

SegmentationVolume fan_support(const FanSpec& fan, const VolumeSpec& vol) {
  SegmentationVolume s(vol.dims, Vec3::Constant(vol.spacing_mm), vol.origin());
  for (int z = 0; z < vol.dims[2]; ++z)
    for (int y = 0; y < vol.dims[1]; ++y)
      for (int x = 0; x < vol.dims[0]; ++x)
        if (fan.contains(s.volume().voxel_to_world(Vec3(x, y, z)))) s.set(x, y, z, true);
  return s;
}

SegmentationVolume scene_mask(const PhantomScene& scene, const VoxelVolume& grid, const RigidPose& grid_to_world) {
  SegmentationVolume s(grid.dims(), grid.spacing(), grid.origin());
  const auto& d = grid.dims();
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const Vec3 w = grid_to_world.apply(grid.voxel_to_world(Vec3(x, y, z)));
        for (const auto& prim : scene.primitives)
          if (prim.foreground && prim.contains(w)) {
            s.set(x, y, z, true);
            break;
          }
      }
  return s;
}

SegmentationVolume largest_component(const SegmentationVolume& seg) {
  const auto& d = seg.dims();
  const auto data = seg.data();
  std::vector<int> label(data.size(), 0);
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  std::deque<std::size_t> queue;
  const std::size_t sy = d[0], sz = std::size_t(d[0]) * d[1];
  for (std::size_t start = 0; start < data.size(); ++start) {
    if (!data[start] || label[start]) continue;
    label[start] = ++next;
    std::size_t size = 0;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      ++size;
      const int x = static_cast<int>(i % sy), y = static_cast<int>((i / sy) % d[1]), z = static_cast<int>(i / sz);
      const int nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
      for (const auto& n : nb) {
        if (!seg.volume().contains_index(n[0], n[1], n[2])) continue;
        const std::size_t j = seg.volume().linear_index(n[0], n[1], n[2]);
        if (data[j] && !label[j]) {
          label[j] = next;
          queue.push_back(j);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
  }
  SegmentationVolume out(d, seg.volume().spacing(), seg.volume().origin());
  if (best_label == 0) return out;
  VoxelVolume v = out.volume();
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] == best_label) v.u8()[i] = 1;
  return SegmentationVolume(std::move(v));
}

SegmentationVolume close_volume(const SegmentationVolume& seg, int kernel) {
  if (kernel <= 1) return seg;
  std::vector<std::uint8_t> in(seg.data().begin(), seg.data().end());
  auto closed = box_filter(box_filter(in, seg.dims(), kernel, true), seg.dims(), kernel, false);
  VoxelVolume v(seg.dims(), seg.volume().spacing(), seg.volume().origin(), ElementKind::UInt8);
  std::copy(closed.begin(), closed.end(), v.u8().begin());
  return SegmentationVolume(std::move(v));
}

SegmentationVolume threshold_discriminator(const VoxelVolume& intensity, double threshold, int closing_kernel) {
  VoxelVolume mask(intensity.dims(), intensity.spacing(), intensity.origin(), ElementKind::UInt8);
  for (std::size_t i = 0; i < intensity.size(); ++i) mask.u8()[i] = intensity.value(i) > threshold ? 1 : 0;
  return close_volume(largest_component(SegmentationVolume(std::move(mask))), closing_kernel);
}

DepthImage render_scene_depth(const PhantomScene& scene, const RigidPose& probe_pose, const FanSpec& fan,
                              const CameraModel& cam) {
  DepthImage out(cam.width, cam.height);
  const RigidPose cam_to_world = probe_pose * cam.pose;
  constexpr double kHitTolerance = 1e-6;
  constexpr int kMaxSteps = 512;
  parallel_for(0, cam.height, [&](int v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 ray = cam.ray(u, v);
      const double len = ray.norm();
      double t = cam.near_mm;
      for (int step = 0; step < kMaxSteps && t < cam.far_mm; ++step) {
        const Vec3 p_cam = ray * t;
        const double d = scene_sdf(scene, cam_to_world.apply(p_cam));
        if (d < kHitTolerance) {
          if (fan.contains(cam.pose.apply(p_cam))) out.at(u, v) = static_cast<float>(t);
          break;
        }
        // The union SDF is a lower bound on the distance, so the step never overshoots.
        t += std::max(d, kHitTolerance) / len;
      }
    }
  });
  return out;
}

}  // namespace echofusion
