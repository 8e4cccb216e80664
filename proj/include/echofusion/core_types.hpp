#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace echofusion {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec3f = Eigen::Vector3f;
using Index3 = std::array<int, 3>;

// World frame convention shared by every module: the probe sits at y < 0 and
// looks towards +y; the volume origin is centred in the xz-plane at y = 0.

enum class ElementKind : std::uint8_t { UInt8, Int16, Float32 };

/// Dense scalar volume with physical spacing and origin. Data is stored with
/// the x index fastest, then y, then z. `origin` is the world position of the
/// centre of voxel (0,0,0).
class VoxelVolume {
 public:
  VoxelVolume() = default;
  VoxelVolume(Index3 dims, Vec3 spacing, Vec3 origin, ElementKind kind);

  const Index3& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  ElementKind kind() const;
  std::size_t size() const {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }
  bool empty() const { return size() == 0; }

  std::size_t linear_index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
  }
  bool contains_index(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_[0] && y < dims_[1] && z < dims_[2];
  }

  double at(int x, int y, int z) const { return value(linear_index(x, y, z)); }
  double value(std::size_t i) const;
  // Stores v converted to the element kind (rounded and saturated for integer kinds).
  void set(int x, int y, int z, double v) { set_value(linear_index(x, y, z), v); }
  void set_value(std::size_t i, double v);

  Vec3 voxel_to_world(const Vec3& idx) const { return origin_ + idx.cwiseProduct(spacing_); }
  Vec3 world_to_voxel(const Vec3& p) const { return (p - origin_).cwiseQuotient(spacing_); }

  // Empty optional when any of the eight interpolation corners is outside the grid.
  std::optional<double> trilinear_sample(const Vec3& world_point) const;

  std::span<const std::uint8_t> u8() const { return std::get<std::vector<std::uint8_t>>(data_); }
  std::span<std::uint8_t> u8() { return std::get<std::vector<std::uint8_t>>(data_); }
  std::span<const std::int16_t> i16() const { return std::get<std::vector<std::int16_t>>(data_); }
  std::span<std::int16_t> i16() { return std::get<std::vector<std::int16_t>>(data_); }
  std::span<const float> f32() const { return std::get<std::vector<float>>(data_); }
  std::span<float> f32() { return std::get<std::vector<float>>(data_); }

  // Raw element bytes in host order.
  std::span<const std::byte> bytes() const;
  std::span<std::byte> bytes();

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;

 private:
  Index3 dims_{0, 0, 0};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  std::variant<std::vector<std::uint8_t>, std::vector<std::int16_t>, std::vector<float>> data_;
};

std::size_t element_size(ElementKind kind);

/// Binary uint8 volume, every voxel 0 (background) or 1 (foreground).
class SegmentationVolume {
 public:
  SegmentationVolume() = default;
  SegmentationVolume(Index3 dims, Vec3 spacing, Vec3 origin);
  // Throws std::invalid_argument unless `vol` is uint8 with values in {0,1}.
  explicit SegmentationVolume(VoxelVolume vol);

  const VoxelVolume& volume() const { return vol_; }
  const Index3& dims() const { return vol_.dims(); }
  std::span<const std::uint8_t> data() const { return vol_.u8(); }
  bool foreground(int x, int y, int z) const { return data()[vol_.linear_index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool fg) { vol_.u8()[vol_.linear_index(x, y, z)] = fg ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const SegmentationVolume&, const SegmentationVolume&) = default;

 private:
  VoxelVolume vol_;
};

/// Rigid transform x -> R x + t. Construction checks orthonormality.
class RigidPose {
 public:
  static constexpr double kTolerance = 1e-6;

  RigidPose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  // Throws std::invalid_argument if `rotation` is not a proper rotation within kTolerance.
  RigidPose(const Mat3& rotation, const Vec3& translation);

  static RigidPose identity() { return {}; }
  static RigidPose from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation);
  static RigidPose translation_only(const Vec3& t) { return RigidPose(Mat3::Identity(), t); }
  // Projects an approximately orthonormal matrix onto SO(3) before construction.
  static RigidPose orthonormalized(const Mat3& rotation, const Vec3& translation);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 rotate(const Vec3& v) const { return rotation_ * v; }
  RigidPose inverse() const;
  RigidPose operator*(const RigidPose& rhs) const;

  double rotation_angle_deg() const;
  bool approx_equal(const RigidPose& other, double tol) const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

bool is_rotation(const Mat3& r, double tol = RigidPose::kTolerance);

// Angle of the relative rotation between two poses, in degrees.
double rotation_error_deg(const RigidPose& a, const RigidPose& b);
double translation_error(const RigidPose& a, const RigidPose& b);

/// 2|A∩B| / (|A|+|B|). Two empty masks score 1.0.
/// Throws std::invalid_argument on a dimension mismatch.
double dice_score(const SegmentationVolume& a, const SegmentationVolume& b);

}  // namespace echofusion
