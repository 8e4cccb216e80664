#include "echofusion/core_types.hpp"

#include "sampling.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace echofusion {

namespace {

template <typename T>
T saturate(double v) {
  if constexpr (std::is_floating_point_v<T>) {
    return static_cast<T>(v);
  } else {
    const double r = std::round(v);
    const double lo = std::numeric_limits<T>::min(), hi = std::numeric_limits<T>::max();
    return static_cast<T>(std::clamp(r, lo, hi));
  }
}

}  // namespace

std::size_t element_size(ElementKind kind) {
  switch (kind) {
    case ElementKind::UInt8: return 1;
    case ElementKind::Int16: return 2;
    case ElementKind::Float32: return 4;
  }
  return 0;
}

VoxelVolume::VoxelVolume(Index3 dims, Vec3 spacing, Vec3 origin, ElementKind kind)
    : dims_(dims), spacing_(spacing), origin_(origin) {
  for (int d : dims_)
    if (d <= 0) throw std::invalid_argument("volume dimensions must be positive");
  for (int i = 0; i < 3; ++i)
    if (!(spacing_[i] > 0.0)) throw std::invalid_argument("volume spacing must be positive");
  switch (kind) {
    case ElementKind::UInt8: data_ = std::vector<std::uint8_t>(size(), 0); break;
    case ElementKind::Int16: data_ = std::vector<std::int16_t>(size(), 0); break;
    case ElementKind::Float32: data_ = std::vector<float>(size(), 0.0f); break;
  }
}

ElementKind VoxelVolume::kind() const {
  switch (data_.index()) {
    case 0: return ElementKind::UInt8;
    case 1: return ElementKind::Int16;
    default: return ElementKind::Float32;
  }
}

double VoxelVolume::value(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

void VoxelVolume::set_value(std::size_t i, double v) {
  std::visit(
      [i, v](auto& d) {
        using T = typename std::decay_t<decltype(d)>::value_type;
        d[i] = saturate<T>(v);
      },
      data_);
}

std::optional<double> VoxelVolume::trilinear_sample(const Vec3& world_point) const {
  if (empty()) return std::nullopt;
  const Vec3 idx = world_to_voxel(world_point);
  double out = 0.0;
  const bool ok = std::visit(
      [&](const auto& d) {
        return detail::trilinear_at_index(d.data(), dims_, idx.x(), idx.y(), idx.z(), out);
      },
      data_);
  if (!ok) return std::nullopt;
  return out;
}

std::span<const std::byte> VoxelVolume::bytes() const {
  return std::visit([](const auto& d) { return std::as_bytes(std::span(d)); }, data_);
}

std::span<std::byte> VoxelVolume::bytes() {
  return std::visit([](auto& d) { return std::as_writable_bytes(std::span(d)); }, data_);
}

SegmentationVolume::SegmentationVolume(Index3 dims, Vec3 spacing, Vec3 origin)
    : vol_(dims, spacing, origin, ElementKind::UInt8) {}

SegmentationVolume::SegmentationVolume(VoxelVolume vol) : vol_(std::move(vol)) {
  if (vol_.kind() != ElementKind::UInt8)
    throw std::invalid_argument("segmentation must have uint8 elements");
  for (auto v : vol_.u8())
    if (v > 1) throw std::invalid_argument("segmentation values must be 0 or 1");
}

std::size_t SegmentationVolume::count() const {
  return static_cast<std::size_t>(std::count(data().begin(), data().end(), std::uint8_t{1}));
}

bool is_rotation(const Mat3& r, double tol) {
  const Mat3 rtr = r.transpose() * r;
  if (((rtr - Mat3::Identity()).cwiseAbs().array() > tol).any()) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

RigidPose::RigidPose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_rotation(rotation_)) throw std::invalid_argument("rotation is not orthonormal");
  if (!translation_.allFinite()) throw std::invalid_argument("translation is not finite");
}

RigidPose RigidPose::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation) {
  if (angle_rad == 0.0 || axis.norm() == 0.0) return RigidPose(Mat3::Identity(), translation);
  return RigidPose(Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix(),
                   translation);
}

RigidPose RigidPose::orthonormalized(const Mat3& rotation, const Vec3& translation) {
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return RigidPose(r, translation);
}

RigidPose RigidPose::inverse() const {
  RigidPose out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

RigidPose RigidPose::operator*(const RigidPose& rhs) const {
  RigidPose out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

double RigidPose::rotation_angle_deg() const {
  const double c = std::clamp((rotation_.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

bool RigidPose::approx_equal(const RigidPose& other, double tol) const {
  return ((rotation_ - other.rotation_).cwiseAbs().array() <= tol).all() &&
         ((translation_ - other.translation_).cwiseAbs().array() <= tol).all();
}

double rotation_error_deg(const RigidPose& a, const RigidPose& b) {
  return (a.inverse() * b).rotation_angle_deg();
}

double translation_error(const RigidPose& a, const RigidPose& b) {
  return (a.translation() - b.translation()).norm();
}

double dice_score(const SegmentationVolume& a, const SegmentationVolume& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("dice_score: dimension mismatch");
  std::size_t na = 0, nb = 0, both = 0;
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    na += da[i];
    nb += db[i];
    both += da[i] & db[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

}  // namespace echofusion
