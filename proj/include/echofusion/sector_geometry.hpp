#pragma once

#include "echofusion/core_types.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace echofusion {

/// Row-major 2D image; (col, row) addresses data[row * width + col].
template <typename T>
struct Image2D {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image2D() = default;
  Image2D(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  T& operator()(int col, int row) { return data[std::size_t(row) * width + col]; }
  const T& operator()(int col, int row) const { return data[std::size_t(row) * width + col]; }
  bool contains(int col, int row) const {
    return col >= 0 && row >= 0 && col < width && row < height;
  }
  friend bool operator==(const Image2D&, const Image2D&) = default;
};

using GrayImage = Image2D<float>;
using BinaryImage = Image2D<std::uint8_t>;

class SectorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SectorConfig {
  double threshold = 1.0;
  int closing_kernel = 5;
  double canny_sigma = 1.4;
  double canny_low_ratio = 0.1;
  double canny_high_ratio = 0.3;
  double hough_angle_step_deg = 0.5;
  double hough_offset_step = 1.0;
  double hough_nms_angle_deg = 5.0;
  double hough_nms_offset = 5.0;
  double min_line_separation_deg = 10.0;
  int hough_min_votes = 20;
  // Second line must reach this fraction of the strongest line's votes.
  double hough_min_vote_ratio = 0.2;
  // Least-squares refit of each peak to the edge pixels within this band (px); 0 disables.
  double line_refine_band = 2.0;
  double disagreement_warn_deg = 30.0;
};

/// Line in normal form: x cos(angle) + y sin(angle) = offset.
struct LineParams {
  double angle_deg = 0.0;
  double offset = 0.0;
  int votes = 0;

  static LineParams through(const Eigen::Vector2d& point, const Eigen::Vector2d& direction);
  Eigen::Vector2d normal() const;
  // Unit direction with non-negative second coordinate (the beam axis).
  Eigen::Vector2d direction_into_sector() const;
  double distance(const Eigen::Vector2d& p) const { return normal().dot(p) - offset; }
};

struct LineIntersection {
  Eigen::Vector2d point;
  double angle_deg = 0.0;
};

/// Sector fit in slice millimetres. The second coordinate is always world y
/// (the beam axis); the first is x for the xy slice and z for the yz slice.
struct SectorFit2D {
  Eigen::Vector2d apex{0.0, 0.0};
  double opening_angle_deg = 0.0;
  std::array<LineParams, 2> lines{};
};

struct CameraPlacement {
  double distance = 0.0;  // camera sits at (0, -distance, 0)
  double view_angle_deg = 0.0;
};

/// Pixel-to-millimetre mapping of a slice: mm = origin + pixel * spacing.
struct SliceFrame {
  Eigen::Vector2d origin{0.0, 0.0};
  Eigen::Vector2d spacing{1.0, 1.0};
};

struct PlacementEstimate {
  CameraPlacement placement;
  SectorFit2D yz;
  SectorFit2D xy;
  std::vector<std::string> warnings;
};

// Threshold, closing with a square kernel, then hole filling.
// Throws SectorError("no sector found") when no pixel exceeds the threshold.
BinaryImage extract_sector_mask(const GrayImage& slice, const SectorConfig& cfg = {});

BinaryImage morphological_close(const BinaryImage& mask, int kernel);
BinaryImage fill_holes(const BinaryImage& mask);

BinaryImage canny_edges(const BinaryImage& mask, const SectorConfig& cfg = {});

// Two strongest lines at least min_line_separation_deg apart, in pixel coordinates.
// Throws SectorError("sector lines not found").
std::array<LineParams, 2> hough_sector_lines(const BinaryImage& edges, const SectorConfig& cfg = {});

// Throws SectorError("parallel flanks") when the lines are within 0.1 degrees.
LineIntersection line_intersection_angle(const LineParams& l1, const LineParams& l2);

LineParams line_to_frame(const LineParams& pixel_line, const SliceFrame& frame);

// Full mask -> edges -> lines -> intersection chain on one slice.
SectorFit2D fit_sector(const GrayImage& slice, const SliceFrame& frame, const SectorConfig& cfg = {});

// Central planes at floor(dims/2): xy slice spans (x, y), yz slice spans (z, y).
GrayImage central_slice_xy(const VoxelVolume& vol, SliceFrame* frame = nullptr);
GrayImage central_slice_yz(const VoxelVolume& vol, SliceFrame* frame = nullptr);

PlacementEstimate estimate_placement_detailed(const VoxelVolume& vol, const SectorConfig& cfg = {});
// Distance is the nearer of the two apexes, view angle the wider of the two openings.
CameraPlacement estimate_camera_placement(const VoxelVolume& vol, const SectorConfig& cfg = {});

}  // namespace echofusion
