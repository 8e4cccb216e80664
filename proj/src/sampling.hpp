#pragma once

#include "echofusion/core_types.hpp"

#include <cmath>

namespace echofusion::detail {

// Trilinear interpolation at a fractional voxel index. Returns false when any
// corner falls outside the grid.
template <typename T>
inline bool trilinear_at_index(const T* data, const Index3& dims, double fx, double fy, double fz,
                               double& out) {
  const double flx = std::floor(fx), fly = std::floor(fy), flz = std::floor(fz);
  const int x0 = static_cast<int>(flx), y0 = static_cast<int>(fly), z0 = static_cast<int>(flz);
  if (x0 < 0 || y0 < 0 || z0 < 0) return false;
  // A sample exactly on the last plane uses that plane alone.
  const int x1 = (fx == flx) ? x0 : x0 + 1;
  const int y1 = (fy == fly) ? y0 : y0 + 1;
  const int z1 = (fz == flz) ? z0 : z0 + 1;
  if (x1 >= dims[0] || y1 >= dims[1] || z1 >= dims[2]) return false;
  const double ax = fx - flx, ay = fy - fly, az = fz - flz;
  const std::size_t sx = 1, sy = static_cast<std::size_t>(dims[0]),
                    sz = static_cast<std::size_t>(dims[0]) * dims[1];
  const std::size_t dx = (x1 - x0) * sx, dy = (y1 - y0) * sy, dz = (z1 - z0) * sz;
  const T* p = data + static_cast<std::size_t>(z0) * sz + static_cast<std::size_t>(y0) * sy + x0;
  const double c00 = p[0] + ax * (double(p[dx]) - double(p[0]));
  const double c10 = p[dy] + ax * (double(p[dy + dx]) - double(p[dy]));
  const double c01 = p[dz] + ax * (double(p[dz + dx]) - double(p[dz]));
  const double c11 = p[dz + dy] + ax * (double(p[dz + dy + dx]) - double(p[dz + dy]));
  const double c0 = c00 + ay * (c10 - c00);
  const double c1 = c01 + ay * (c11 - c01);
  out = c0 + az * (c1 - c0);
  return true;
}

}  // namespace echofusion::detail
