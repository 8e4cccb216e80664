#include "echofusion/sector_geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

namespace echofusion {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

BinaryImage dilate_or_erode(const BinaryImage& in, int kernel, bool dilate) {
  const int lo = kernel / 2;
  const int hi = kernel - 1 - lo;
  // Outside the image counts as background for dilation and foreground for erosion.
  const std::uint8_t outside = dilate ? 0 : 1;
  BinaryImage tmp(in.width, in.height);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      std::uint8_t acc = dilate ? 0 : 1;
      for (int k = -lo; k <= hi; ++k) {
        const int cc = c + k;
        const std::uint8_t v = (cc >= 0 && cc < in.width) ? in(cc, r) : outside;
        acc = dilate ? std::max(acc, v) : std::min(acc, v);
      }
      tmp(c, r) = acc;
    }
  BinaryImage out(in.width, in.height);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      std::uint8_t acc = dilate ? 0 : 1;
      for (int k = -lo; k <= hi; ++k) {
        const int rr = r + k;
        const std::uint8_t v = (rr >= 0 && rr < in.height) ? tmp(c, rr) : outside;
        acc = dilate ? std::max(acc, v) : std::min(acc, v);
      }
      out(c, r) = acc;
    }
  return out;
}

GrayImage gaussian_blur(const GrayImage& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
  GrayImage tmp(in.width, in.height);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in(clampi(c + i, in.width), r);
      tmp(c, r) = static_cast<float>(acc);
    }
  GrayImage out(in.width, in.height);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(c, clampi(r + i, in.height));
      out(c, r) = static_cast<float>(acc);
    }
  return out;
}

double angular_separation_deg(double a, double b) {
  double d = std::fmod(std::abs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

// Normalizes to angle in [0, 180) by flipping the normal when needed.
LineParams canonical(double angle_deg, double offset) {
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0.0) a += 360.0;
  if (a >= 180.0) {
    a -= 180.0;
    offset = -offset;
  }
  LineParams l;
  l.angle_deg = a;
  l.offset = offset;
  return l;
}

LineParams refine_line(const LineParams& line, const LineParams& other,
                       const std::vector<Eigen::Vector2d>& pts, double band) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  std::vector<Eigen::Vector2d> sel;
  for (const auto& p : pts) {
    const double d = std::abs(line.distance(p));
    if (d <= band && d < std::abs(other.distance(p))) sel.push_back(p);
  }
  if (sel.size() < 3) return line;
  for (const auto& p : sel) mean += p;
  mean /= static_cast<double>(sel.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : sel) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  Eigen::Vector2d n = es.eigenvectors().col(0);  // smallest eigenvalue: line normal
  if (n.dot(line.normal()) < 0.0) n = -n;
  LineParams out = canonical(std::atan2(n.y(), n.x()) / kDeg, n.dot(mean));
  out.votes = line.votes;
  return out;
}

}  // namespace

LineParams LineParams::through(const Eigen::Vector2d& point, const Eigen::Vector2d& direction) {
  const Eigen::Vector2d n(-direction.y(), direction.x());
  const Eigen::Vector2d nn = n.normalized();
  return canonical(std::atan2(nn.y(), nn.x()) / kDeg, nn.dot(point));
}

Eigen::Vector2d LineParams::normal() const {
  return {std::cos(angle_deg * kDeg), std::sin(angle_deg * kDeg)};
}

Eigen::Vector2d LineParams::direction_into_sector() const {
  Eigen::Vector2d d(-std::sin(angle_deg * kDeg), std::cos(angle_deg * kDeg));
  if (d.y() < -1e-12 || (std::abs(d.y()) <= 1e-12 && d.x() < 0.0)) d = -d;
  return d;
}

BinaryImage morphological_close(const BinaryImage& mask, int kernel) {
  if (kernel <= 1) return mask;
  // Closing on a background-padded canvas so the image border does not act as foreground.
  const int pad = kernel;
  BinaryImage padded(mask.width + 2 * pad, mask.height + 2 * pad, 0);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) padded(c + pad, r + pad) = mask(c, r);
  const BinaryImage closed = dilate_or_erode(dilate_or_erode(padded, kernel, true), kernel, false);
  BinaryImage out(mask.width, mask.height);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) out(c, r) = closed(c + pad, r + pad);
  return out;
}

BinaryImage fill_holes(const BinaryImage& mask) {
  BinaryImage reached(mask.width, mask.height, 0);
  std::deque<std::pair<int, int>> queue;
  auto seed = [&](int c, int r) {
    if (!mask(c, r) && !reached(c, r)) {
      reached(c, r) = 1;
      queue.emplace_back(c, r);
    }
  };
  for (int c = 0; c < mask.width; ++c) {
    seed(c, 0);
    seed(c, mask.height - 1);
  }
  for (int r = 0; r < mask.height; ++r) {
    seed(0, r);
    seed(mask.width - 1, r);
  }
  constexpr int dc[4] = {1, -1, 0, 0};
  constexpr int dr[4] = {0, 0, 1, -1};
  while (!queue.empty()) {
    auto [c, r] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      const int nc = c + dc[k], nr = r + dr[k];
      if (mask.contains(nc, nr)) seed(nc, nr);
    }
  }
  BinaryImage out(mask.width, mask.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = reached.data[i] ? 0 : 1;
  return out;
}

BinaryImage extract_sector_mask(const GrayImage& slice, const SectorConfig& cfg) {
  BinaryImage mask(slice.width, slice.height);
  bool any = false;
  for (std::size_t i = 0; i < slice.data.size(); ++i) {
    mask.data[i] = slice.data[i] > cfg.threshold ? 1 : 0;
    any = any || mask.data[i];
  }
  if (!any) throw SectorError("no sector found");
  return fill_holes(morphological_close(mask, cfg.closing_kernel));
}

BinaryImage canny_edges(const BinaryImage& mask, const SectorConfig& cfg) {
  const int w = mask.width, h = mask.height;
  BinaryImage edges(w, h, 0);
  if (w < 3 || h < 3) return edges;

  GrayImage f(w, h);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = mask.data[i] ? 1.0f : 0.0f;
  const GrayImage s = gaussian_blur(f, cfg.canny_sigma);

  auto px = [&](int c, int r) { return static_cast<double>(s(std::clamp(c, 0, w - 1), std::clamp(r, 0, h - 1))); };
  std::vector<double> gx(std::size_t(w) * h), gy(gx.size()), mag(gx.size());
  double max_mag = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double sx = (px(c + 1, r - 1) + 2 * px(c + 1, r) + px(c + 1, r + 1)) -
                        (px(c - 1, r - 1) + 2 * px(c - 1, r) + px(c - 1, r + 1));
      const double sy = (px(c - 1, r + 1) + 2 * px(c, r + 1) + px(c + 1, r + 1)) -
                        (px(c - 1, r - 1) + 2 * px(c, r - 1) + px(c + 1, r - 1));
      const std::size_t i = std::size_t(r) * w + c;
      gx[i] = sx;
      gy[i] = sy;
      mag[i] = std::hypot(sx, sy);
      max_mag = std::max(max_mag, mag[i]);
    }
  if (max_mag <= 1e-9) return edges;

  // Non-maximum suppression along the quantized gradient direction.
  std::vector<double> thin(mag.size(), 0.0);
  for (int r = 1; r < h - 1; ++r)
    for (int c = 1; c < w - 1; ++c) {
      const std::size_t i = std::size_t(r) * w + c;
      if (mag[i] <= 0.0) continue;
      double a = std::atan2(gy[i], gx[i]) / kDeg;
      if (a < 0.0) a += 180.0;
      int dc = 0, dr = 0;
      if (a < 22.5 || a >= 157.5) { dc = 1; dr = 0; }
      else if (a < 67.5) { dc = 1; dr = 1; }
      else if (a < 112.5) { dc = 0; dr = 1; }
      else { dc = -1; dr = 1; }
      const double m1 = mag[std::size_t(r + dr) * w + (c + dc)];
      const double m2 = mag[std::size_t(r - dr) * w + (c - dc)];
      if (mag[i] > m1 && mag[i] >= m2) thin[i] = mag[i];
    }

  const double high = cfg.canny_high_ratio * max_mag;
  const double low = cfg.canny_low_ratio * max_mag;
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < thin.size(); ++i)
    if (thin[i] >= high) {
      edges.data[i] = 1;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int r = static_cast<int>(i / w), c = static_cast<int>(i % w);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int nc = c + dc, nr = r + dr;
        if (!edges.contains(nc, nr)) continue;
        const std::size_t j = std::size_t(nr) * w + nc;
        if (!edges.data[j] && thin[j] >= low) {
          edges.data[j] = 1;
          queue.push_back(j);
        }
      }
  }
  return edges;
}

std::array<LineParams, 2> hough_sector_lines(const BinaryImage& edges, const SectorConfig& cfg) {
  std::vector<Eigen::Vector2d> pts;
  for (int r = 0; r < edges.height; ++r)
    for (int c = 0; c < edges.width; ++c)
      if (edges(c, r)) pts.emplace_back(c, r);
  if (pts.empty()) throw SectorError("sector lines not found");

  const int n_theta = static_cast<int>(std::lround(180.0 / cfg.hough_angle_step_deg));
  const double max_rho = std::ceil(std::hypot(edges.width, edges.height));
  const int n_rho = static_cast<int>(std::floor(2.0 * max_rho / cfg.hough_offset_step)) + 1;
  std::vector<double> cs(n_theta), sn(n_theta);
  for (int t = 0; t < n_theta; ++t) {
    cs[t] = std::cos(t * cfg.hough_angle_step_deg * kDeg);
    sn[t] = std::sin(t * cfg.hough_angle_step_deg * kDeg);
  }
  std::vector<int> acc(std::size_t(n_theta) * n_rho, 0);
  for (const auto& p : pts)
    for (int t = 0; t < n_theta; ++t) {
      const double rho = p.x() * cs[t] + p.y() * sn[t];
      const int j = static_cast<int>(std::lround((rho + max_rho) / cfg.hough_offset_step));
      if (j >= 0 && j < n_rho) ++acc[std::size_t(t) * n_rho + j];
    }

  // Neighbour lookup with wrap-around: theta + 180 is theta with negated offset.
  auto cell = [&](int t, int j) -> std::pair<int, std::size_t> {
    if (t < 0 || t >= n_theta) {
      t = (t + n_theta) % n_theta;
      j = (n_rho - 1) - j;
    }
    if (j < 0 || j >= n_rho) return {-1, 0};
    const std::size_t k = std::size_t(t) * n_rho + j;
    return {acc[k], k};
  };
  const int wt = std::max(1, static_cast<int>(std::lround(0.5 * cfg.hough_nms_angle_deg / cfg.hough_angle_step_deg)));
  const int wr = std::max(1, static_cast<int>(std::lround(0.5 * cfg.hough_nms_offset / cfg.hough_offset_step)));

  struct Peak {
    int votes;
    int t;
    int j;
  };
  std::vector<Peak> peaks;
  for (int t = 0; t < n_theta; ++t)
    for (int j = 0; j < n_rho; ++j) {
      const std::size_t k = std::size_t(t) * n_rho + j;
      const int v = acc[k];
      if (v < cfg.hough_min_votes) continue;
      bool is_peak = true;
      for (int dt = -wt; dt <= wt && is_peak; ++dt)
        for (int dj = -wr; dj <= wr; ++dj) {
          if (dt == 0 && dj == 0) continue;
          auto [nv, nk] = cell(t + dt, j + dj);
          if (nv > v || (nv == v && nk < k)) {
            is_peak = false;
            break;
          }
        }
      if (is_peak) peaks.push_back({v, t, j});
    }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.votes != b.votes) return a.votes > b.votes;
    if (a.t != b.t) return a.t < b.t;
    return a.j < b.j;
  });
  if (peaks.empty()) throw SectorError("sector lines not found");

  auto to_line = [&](const Peak& p) {
    LineParams l;
    l.angle_deg = p.t * cfg.hough_angle_step_deg;
    l.offset = p.j * cfg.hough_offset_step - max_rho;
    l.votes = p.votes;
    return l;
  };
  const LineParams first = to_line(peaks.front());
  const double min_votes = std::max<double>(cfg.hough_min_votes, cfg.hough_min_vote_ratio * first.votes);
  for (std::size_t i = 1; i < peaks.size(); ++i) {
    if (peaks[i].votes < min_votes) break;
    const LineParams second = to_line(peaks[i]);
    if (angular_separation_deg(first.angle_deg, second.angle_deg) < cfg.min_line_separation_deg)
      continue;
    if (cfg.line_refine_band <= 0.0) return {first, second};
    return {refine_line(first, second, pts, cfg.line_refine_band),
            refine_line(second, first, pts, cfg.line_refine_band)};
  }
  throw SectorError("sector lines not found");
}

LineIntersection line_intersection_angle(const LineParams& l1, const LineParams& l2) {
  if (angular_separation_deg(l1.angle_deg, l2.angle_deg) <= 0.1) throw SectorError("parallel flanks");
  Eigen::Matrix2d a;
  a.row(0) = l1.normal().transpose();
  a.row(1) = l2.normal().transpose();
  const Eigen::Vector2d b(l1.offset, l2.offset);
  LineIntersection out;
  out.point = a.inverse() * b;
  const double c = std::clamp(l1.direction_into_sector().dot(l2.direction_into_sector()), -1.0, 1.0);
  out.angle_deg = std::acos(c) / kDeg;
  return out;
}

LineParams line_to_frame(const LineParams& pixel_line, const SliceFrame& frame) {
  const Eigen::Vector2d m = pixel_line.normal().cwiseQuotient(frame.spacing);
  const double norm = m.norm();
  LineParams out = canonical(std::atan2(m.y(), m.x()) / kDeg, (pixel_line.offset + m.dot(frame.origin)) / norm);
  out.votes = pixel_line.votes;
  return out;
}

SectorFit2D fit_sector(const GrayImage& slice, const SliceFrame& frame, const SectorConfig& cfg) {
  const BinaryImage mask = extract_sector_mask(slice, cfg);
  const BinaryImage edges = canny_edges(mask, cfg);
  const auto lines = hough_sector_lines(edges, cfg);
  SectorFit2D fit;
  fit.lines = {line_to_frame(lines[0], frame), line_to_frame(lines[1], frame)};
  const LineIntersection x = line_intersection_angle(fit.lines[0], fit.lines[1]);
  fit.apex = x.point;
  fit.opening_angle_deg = x.angle_deg;
  return fit;
}

GrayImage central_slice_xy(const VoxelVolume& vol, SliceFrame* frame) {
  const auto& d = vol.dims();
  const int z = d[2] / 2;
  GrayImage img(d[0], d[1]);
  for (int y = 0; y < d[1]; ++y)
    for (int x = 0; x < d[0]; ++x) img(x, y) = static_cast<float>(vol.at(x, y, z));
  if (frame) {
    frame->origin = {vol.origin().x(), vol.origin().y()};
    frame->spacing = {vol.spacing().x(), vol.spacing().y()};
  }
  return img;
}

GrayImage central_slice_yz(const VoxelVolume& vol, SliceFrame* frame) {
  const auto& d = vol.dims();
  const int x = d[0] / 2;
  GrayImage img(d[2], d[1]);
  for (int y = 0; y < d[1]; ++y)
    for (int z = 0; z < d[2]; ++z) img(z, y) = static_cast<float>(vol.at(x, y, z));
  if (frame) {
    frame->origin = {vol.origin().z(), vol.origin().y()};
    frame->spacing = {vol.spacing().z(), vol.spacing().y()};
  }
  return img;
}

PlacementEstimate estimate_placement_detailed(const VoxelVolume& vol, const SectorConfig& cfg) {
  PlacementEstimate est;
  SliceFrame fyz, fxy;
  const GrayImage syz = central_slice_yz(vol, &fyz);
  const GrayImage sxy = central_slice_xy(vol, &fxy);
  est.yz = fit_sector(syz, fyz, cfg);
  est.xy = fit_sector(sxy, fxy, cfg);
  const double dyz = -est.yz.apex.y();
  const double dxy = -est.xy.apex.y();
  est.placement.distance = std::min(dyz, dxy);
  est.placement.view_angle_deg = std::max(est.yz.opening_angle_deg, est.xy.opening_angle_deg);
  if (!(est.placement.distance > 0.0)) throw SectorError("sector apex is not behind the probe plane");
  if (std::abs(est.yz.opening_angle_deg - est.xy.opening_angle_deg) > cfg.disagreement_warn_deg)
    est.warnings.push_back("central-slice sector fits disagree by more than " +
                           std::to_string(cfg.disagreement_warn_deg) + " degrees");
  return est;
}

CameraPlacement estimate_camera_placement(const VoxelVolume& vol, const SectorConfig& cfg) {
  return estimate_placement_detailed(vol, cfg).placement;
}

}  // namespace echofusion
